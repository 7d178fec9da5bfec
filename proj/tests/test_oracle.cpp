#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/oracle.hpp"
#include "mfb/scenarios.hpp"

#include <cmath>
#include <random>

using namespace mfb;

namespace {

Vec s1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

// Plain bisection on the monotone map u -> sign(u)(e^|u| - 1) + u + w.
double bisect_u(double w)
{
    auto g = [w](double u) { return std::copysign(std::expm1(std::abs(u)), u) + u + w; };
    double lo = -std::abs(w) - 1.0, hi = std::abs(w) + 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

// int_0^1 E sin^2(sqrt(t) Z) dt by composite Simpson in t and z.
double quadrature_cost()
{
    const int nt = 200, nz = 400;
    const double zmax = 10.0, pi = std::acos(-1.0);
    auto simpson_w = [](int i, int n) { return (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
    double total = 0.0;
    for (int a = 0; a <= nt; ++a) {
        const double t = static_cast<double>(a) / nt;
        double inner = 0.0;
        for (int b = 0; b <= nz; ++b) {
            const double z = -zmax + 2.0 * zmax * b / nz;
            const double s = std::sin(std::sqrt(t) * z);
            inner += simpson_w(b, nz) * s * s * std::exp(-0.5 * z * z) / std::sqrt(2.0 * pi);
        }
        inner *= (2.0 * zmax / nz) / 3.0;
        total += simpson_w(a, nt) * inner;
    }
    return total * (1.0 / nt) / 3.0;
}

LQICProblemData inert_lqic()
{
    LQICProblemData lq;
    auto& d = lq.dyn;
    for (int i = 0; i < 2; ++i) {
        d.A[i] = d.Abar[i] = d.B[i] = d.Bbar[i] = d.C[i] = d.D[i] = m1(0.0);
        lq.M[i] = m1(1.0);
        lq.G[i] = ParticleMatrix(m1(0.0));
        lq.Q[i] = m1(0.0);
        lq.R[i] = m1(1.0);
    }
    d.H = m1(1.0);
    d.x0 = s1(0.0);
    lq.U0 = ConvexSet::full_space(1);
    lq.U = TimeSet(ConvexSet::full_space(1));
    return lq;
}

}  // namespace

TEST_CASE("implicit control against bisection")
{
    CHECK(implicit_u(-0.5) == doctest::Approx(bisect_u(-0.5)).epsilon(1e-12));
    CHECK(implicit_u(-0.5) == doctest::Approx(0.2351).epsilon(1e-3));
    CHECK(implicit_u(0.0) == 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 500; ++i) {
        const double w = u(rng);
        CHECK(std::abs(implicit_u(w) - bisect_u(w)) < 1e-12);
    }
}

TEST_CASE("implicit control is odd and decreasing")
{
    double prev = implicit_u(-3.0);
    for (double w = -2.9; w <= 3.0; w += 0.1) {
        CHECK(implicit_u(-w) == doctest::Approx(-implicit_u(w)).epsilon(1e-14));
        const double cur = implicit_u(w);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("closed-form reference: structural relations")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 32), 500, 1, 2);
    const OracleSolution o = example_reference(noise);
    CHECK(o.max_residual < 1e-12);
    CHECK(o.xi[0](0) == 0.0);
    for (std::size_t k = 0; k < 32; ++k)
        for (std::size_t m = 0; m < 500; m += 7) {
            const double s = std::sin(noise.path(m, k)(0));
            CHECK(o.V[0].X(m, k)(0) == o.V[0].Y(m, k)(0));
            CHECK(o.V[1].X(m, k)(0) == o.V[0].X(m, k)(0));
            CHECK(o.u[0](m, k)(0) == doctest::Approx(bisect_u(s)).epsilon(1e-12));
            CHECK(o.V[0].Z(m, k)(0) == doctest::Approx(o.u[0](m, k)(0) + s).epsilon(1e-14));
            CHECK(o.V[0].X(m, k + 1)(0) ==
                  doctest::Approx(o.V[0].X(m, k)(0) + o.V[0].Z(m, k)(0) * noise.increments(m, k)(0)));
        }
}

TEST_CASE("closed-form reference: terminal mean within the Monte Carlo band")
{
    const std::size_t M = 20000;
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 32), M, 1, 3);
    const OracleSolution o = example_reference(noise);
    const auto XT = o.V[0].X.at(32);
    const double mean = XT.sum() / M;
    const double sd = std::sqrt((XT.array() - mean).square().sum() / (M - 1));
    CHECK(std::abs(mean) <= 5.0 * sd / std::sqrt(static_cast<double>(M)));
}

TEST_CASE("zero-control cost against quadrature")
{
    const double q = quadrature_cost();
    CHECK(ito_isometry_cost() == doctest::Approx(q).epsilon(1e-8));
    CHECK(ito_isometry_cost() == doctest::Approx(0.283834).epsilon(1e-5));
    CHECK(ito_isometry_cost() > 0.25);
}

TEST_CASE("zero-control cost by simulation")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 64), 20000, 1, 4);
    const LCProblemData lc = paper_example_lc();
    const ControlQuartet q = zero_controls(lc.dyn, noise);
    const CostBreakdown c = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid);
    CHECK(std::abs(c.total - ito_isometry_cost()) < 5.0 * c.std_error() + 0.01);
}

TEST_CASE("brute force on an inert problem finds zero controls")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 32, 1, 5);
    const BruteForceResult r = brute_force_lqic(inert_lqic(), noise);
    CHECK(r.converged);
    CHECK(r.cost.total == doctest::Approx(0.0).epsilon(1e-12));
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(r.q.xi[i](0)) < 1e-8);
        CHECK(r.q.u[i].at(2).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("brute force pins controls to the nearest constraint")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 32, 1, 6);
    LQICProblemData lq = inert_lqic();
    lq.U = TimeSet(ConvexSet::box(s1(1.0), s1(2.0)));
    lq.U0 = ConvexSet::box(s1(-3.0), s1(-1.0));
    const BruteForceResult r = brute_force_lqic(lq, noise);
    CHECK(r.converged);
    for (int i = 0; i < 2; ++i) {
        CHECK(r.q.xi[i](0) == doctest::Approx(-1.0));
        for (std::size_t k = 0; k < 4; ++k)
            CHECK((r.q.u[i].at(k).array() - 1.0).abs().maxCoeff() < 1e-8);
    }
    CHECK(r.cost.total == doctest::Approx(1.0 + 1.0));
}

TEST_CASE("brute force rejects non-box process constraints")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 2), 8, 1, 7);
    LQICProblemData lq = inert_lqic();
    lq.U = TimeSet(ConvexSet::ball(s1(0.0), 1.0));
    CHECK_THROWS_AS(brute_force_lqic(lq, noise), InvalidArgument);
}

TEST_CASE("brute-force cost history is non-increasing")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 128, 1, 8);
    BruteForceOptions opt = lqic_crosscheck_brute_force();
    const BruteForceResult r = brute_force_lqic(lqic_crosscheck_problem(), noise, opt);
    CHECK(r.converged);
    for (std::size_t j = 1; j < r.cost_history.size(); ++j)
        CHECK(r.cost_history[j] <= r.cost_history[j - 1] + 1e-14);
}

TEST_CASE("pathwise gradient against central differences")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 16, 1, 9);
    const LQICProblemData lq = lqic_crosscheck_problem();
    ControlQuartet q = zero_controls(lq.dyn, noise);
    q.xi = {s1(0.3), s1(0.1)};
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int i = 0; i < 2; ++i)
        for (double& v : q.u[i].data())
            v = u(rng);
    auto J = [&](const ControlQuartet& c) { return cost_lqic(lq, c, simulate_state(lq.dyn, c, noise), noise.grid).total; };
    const CostGradient g = lqic_gradient(lq, q, simulate_state(lq.dyn, q, noise), noise);

    const double h = 1e-6, w = noise.grid.dt / 16.0;
    for (int trial = 0; trial < 5; ++trial) {
        ControlQuartet dir = zero_controls(lq.dyn, noise);
        double predicted = 0.0;
        for (int i = 0; i < 2; ++i) {
            dir.xi[i](0) = u(rng);
            predicted += g.xi[i].dot(dir.xi[i]);
            for (std::size_t j = 0; j < dir.u[i].data().size(); ++j) {
                dir.u[i].data()[j] = u(rng);
                predicted += w * g.u[i].data()[j] * dir.u[i].data()[j];
            }
        }
        ControlQuartet plus = q, minus = q;
        for (int i = 0; i < 2; ++i) {
            plus.xi[i] += h * dir.xi[i];
            minus.xi[i] -= h * dir.xi[i];
            plus.u[i] += h * dir.u[i];
            minus.u[i] += -h * dir.u[i];
        }
        const double fd = (J(plus) - J(minus)) / (2.0 * h);
        CHECK(fd == doctest::Approx(predicted).epsilon(1e-6));
    }
}

TEST_CASE("history features")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 10, 1, 11);
    CHECK(history_features(noise, 0, 2).cols() == 1);
    const Mat F = history_features(noise, 3, 1);
    CHECK(F.cols() == 4);
    CHECK(F(4, 2) == doctest::Approx(noise.increments(4, 1)(0) / std::sqrt(0.25)));
}
