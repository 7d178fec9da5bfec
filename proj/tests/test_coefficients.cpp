#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/coefficients.hpp"
#include "mfb/scenarios.hpp"

#include <cmath>
#include <random>

using namespace mfb;

namespace {

Vec s1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

PointState point(double mx1, double my1, double mx2, double my2, double x, double y, double z)
{
    return {s1(mx1), s1(my1), s1(mx2), s1(my2), s1(x), s1(y), s1(z)};
}

LQICProblemData plain_lqic()
{
    LQICProblemData lq = lqic_crosscheck_problem();
    for (int i = 0; i < 2; ++i) {
        lq.dyn.D[i] = m1(0.0);
        lq.dyn.C[i] = m1(0.0);
        lq.R[i] = m1(2.0);
    }
    lq.dyn.tau = 0.0;
    lq.U = TimeSet(ConvexSet::box(s1(-1.0), s1(1.0)));
    return lq;
}

}  // namespace

TEST_CASE("base system has zero terminal map and zero generator drift")
{
    const CoefficientSet lc = lc_hamiltonian(paper_example_lc());
    REQUIRE(lc.structural);
    const CoefficientSet c0 = base_coefficients(*lc.structural);
    const PointContext pc(0.4, s1(0.7));
    for (int i = 0; i < 2; ++i) {
        CHECK(eval_phi(c0, i, pc.ctx, s1(3.0), s1(-2.0))(0) == 0.0);
        const GammaPoint g = eval_gamma(c0, i, pc.ctx, point(1, 2, 3, 4, 5, 6, 7));
        CHECK(g.f(0) == 0.0);
    }
}

TEST_CASE("interpolation endpoints and midpoint")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CoefficientSet c0 = base_coefficients(*c.structural);
    const PointContext pc(0.5, s1(0.2));
    const Vec x1 = s1(2.0), x2 = s1(6.0);
    // terminal map of the example is (x1 + x2)/2 = 4, base is 0
    CHECK(eval_phi(interpolate(c, c0, 1.0), 0, pc.ctx, x1, x2)(0) == doctest::Approx(4.0));
    CHECK(eval_phi(interpolate(c, c0, 0.0), 0, pc.ctx, x1, x2)(0) == 0.0);
    CHECK(eval_phi(interpolate(c, c0, 0.5), 0, pc.ctx, x1, x2)(0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(interpolate(c, c0, 1.5), InvalidArgument);
    CHECK_THROWS_AS(interpolate(c, c0, -0.1), InvalidArgument);
}

TEST_CASE("interpolated terminal map, generator and initial map are affine in alpha")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CoefficientSet c0 = base_coefficients(*c.structural);
    const PointContext pc(0.3, s1(-0.4));
    const PointState s = point(0.1, -0.3, 0.2, 0.5, 1.1, -0.7, 0.9);
    const Vec y1 = s1(0.8), y2 = s1(-1.3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = u(rng);
        const CoefficientSet ca = interpolate(c, c0, a);
        for (int i = 0; i < 2; ++i) {
            const GammaPoint g1 = eval_gamma(c, i, pc.ctx, s), g0 = eval_gamma(c0, i, pc.ctx, s),
                             ga = eval_gamma(ca, i, pc.ctx, s);
            CHECK(std::abs(ga.f(0) - (a * g1.f(0) + (1 - a) * g0.f(0))) < 1e-12);
            CHECK(std::abs(ga.b(0) - (a * g1.b(0) + (1 - a) * g0.b(0))) < 1e-12);
            CHECK(std::abs(ga.sigma(0) - (a * g1.sigma(0) + (1 - a) * g0.sigma(0))) < 1e-12);
            CHECK(std::abs(ca.psi[i](y1, y2)(0) - (a * c.psi[i](y1, y2)(0) + (1 - a) * c0.psi[i](y1, y2)(0))) <
                  1e-12);
        }
    }
}

TEST_CASE("perturbation terms are added after interpolation")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CoefficientSet c0 = base_coefficients(*c.structural);
    PerturbationData p;
    p.xi = {s1(0.25), s1(-0.5)};
    p.zeta[0] = [](const NodeContext&, Eigen::Index b) -> Mat { return Mat::Constant(1, b, 3.0); };
    const CoefficientSet cp = interpolate(c, c0, 1.0, p);
    const PointContext pc(1.0, s1(0.0));
    CHECK(eval_phi(cp, 0, pc.ctx, s1(1.0), s1(1.0))(0) == doctest::Approx(1.0 + 3.0));
    CHECK(cp.psi[1](s1(0.0), s1(0.0))(0) == doctest::Approx(-0.5));
    CHECK(!p.is_zero());
    CHECK(PerturbationData{}.is_zero());
    CHECK(scaled(p, 2.0).xi[1](0) == -1.0);
}

TEST_CASE("example Hamiltonian terminal map")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const PointContext pc(1.0, s1(0.0));
    for (int i = 0; i < 2; ++i)
        CHECK(eval_phi(c, i, pc.ctx, s1(0.6), s1(1.4))(0) == doctest::Approx(1.0));
}

TEST_CASE("example Hamiltonian generator")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const double w = 0.9;
    const PointContext pc(0.5, s1(w));
    const PointState s = point(0.3, -0.2, 0.7, 0.4, 1.5, 2.0, 0.0);
    const GammaPoint g1 = eval_gamma(c, 0, pc.ctx, s), g2 = eval_gamma(c, 1, pc.ctx, s);
    // the only mean coupling runs through the 1e-3 cross term
    CHECK(g1.f(0) == doctest::Approx(-1e-3 * 0.4));
    CHECK(g2.f(0) == doctest::Approx(-1e-3 * -0.2));
    CHECK(g1.b(0) == doctest::Approx(1e-3 * 0.7));
    CHECK(g2.b(0) == doctest::Approx(1e-3 * 0.3));
    // sigma = u + sin w with u solving f4'(u) = -(z + 1e-3 E[Y_i])
    const ConvexFunction f = example_family();
    for (int i = 0; i < 2; ++i) {
        const GammaPoint& g = i == 0 ? g1 : g2;
        const double mean_y = i == 0 ? -0.2 : 0.4;
        const double u = g.sigma(0) - std::sin(w);
        CHECK(f.grad(s1(u))(0) == doctest::Approx(-(0.0 + 1e-3 * mean_y)).epsilon(1e-9));
    }
}

TEST_CASE("example Hamiltonian initial map")
{
    const LCProblemData lc = paper_example_lc();
    const CoefficientSet c = lc_hamiltonian(lc);
    CHECK(c.psi[0](s1(0.0), s1(0.0))(0) == doctest::Approx(0.0));
    const double e1 = std::exp(1.0) - 1.0;
    CHECK(c.psi[0](s1(e1), s1(0.0))(0) == doctest::Approx(-1.0));
    CHECK(c.psi[1](s1(e1), s1(-e1))(0) == doctest::Approx(1.0));
}

TEST_CASE("structural data of the example validates")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    CHECK_NOTHROW(validate(*c.structural));
    StructuralData s = *c.structural;
    s.tau = 1.0;
    CHECK_THROWS_AS(validate(s), InvalidArgument);
}

TEST_CASE("constrained quadratic feedback")
{
    const LQICProblemData lq = plain_lqic();
    const Mat y = m1(6.0), z = m1(0.0);
    CHECK(lqic_feedback(lq, 0, 0.0, y, s1(0.0), z)(0, 0) == doctest::Approx(-1.0));
    CHECK(lqic_feedback(lq, 0, 0.0, m1(1.0), s1(0.0), z)(0, 0) == doctest::Approx(-0.5));

    LQICProblemData pinned = lq;
    pinned.U = TimeSet(ConvexSet::singleton(s1(0.0)));
    CHECK(lqic_feedback(pinned, 1, 0.0, y, s1(0.0), z)(0, 0) == 0.0);

    LQICProblemData free = lq;
    free.U = TimeSet(ConvexSet::full_space(1));
    CHECK(lqic_feedback(free, 0, 0.0, y, s1(0.0), z)(0, 0) == doctest::Approx(-3.0));
}

TEST_CASE("constrained feedback satisfies the variational inequality")
{
    const LQICProblemData lq = plain_lqic();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int k = 0; k < 500; ++k) {
        const double y = u(rng);
        const double a = lqic_feedback(lq, 0, 0.0, m1(y), s1(0.0), m1(0.0))(0, 0);
        CHECK(std::abs(a) <= 1.0 + 1e-14);
        // <R a + B y, v - a> >= 0 for v in [-1, 1]
        for (double v : {-1.0, -0.3, 0.4, 1.0})
            CHECK((2.0 * a + y) * (v - a) >= -1e-12);
    }
}

TEST_CASE("initial controls clamp into U0")
{
    const LQICProblemData lq = lqic_crosscheck_problem();
    const auto xi = lqic_initial_controls(lq, s1(5.0), s1(-10.0));
    CHECK(xi[0](0) == doctest::Approx(-0.2));
    CHECK(xi[1](0) == doctest::Approx(1.0));
    const auto mid = lqic_initial_controls(lq, s1(-0.5), s1(0.4));
    CHECK(mid[0](0) == doctest::Approx(0.5));
    CHECK(mid[1](0) == doctest::Approx(-0.2));
}

TEST_CASE("problem validation names the offending matrix")
{
    LQICProblemData lq = lqic_crosscheck_problem();
    CHECK_NOTHROW(validate(lq));
    lq.R[1] = m1(-1.0);
    try {
        validate(lq);
        FAIL("expected rejection");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("R2") != std::string::npos);
    }
}

TEST_CASE("process fields are shape checked")
{
    const PointContext pc(0.0, s1(0.0));
    ProcessField wrong = [](const NodeContext&, Eigen::Index b) -> Mat { return Mat::Zero(2, b); };
    CHECK_THROWS_AS(field_or_zero(wrong, pc.ctx, 1, 1), InvalidArgument);
    CHECK(field_or_zero({}, pc.ctx, 3, 2).isZero(0.0));
}
