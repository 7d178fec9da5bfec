#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/control.hpp"
#include "mfb/scenarios.hpp"

#include <cmath>
#include <sstream>

using namespace mfb;

namespace {

Vec s1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

LinearDynamics still_dynamics()
{
    LinearDynamics d;
    for (int i = 0; i < 2; ++i) {
        d.A[i] = d.Abar[i] = d.B[i] = d.Bbar[i] = d.C[i] = d.D[i] = m1(0.0);
    }
    d.H = m1(1.0);
    d.x0 = s1(0.0);
    return d;
}

LCProblemData quadratic_lc()
{
    LCProblemData lc;
    lc.dyn = still_dynamics();
    lc.f11 = lc.f12 = quadratic_function(m1(1.0));
    lc.f21 = lc.f22 = zero_function(1);
    for (int i = 0; i < 2; ++i) {
        lc.f3[i] = constant_in_time(zero_function(1));
        lc.f4[i] = constant_in_time(quadratic_function(m1(1.0)));
    }
    return lc;
}

LQICProblemData still_lqic()
{
    LQICProblemData lq;
    lq.dyn = still_dynamics();
    for (int i = 0; i < 2; ++i) {
        lq.M[i] = m1(1.0);
        lq.G[i] = ParticleMatrix(m1(0.0));
        lq.Q[i] = m1(0.0);
        lq.R[i] = m1(1.0);
    }
    lq.U0 = ConvexSet::full_space(1);
    lq.U = TimeSet(ConvexSet::full_space(1));
    return lq;
}

std::array<EnsembleProcess, 2> constant_states(std::size_t M, std::size_t N, double x1, double x2)
{
    std::array<EnsembleProcess, 2> X{EnsembleProcess(M, N + 1, 1), EnsembleProcess(M, N + 1, 1)};
    for (std::size_t k = 0; k <= N; ++k) {
        X[0].at(k).setConstant(x1);
        X[1].at(k).setConstant(x2);
    }
    return X;
}

ControlQuartet midpoint(const ControlQuartet& a, const ControlQuartet& b)
{
    ControlQuartet q = a;
    for (int i = 0; i < 2; ++i) {
        q.xi[i] = 0.5 * (a.xi[i] + b.xi[i]);
        q.u[i] = 0.5 * (a.u[i] + b.u[i]);
    }
    return q;
}

}  // namespace

TEST_CASE("cost of zero controls and zero state is zero")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 10, 1, 1);
    const LCProblemData lc = quadratic_lc();
    const ControlQuartet q = zero_controls(lc.dyn, noise);
    const CostBreakdown c = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid);
    CHECK(c.total == 0.0);
    CHECK(c.std_error() == 0.0);
}

TEST_CASE("initial cost of a quadratic")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 10, 1, 1);
    const LCProblemData lc = quadratic_lc();
    ControlQuartet q = zero_controls(lc.dyn, noise);
    q.xi[0] = s1(2.0);
    const CostBreakdown c = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid);
    CHECK(c.initial == doctest::Approx(2.0));
    CHECK(c.total == doctest::Approx(2.0));

    LQICProblemData lq = still_lqic();
    lq.M[0] = m1(2.0);
    ControlQuartet p = zero_controls(lq.dyn, noise);
    p.xi[0] = s1(3.0);
    CHECK(cost_lqic(lq, p, simulate_state(lq.dyn, p, noise), noise.grid).initial == doctest::Approx(9.0));
}

TEST_CASE("running state and control costs integrate over the horizon")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 8), 6, 1, 2);
    LQICProblemData lq = still_lqic();
    lq.Q[0] = m1(1.0);
    ControlQuartet q = zero_controls(lq.dyn, noise);
    const CostBreakdown c = cost_lqic(lq, q, constant_states(6, 8, 1.0, 0.0), noise.grid);
    CHECK(c.running_state == doctest::Approx(0.5));

    for (std::size_t k = 0; k < 8; ++k)
        q.u[1].at(k).setConstant(2.0);
    const CostBreakdown d = cost_lqic(lq, q, constant_states(6, 8, 0.0, 0.0), noise.grid);
    CHECK(d.running_control == doctest::Approx(0.5 * 4.0));

    lq.G[1] = ParticleMatrix(m1(1.0));
    const CostBreakdown e = cost_lqic(lq, zero_controls(lq.dyn, noise), constant_states(6, 8, 1.0, 2.0), noise.grid);
    CHECK(e.terminal == doctest::Approx(0.5 * 9.0));
}

TEST_CASE("state simulation: constant initial point plus noise loading")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 5), 12, 1, 3);
    LinearDynamics d = still_dynamics();
    d.kappa[1] = [](const NodeContext&, Eigen::Index b) -> Mat { return Mat::Ones(1, b); };
    ControlQuartet q = zero_controls(d, noise);
    q.xi[0] = s1(1.5);
    const auto X = simulate_state(d, q, noise);
    for (std::size_t k = 0; k <= 5; ++k)
        for (std::size_t m = 0; m < 12; ++m) {
            CHECK(X[0](m, k)(0) == 1.5);
            CHECK(X[1](m, k)(0) == doctest::Approx(noise.path(m, k)(0)).epsilon(1e-13));
        }
}

TEST_CASE("cost is convex along segments of controls on a fixed ensemble")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 8), 200, 1, 4);
    const LCProblemData lc = paper_example_lc();
    const ControlQuartet base = zero_controls(lc.dyn, noise);
    const auto qs = random_perturbations(base, noise, 12, 1.0, 5);
    auto J = [&](const ControlQuartet& q) { return cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid).total; };
    for (std::size_t j = 0; j + 1 < qs.size(); ++j)
        CHECK(J(midpoint(qs[j], qs[j + 1])) <= 0.5 * (J(qs[j]) + J(qs[j + 1])) + 1e-12);
}

TEST_CASE("extraction at zero adjoint gives zero controls")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 16, 1, 6);
    const LCProblemData lc = paper_example_lc();
    PairProcess V{TripleProcess(16, 5, 1, 1), TripleProcess(16, 5, 1, 1)};
    const ControlQuartet q = extract_lc_controls(V, lc, noise.grid);
    for (int i = 0; i < 2; ++i) {
        CHECK(q.xi[i](0) == 0.0);
        CHECK(q.u[i].nodes() == 4);
        for (std::size_t k = 0; k < 4; ++k)
            CHECK(q.u[i].at(k).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("constrained initial control is clamped")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 2), 4, 1, 7);
    LQICProblemData lq = still_lqic();
    lq.U0 = ConvexSet::box(s1(-1.0), s1(1.0));
    PairProcess V{TripleProcess(4, 3, 1, 1), TripleProcess(4, 3, 1, 1)};
    V[0].Y.at(0).setConstant(5.0);
    V[1].Y.at(0).setConstant(-0.25);
    const ControlQuartet q = extract_lqic_controls(V, lq, noise.grid);
    CHECK(q.xi[0](0) == -1.0);
    CHECK(q.xi[1](0) == doctest::Approx(0.25));
}

TEST_CASE("admissibility")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 3), 5, 1, 8);
    LQICProblemData lq = still_lqic();
    lq.U = TimeSet(ConvexSet::box(s1(-0.5), s1(0.5)));
    ControlQuartet q = zero_controls(lq.dyn, noise);
    CHECK_NOTHROW(require_admissible(lq, q, noise.grid));
    q.u[1](3, 2)(0) = 0.7;
    try {
        require_admissible(lq, q, noise.grid);
        FAIL("expected violation");
    } catch (const AdmissibilityViolation& e) {
        CHECK(std::string(e.what()).find("node 2") != std::string::npos);
    }
    CHECK_THROWS_AS(cost_lqic(lq, q, simulate_state(lq.dyn, q, noise), noise.grid), AdmissibilityViolation);
}

TEST_CASE("optimality gap of the optimum against itself")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 64, 1, 9);
    const LCProblemData lc = paper_example_lc();
    const ControlQuartet q = zero_controls(lc.dyn, noise);
    const GapReport r = optimality_gap_check(lc, q, {q}, noise);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].gap == 0.0);
    CHECK(r.entries[0].deviation == 0.0);
    CHECK(r.delta == 1.0);
}

TEST_CASE("solved example: gap bound and duality")
{
    const SolverConfig cfg = example_solver_config(1024, 16, 42);
    const ExampleRun run = run_example(cfg);
    const LCProblemData lc = paper_example_lc();
    const auto qs = random_perturbations(run.q, run.noise, 6, 0.5, 7);
    const GapReport gap = optimality_gap_check(lc, run.q, qs, run.noise);
    CHECK(gap.passed());
    for (const auto& e : gap.entries)
        CHECK(e.gap > 0.0);

    const DualityReport same = duality_residual(run.sol.V, lc, run.q, run.q, run.noise);
    CHECK(same.lhs == 0.0);
    CHECK(same.rhs == 0.0);
    for (const auto& q : qs) {
        const DualityReport d = duality_residual(run.sol.V, lc, run.q, q, run.noise);
        CHECK(d.residual <= 0.05 * std::max(1.0, d.scale));
    }
}

TEST_CASE("relative L2 distance")
{
    EnsembleProcess a(3, 2, 1), b(3, 2, 1);
    b.at(0) << 1, 2, 3;
    b.at(1) << -1, 0, 4;
    a = 2.0 * b;
    CHECK(relative_l2(a, b, 2) == doctest::Approx(1.0));
    CHECK(relative_l2(b, b, 2) == 0.0);
    CHECK_THROWS_AS(relative_l2(a, b, 3), InvalidArgument);
}

TEST_CASE("controls summary layout")
{
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 4), 9, 1, 10);
    const ControlQuartet q = zero_controls(still_dynamics(), noise);
    std::istringstream in(controls_csv(q, noise.grid));
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "t,u1_mean,u1_q05,u1_q50,u1_q95,u2_mean,u2_q05,u2_q50,u2_q95");
    std::getline(in, line);
    CHECK(line == "0,0,0,0,0,0,0,0,0");
}
