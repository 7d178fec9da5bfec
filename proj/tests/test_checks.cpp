#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/checks.hpp"
#include "mfb/scenarios.hpp"

#include <cmath>

using namespace mfb;

namespace {

Vec s1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

// Scalar structural data with h = hbar = sign * identity.
StructuralData linear_structural(double sign, double L2, double L3)
{
    StructuralData s;
    s.H = m1(1.0);
    for (int i = 0; i < 2; ++i) {
        s.B[i] = m1(1.0);
        s.Bbar[i] = m1(0.0);
        s.D[i] = m1(0.0);
        s.h[i] = [sign](double, const Vec& u) -> Vec { return sign * u; };
        for (int j = 0; j < 2; ++j)
            s.hbar[i][j] = [sign](const Vec& v) -> Vec { return sign * v; };
    }
    s.constants.L2 = L2;
    s.constants.L3 = L3;
    return s;
}

// Forward drift b = slope * x, everything else zero.
CoefficientSet linear_drift(double slope, double Lb)
{
    CoefficientSet c;
    c.structural = linear_structural(-1.0, 1.0, 1.0);
    c.structural->constants.Lb = Lb;
    c.structural->constants.eps = 0.0;
    for (int i = 0; i < 2; ++i) {
        c.psi[i] = [](const Vec&, const Vec&) -> Vec { return Vec::Zero(1); };
        c.phi[i] = [](const NodeContext&, const Mat& x1, const Mat&) -> Mat { return Mat::Zero(1, x1.cols()); };
        c.gamma[i] = [slope](const NodeContext&, const ExtendedStateView& v, Part, GammaBatch& g) {
            g.f = Mat::Zero(1, v.batch());
            g.b = slope * v.x;
            g.sigma = Mat::Zero(1, v.batch());
        };
    }
    return c;
}

}  // namespace

TEST_CASE("lipschitz check accepts the true constant and rejects a smaller one")
{
    const CheckReport ok = check_lipschitz(linear_drift(2.0, 2.0), 500);
    CHECK(ok.passed());
    const CheckReport bad = check_lipschitz(linear_drift(2.0, 1.0), 500);
    CHECK_FALSE(bad.passed());
    CHECK(bad.worst_inequality.rfind("b", 0) == 0);
    CHECK(bad.witness_values.size() > 0);
}

TEST_CASE("adjoint check on linear maps")
{
    CHECK(check_adjoint(linear_structural(-1.0, 1.0, 1.0), 300).passed());
    CHECK(check_adjoint(linear_structural(-1.0, 1.0, 0.5), 300).passed());
    // dissipativity requires L3 <= 1 for h = -u
    const CheckReport strong = check_adjoint(linear_structural(-1.0, 1.0, 2.0), 300);
    CHECK_FALSE(strong.passed());
    CHECK(strong.worst_inequality.find("dissipative") != std::string::npos);
    CHECK_FALSE(check_adjoint(linear_structural(1.0, 1.0, 1.0), 300).passed());
    // |h(u) - h(v)| = |u - v| needs L2 >= 1
    CHECK_FALSE(check_adjoint(linear_structural(-1.0, 0.5, 0.5), 300).passed());
}

TEST_CASE("example adjoint ratios decay for large arguments")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const auto probes = linear_domination_ratios(*c.structural, {0.0, 100.0});
    REQUIRE(probes.size() == 4);
    for (const auto& p : probes) {
        if (p.u == 0.0) {
            // h(1) = -log 2
            CHECK(p.ratio == doctest::Approx(std::log(2.0) * std::log(2.0)).epsilon(1e-8));
            CHECK(p.ratio > 0.25);
            CHECK(p.ratio < 1.0);
        } else {
            CHECK(p.ratio == doctest::Approx(std::pow(std::log(102.0 / 101.0), 2)).epsilon(1e-6));
            CHECK(p.ratio < 0.01);
        }
    }
    CHECK(check_no_linear_domination(*c.structural, {0.0, 1.0, 10.0, 100.0, 1000.0}).passed());
}

TEST_CASE("linear adjoint map fails the no-linear-domination check")
{
    const StructuralData s = linear_structural(-1.0, 1.0, 1.0);
    for (const auto& p : linear_domination_ratios(s, {0.0, 100.0, 1000.0}))
        CHECK(p.ratio == doctest::Approx(1.0));
    CHECK_FALSE(check_no_linear_domination(s, {0.0, 100.0, 1000.0}).passed());
    const CheckReport none = check_no_linear_domination(s, {0.0, 1.0});
    CHECK(none.passed());
    CHECK_FALSE(none.warnings.empty());
}

TEST_CASE("example satisfies monotonicity and lipschitz bounds")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CheckReport mono = check_monotonicity(c, 1000);
    INFO(mono.witness);
    CHECK(mono.passed());
    const CheckReport lip = check_lipschitz(c, 1000);
    INFO(lip.witness);
    CHECK(lip.passed());
    CHECK(check_adjoint(*c.structural, 1000).passed());
}

TEST_CASE("checks are deterministic under the seed")
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CheckReport a = check_monotonicity(c, 200), b = check_monotonicity(c, 200);
    CHECK(a.worst_margin == b.worst_margin);
    CHECK(a.worst_inequality == b.worst_inequality);
}

TEST_CASE("cross-check instance satisfies the quadratic assumptions")
{
    const CheckReport r = check_lqic(lqic_crosscheck_problem());
    INFO(r.witness);
    CHECK(r.passed());
}

TEST_CASE("control weight at the boundary passes, below it fails with a witness")
{
    LQICProblemData lq = lqic_crosscheck_problem();
    lq.R[0] = m1(lq.delta);
    CHECK(check_lqic(lq).passed());
    lq.R[1] = m1(lq.delta / 2);
    const TimeGrid g = make_grid(1.0, 4);
    const CheckReport r = check_lqic(lq, &g);
    CHECK_FALSE(r.passed());
    CHECK(r.witness.find("R2") != std::string::npos);
    CHECK(r.witness.find("node 0") != std::string::npos);
    CHECK(r.worst_margin == doctest::Approx(-lq.delta / 2));
}

TEST_CASE("indefinite terminal weight fails")
{
    LQICProblemData lq = lqic_crosscheck_problem();
    lq.G[1] = ParticleMatrix(m1(-0.1));
    const CheckReport r = check_lqic(lq);
    CHECK_FALSE(r.passed());
    CHECK(r.witness.find("G2") != std::string::npos);
}

TEST_CASE("convexity check")
{
    ConvexFunction quartic;
    quartic.dim = 1;
    quartic.delta = 1.0;
    quartic.eval = [](const Vec& x) { return std::pow(x(0), 4); };
    quartic.grad = [](const Vec& x) -> Vec { return s1(4 * std::pow(x(0), 3)); };
    CHECK_FALSE(check_convexity(quartic, 500).passed());

    CHECK(check_convexity(quadratic_function(m1(1.0)), 500).passed());
    CHECK(check_convexity(example_family(), 500).passed());

    ConvexFunction concave;
    concave.delta = 0.0;
    concave.eval = [](const Vec& x) { return -x(0) * x(0); };
    concave.grad = [](const Vec& x) -> Vec { return s1(-2 * x(0)); };
    CHECK_FALSE(check_convexity(concave, 100).passed());

    ConvexFunction wrong_grad = quadratic_function(m1(1.0));
    wrong_grad.grad = [](const Vec& x) -> Vec { return s1(1.1 * x(0)); };
    CHECK_FALSE(check_convexity(wrong_grad, 100).passed());
}

TEST_CASE("every broken example variant is caught")
{
    const auto variants = broken_example_variants(2000);
    REQUIRE(variants.size() == 4);
    for (const auto& v : variants) {
        INFO(v.name);
        CHECK_FALSE(v.report.passed());
        CHECK_FALSE(v.report.witness.empty());
    }
}
