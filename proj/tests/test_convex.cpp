#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/convex.hpp"
#include "mfb/scenarios.hpp"

#include <cmath>
#include <random>

using namespace mfb;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("example family values")
{
    const ConvexFunction f = example_family();
    CHECK(f.eval(v1(0.0)) == 0.0);
    CHECK(f.eval(v1(1.0)) == doctest::Approx(std::exp(1.0) - 2.0));
    CHECK(f.eval(v1(-2.0)) == doctest::Approx(f.eval(v1(2.0))));
    CHECK(f.grad(v1(1.0))(0) == doctest::Approx(std::exp(1.0) - 1.0));
    CHECK(f.grad(v1(-1.0))(0) == doctest::Approx(-(std::exp(1.0) - 1.0)));
    CHECK(f.grad(v1(0.0))(0) == 0.0);
    CHECK(f.delta == 1.0);
}

TEST_CASE("example family is strongly convex with modulus 1")
{
    const ConvexFunction f = example_family();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    for (int i = 0; i < 2000; ++i) {
        const double a = u(rng), b = u(rng);
        const double lhs = (f.grad(v1(a))(0) - f.grad(v1(b))(0)) * (a - b);
        CHECK(lhs >= (a - b) * (a - b) - 1e-12);
    }
}

TEST_CASE("gradient inverse examples")
{
    const ConvexFunction f = example_family();
    CHECK(grad_inverse(f, v1(std::exp(1.0) - 1.0))(0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(grad_inverse(f, v1(-(std::exp(1.0) - 1.0)))(0) == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(std::abs(grad_inverse(f, v1(0.0))(0)) < 1e-12);
    // log(1 + v) for v > 0
    CHECK(grad_inverse(f, v1(20.0))(0) == doctest::Approx(std::log(21.0)).epsilon(1e-10));
}

TEST_CASE("gradient inverse of a quadratic solves the linear system")
{
    Mat Q(2, 2);
    Q << 3.0, 1.0, 1.0, 2.0;
    const Vec c = v2(0.5, -1.0);
    const ConvexFunction f = quadratic_function(Q, c);
    const Vec v = v2(2.0, -3.0);
    const Vec want = Q.ldlt().solve(v - c);
    CHECK((grad_inverse(f, v) - want).norm() < 1e-10);
    CHECK(f.eval(v2(1.0, 0.0)) == doctest::Approx(1.5 + 0.5));
    CHECK(f.delta == doctest::Approx(Eigen::SelfAdjointEigenSolver<Mat>(Q).eigenvalues().minCoeff()));
}

TEST_CASE("zero function")
{
    const ConvexFunction z = zero_function(3);
    CHECK(z.identically_zero);
    CHECK(z.eval(Vec::Ones(3)) == 0.0);
    CHECK(z.grad(Vec::Ones(3)).isZero(0.0));
}

TEST_CASE("weighted inner product")
{
    const WeightedNorm I = make_weighted_norm(Mat::Identity(2, 2));
    CHECK(weighted_inner(I, v2(1, 1), v2(1, 1)) == 2.0);
    CHECK(weighted_inner(I, v2(1, 0), v2(0, 1)) == 0.0);
    const WeightedNorm W = make_weighted_norm(Vec(v2(2.0, 5.0)).asDiagonal());
    CHECK(weighted_inner(W, v2(1, 2), v2(1, 1)) == 12.0);
    CHECK(W.delta == doctest::Approx(2.0));
    CHECK_THROWS(make_weighted_norm(Vec(v2(1.0, -1.0)).asDiagonal()));
}

TEST_CASE("projection examples")
{
    const ConvexSet interval = ConvexSet::box(v1(-1.0), v1(1.0));
    CHECK(project(interval, v1(2.0))(0) == 1.0);
    CHECK(project(interval, v1(-7.0))(0) == -1.0);
    CHECK(project(interval, v1(0.3))(0) == 0.3);

    const ConvexSet box = ConvexSet::box(v2(-1, -1), v2(1, 1));
    const WeightedNorm W = make_weighted_norm(Vec(v2(2.0, 5.0)).asDiagonal());
    const Vec p = project(box, W, v2(3.0, 0.0));
    CHECK(p(0) == doctest::Approx(1.0));
    CHECK(std::abs(p(1)) < 1e-12);

    const ConvexSet ball = ConvexSet::ball(v2(0, 0), 1.0);
    const Vec q = project(ball, v2(2.0, 0.0));
    CHECK(q(0) == doctest::Approx(1.0));
    CHECK(std::abs(q(1)) < 1e-12);

    CHECK((project(ConvexSet::singleton(v2(4, 5)), v2(0, 0)) - v2(4, 5)).norm() == 0.0);
    CHECK((project(ConvexSet::full_space(2), v2(7, -8)) - v2(7, -8)).norm() == 0.0);

    const ConvexSet half = ConvexSet::halfspace(v2(1, 0), 0.5);
    CHECK((project(half, v2(2.0, 3.0)) - v2(0.5, 3.0)).norm() < 1e-12);
}

TEST_CASE("projection onto a ball in a non-Euclidean weight stays in the ball and beats the radial point")
{
    Mat Wm(2, 2);
    Wm << 4.0, 1.0, 1.0, 1.0;
    const WeightedNorm W = make_weighted_norm(Wm);
    const ConvexSet ball = ConvexSet::ball(v2(0, 0), 1.0);
    const Vec x = v2(3.0, 2.0);
    const Vec p = project(ball, W, x);
    CHECK(ball.contains(p, 1e-10));
    const Vec radial = x.normalized();
    CHECK(weighted_inner(W, x - p, x - p) <= weighted_inner(W, x - radial, x - radial) + 1e-12);
}

TEST_CASE("projection is idempotent and fixes points of the set")
{
    const ConvexSet K = ConvexSet::product({ConvexSet::box(v1(0.0), v1(2.0)), ConvexSet::ball(v2(1, 1), 0.5)});
    REQUIRE(K.dim == 3);
    Vec x(3);
    x << 5.0, -3.0, 4.0;
    const Vec p = project(K, x);
    CHECK(K.contains(p, 1e-10));
    CHECK((project(K, p) - p).norm() < 1e-12);
    CHECK(K.contains(K.feasible_point()));
}

TEST_CASE("bad sets are rejected")
{
    CHECK_THROWS(ConvexSet::box(v1(1.0), v1(0.0)));
    CHECK_THROWS(ConvexSet::ball(v1(0.0), -1.0));
}

TEST_CASE("projection property suite")
{
    const SuiteResult r = projection_suite(200, 11);
    INFO(r.witness);
    CHECK(r.passed());
    CHECK(r.cases == 200);
}

TEST_CASE("gradient inverse property suite")
{
    const SuiteResult r = grad_inverse_suite(200, 12);
    INFO(r.witness);
    CHECK(r.passed());
}
