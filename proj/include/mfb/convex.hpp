#pragma once

#include "mfb/core.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mfb {

struct ConvexFunction {
    std::size_t dim = 1;
    std::function<double(const Vec&)> eval;
    std::function<Vec(const Vec&)> grad;
    std::function<Mat(const Vec&)> hess;          // optional; finite differences otherwise
    std::function<Vec(const Vec&)> inverse_hint;  // optional starting point for grad_inverse
    std::function<double(double)> scalar_inverse; // optional exact (grad f)^{-1} when dim == 1
    bool identically_zero = false;
    double delta = 0.0;
    std::optional<double> lip_grad;
    std::string name;
};

// (grad f)^{-1}(v): damped Newton on |grad f(x) - v|, bisection fallback in one dimension.
Vec grad_inverse(const ConvexFunction& f, const Vec& v, double tol = 1e-10);

// f(u) = e^{|u|} - |u| - 1 on the real line, delta = 1.
ConvexFunction example_family();

ConvexFunction quadratic_function(const Mat& Q, const Vec& c = Vec());  // 0.5<Qx,x> + <c,x>
ConvexFunction zero_function(std::size_t dim);

// Time-indexed family t -> f(t, .); the solver binds t once per node.
struct TimedConvexFunction {
    std::function<ConvexFunction(double)> at;
    bool time_invariant = true;
    double delta = 0.0;
};

TimedConvexFunction constant_in_time(ConvexFunction f);

struct WeightedNorm {
    Mat W;
    double delta = 0.0;
};

WeightedNorm make_weighted_norm(const Mat& W);
double weighted_inner(const WeightedNorm& W, const Vec& x, const Vec& y);

struct ConvexSet {
    enum class Kind { full, box, ball, halfspace, singleton, product };

    Kind kind = Kind::full;
    std::size_t dim = 1;
    Vec lo, hi;                    // box
    Vec center;                    // ball, singleton
    double radius = 0.0;           // ball
    Vec normal;                    // halfspace <normal, x> <= offset
    double offset = 0.0;
    std::vector<ConvexSet> parts;  // product, consecutive coordinate blocks

    static ConvexSet full_space(std::size_t dim);
    static ConvexSet box(Vec lo, Vec hi);
    static ConvexSet ball(Vec center, double radius);
    static ConvexSet halfspace(Vec normal, double offset);
    static ConvexSet singleton(Vec point);
    static ConvexSet product(std::vector<ConvexSet> parts);

    bool contains(const Vec& x, double tol = 1e-12) const;
    Vec feasible_point() const;
    std::string kind_name() const;
};

// Nearest point of K to x in the W-norm.
Vec project(const ConvexSet& K, const WeightedNorm& W, const Vec& x);
Vec project(const ConvexSet& K, const Vec& x);

}  // namespace mfb
