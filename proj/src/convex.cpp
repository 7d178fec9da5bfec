#include "mfb/convex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace mfb {

namespace {

Mat fd_jacobian(const ConvexFunction& f, const Vec& x)
{
    const Eigen::Index n = x.size();
    Mat J(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
        Vec xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        J.col(j) = (f.grad(xp) - f.grad(xm)) / (2.0 * h);
    }
    return 0.5 * (J + J.transpose());
}

Vec bisect_scalar(const ConvexFunction& f, double v, double x0, double tol)
{
    auto g = [&](double x) { return f.grad(Vec::Constant(1, x))(0) - v; };
    double lo = x0, hi = x0;
    double step = 1.0;
    while (g(lo) > 0.0) {
        lo -= step;
        step *= 2.0;
        if (!std::isfinite(lo) || step > 1e300)
            throw NumericFailure("grad_inverse: cannot bracket root");
    }
    step = 1.0;
    while (g(hi) < 0.0) {
        hi += step;
        step *= 2.0;
        if (!std::isfinite(hi) || step > 1e300)
            throw NumericFailure("grad_inverse: cannot bracket root");
    }
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if (std::abs(gm) <= tol)
            return Vec::Constant(1, mid);
        if (gm < 0.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(mid)))
            return Vec::Constant(1, mid);
    }
    return Vec::Constant(1, 0.5 * (lo + hi));
}

bool is_diagonal(const Mat& W)
{
    for (Eigen::Index j = 0; j < W.cols(); ++j)
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            if (i != j && W(i, j) != 0.0)
                return false;
    return true;
}

Vec clamp_box(const Vec& x, const Vec& lo, const Vec& hi)
{
    return x.cwiseMax(lo).cwiseMin(hi);
}

Vec project_ball(const ConvexSet& K, const Mat& W, const Vec& x)
{
    const Vec u = x - K.center;
    const double r = K.radius;
    if (u.norm() <= r)
        return x;
    if (is_diagonal(W) && (W.diagonal().array() == W(0, 0)).all())
        return K.center + u * (r / u.norm());
    Eigen::SelfAdjointEigenSolver<Mat> es(W);
    const Vec lam = es.eigenvalues();
    const Vec a = es.eigenvectors().transpose() * u;
    auto radius_at = [&](double mu) {
        return (lam.array() * a.array() / (lam.array() + mu)).matrix().norm();
    };
    double lo = 0.0;
    double hi = lam.maxCoeff() * a.norm() / r;
    for (int it = 0; it < 300 && hi - lo > 1e-17 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (radius_at(mid) > r)
            lo = mid;
        else
            hi = mid;
    }
    const double mu = hi;
    const Vec y = es.eigenvectors() * (lam.array() * a.array() / (lam.array() + mu)).matrix();
    // Land on the sphere exactly; the bisection leaves only rounding error.
    return K.center + y * (r / y.norm());
}

Vec project_halfspace(const ConvexSet& K, const Mat& W, const Vec& x)
{
    const double excess = K.normal.dot(x) - K.offset;
    if (excess <= 0.0)
        return x;
    const Vec Winv_a = W.ldlt().solve(K.normal);
    return x - (excess / K.normal.dot(Winv_a)) * Winv_a;
}

struct Block {
    Eigen::Index offset;
    Eigen::Index size;
    ConvexSet set;
};

Vec block_descent(const std::vector<Block>& blocks, const Mat& W, const Vec& x)
{
    Vec y(x.size());
    for (const auto& b : blocks) {
        const Mat Wbb = W.block(b.offset, b.offset, b.size, b.size);
        y.segment(b.offset, b.size) = project(b.set, make_weighted_norm(Wbb), x.segment(b.offset, b.size));
    }
    const double scale = 1.0 + x.norm();
    for (int sweep = 0; sweep < 200000; ++sweep) {
        double change = 0.0;
        for (const auto& b : blocks) {
            const Mat Wbb = W.block(b.offset, b.offset, b.size, b.size);
            const Vec resid = W.middleRows(b.offset, b.size) * (y - x) -
                              Wbb * (y.segment(b.offset, b.size) - x.segment(b.offset, b.size));
            const Vec target = x.segment(b.offset, b.size) - Wbb.ldlt().solve(resid);
            const Vec yb = project(b.set, make_weighted_norm(Wbb), target);
            change = std::max(change, (yb - y.segment(b.offset, b.size)).lpNorm<Eigen::Infinity>());
            y.segment(b.offset, b.size) = yb;
        }
        if (change <= 1e-15 * scale)
            return y;
    }
    throw NumericFailure("project: block coordinate descent did not converge");
}

}  // namespace

Vec grad_inverse(const ConvexFunction& f, const Vec& v, double tol)
{
    if (!(f.delta > 0.0))
        throw InvalidArgument("grad_inverse: function is not uniformly convex");
    if (static_cast<std::size_t>(v.size()) != f.dim)
        throw InvalidArgument("grad_inverse: dimension mismatch");
    const double atol = tol * std::max(1.0, v.norm());

    if (f.dim == 1 && f.scalar_inverse) {
        const Vec x = Vec::Constant(1, f.scalar_inverse(v(0)));
        if ((f.grad(x) - v).norm() <= atol)
            return x;
    }
    Vec x = f.inverse_hint ? f.inverse_hint(v) : Vec(Vec::Zero(v.size()));
    Vec r = f.grad(x) - v;
    double rn = r.norm();
    for (int it = 0; it < 100 && rn > atol; ++it) {
        const Mat J = f.hess ? f.hess(x) : fd_jacobian(f, x);
        const Vec p = J.ldlt().solve(r);
        double lam = 1.0;
        bool accepted = false;
        while (lam > 1e-12) {
            const Vec xt = x - lam * p;
            const Vec rt = f.grad(xt) - v;
            if (rt.allFinite() && rt.norm() < (1.0 - 1e-4 * lam) * rn) {
                x = xt;
                r = rt;
                rn = rt.norm();
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if (!accepted)
            break;
    }
    if (rn <= atol)
        return x;

    if (f.dim == 1) {
        x = bisect_scalar(f, v(0), x.allFinite() ? x(0) : 0.0, atol);
        if ((f.grad(x) - v).norm() <= atol)
            return x;
        throw NumericFailure("grad_inverse: bisection stalled above tolerance");
    }

    // Step-halving iteration on the strongly monotone map.
    double s = f.lip_grad ? 1.0 / *f.lip_grad : 1.0;
    for (int it = 0; it < 100000 && rn > atol; ++it) {
        const Vec xt = x - s * r;
        const Vec rt = f.grad(xt) - v;
        if (rt.norm() < rn) {
            x = xt;
            r = rt;
            rn = rt.norm();
            s *= 1.2;
        } else {
            s *= 0.5;
            if (s < 1e-300)
                break;
        }
    }
    if (rn > atol)
        throw NumericFailure("grad_inverse: no convergence");
    return x;
}

ConvexFunction example_family()
{
    ConvexFunction f;
    f.dim = 1;
    f.name = "exp-abs";
    f.delta = 1.0;
    f.eval = [](const Vec& u) {
        const double a = std::abs(u(0));
        return std::expm1(a) - a;
    };
    f.grad = [](const Vec& u) {
        const double a = std::abs(u(0));
        return Vec::Constant(1, std::copysign(std::expm1(a), u(0)));
    };
    f.hess = [](const Vec& u) { return Mat::Constant(1, 1, std::exp(std::abs(u(0)))); };
    f.inverse_hint = [](const Vec& v) { return Vec::Constant(1, std::copysign(std::log1p(std::abs(v(0))), v(0))); };
    f.scalar_inverse = [](double v) { return std::copysign(std::log1p(std::abs(v)), v); };
    return f;
}

ConvexFunction quadratic_function(const Mat& Q, const Vec& c)
{
    if (Q.rows() != Q.cols())
        throw InvalidArgument("quadratic_function: Q must be square");
    const Mat S = 0.5 * (Q + Q.transpose());
    const Vec lin = c.size() == 0 ? Vec(Vec::Zero(Q.rows())) : c;
    if (lin.size() != Q.rows())
        throw InvalidArgument("quadratic_function: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    ConvexFunction f;
    f.dim = static_cast<std::size_t>(Q.rows());
    f.name = "quadratic";
    f.delta = std::max(0.0, es.eigenvalues().minCoeff());
    f.lip_grad = es.eigenvalues().cwiseAbs().maxCoeff();
    f.eval = [S, lin](const Vec& x) { return 0.5 * x.dot(S * x) + lin.dot(x); };
    f.grad = [S, lin](const Vec& x) { return Vec(S * x + lin); };
    f.hess = [S](const Vec&) { return S; };
    if (f.delta > 0.0) {
        auto ldlt = std::make_shared<Eigen::LDLT<Mat>>(S);
        f.inverse_hint = [ldlt, lin](const Vec& v) { return Vec(ldlt->solve(v - lin)); };
        if (f.dim == 1) {
            const double q = S(0, 0), c0 = lin(0);
            f.scalar_inverse = [q, c0](double v) { return (v - c0) / q; };
        }
    }
    return f;
}

ConvexFunction zero_function(std::size_t dim)
{
    ConvexFunction f;
    f.dim = dim;
    f.name = "zero";
    f.identically_zero = true;
    f.delta = 0.0;
    f.lip_grad = 0.0;
    f.eval = [](const Vec&) { return 0.0; };
    f.grad = [](const Vec& x) { return Vec(Vec::Zero(x.size())); };
    f.hess = [dim](const Vec&) { return Mat(Mat::Zero(dim, dim)); };
    return f;
}

TimedConvexFunction constant_in_time(ConvexFunction f)
{
    TimedConvexFunction g;
    g.delta = f.delta;
    g.time_invariant = true;
    g.at = [f = std::move(f)](double) { return f; };
    return g;
}

WeightedNorm make_weighted_norm(const Mat& W)
{
    if (W.rows() != W.cols() || W.rows() == 0)
        throw InvalidArgument("weighted norm: W must be square");
    const double scale = std::max(1.0, W.cwiseAbs().maxCoeff());
    if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw InvalidArgument("weighted norm: W must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(W);
    const double lo = es.eigenvalues().minCoeff();
    if (!(lo > 0.0))
        throw InvalidArgument("weighted norm: W must be positive definite");
    return {W, lo};
}

double weighted_inner(const WeightedNorm& W, const Vec& x, const Vec& y)
{
    if (x.size() != W.W.rows() || y.size() != W.W.rows())
        throw InvalidArgument("weighted_inner: dimension mismatch");
    return x.dot(W.W * y);
}

ConvexSet ConvexSet::full_space(std::size_t dim)
{
    ConvexSet K;
    K.kind = Kind::full;
    K.dim = dim;
    return K;
}

ConvexSet ConvexSet::box(Vec lo, Vec hi)
{
    if (lo.size() != hi.size() || lo.size() == 0)
        throw InvalidArgument("box: bound sizes differ");
    if ((lo.array() > hi.array()).any())
        throw InvalidArgument("box: empty (lo > hi)");
    ConvexSet K;
    K.kind = Kind::box;
    K.dim = static_cast<std::size_t>(lo.size());
    K.lo = std::move(lo);
    K.hi = std::move(hi);
    return K;
}

ConvexSet ConvexSet::ball(Vec center, double radius)
{
    if (!(radius >= 0.0))
        throw InvalidArgument("ball: negative radius");
    ConvexSet K;
    K.kind = Kind::ball;
    K.dim = static_cast<std::size_t>(center.size());
    K.center = std::move(center);
    K.radius = radius;
    return K;
}

ConvexSet ConvexSet::halfspace(Vec normal, double offset)
{
    if (normal.norm() == 0.0)
        throw InvalidArgument("halfspace: zero normal");
    ConvexSet K;
    K.kind = Kind::halfspace;
    K.dim = static_cast<std::size_t>(normal.size());
    K.normal = std::move(normal);
    K.offset = offset;
    return K;
}

ConvexSet ConvexSet::singleton(Vec point)
{
    ConvexSet K;
    K.kind = Kind::singleton;
    K.dim = static_cast<std::size_t>(point.size());
    K.center = std::move(point);
    return K;
}

ConvexSet ConvexSet::product(std::vector<ConvexSet> parts)
{
    if (parts.empty())
        throw InvalidArgument("product: no factors");
    ConvexSet K;
    K.kind = Kind::product;
    K.dim = 0;
    for (const auto& p : parts)
        K.dim += p.dim;
    K.parts = std::move(parts);
    return K;
}

bool ConvexSet::contains(const Vec& x, double tol) const
{
    if (static_cast<std::size_t>(x.size()) != dim)
        return false;
    switch (kind) {
    case Kind::full:
        return x.allFinite();
    case Kind::box:
        return ((x.array() >= lo.array() - tol) && (x.array() <= hi.array() + tol)).all();
    case Kind::ball:
        return (x - center).norm() <= radius + tol * (1.0 + radius);
    case Kind::halfspace:
        return normal.dot(x) <= offset + tol * (1.0 + std::abs(offset) + normal.norm() * x.norm());
    case Kind::singleton:
        return (x - center).norm() <= tol * (1.0 + center.norm());
    case Kind::product: {
        Eigen::Index off = 0;
        for (const auto& p : parts) {
            const auto sz = static_cast<Eigen::Index>(p.dim);
            if (!p.contains(x.segment(off, sz), tol))
                return false;
            off += sz;
        }
        return true;
    }
    }
    return false;
}

Vec ConvexSet::feasible_point() const
{
    const auto n = static_cast<Eigen::Index>(dim);
    switch (kind) {
    case Kind::full:
        return Vec::Zero(n);
    case Kind::box:
        return clamp_box(Vec::Zero(n), lo, hi);
    case Kind::ball:
    case Kind::singleton:
        return center;
    case Kind::halfspace:
        return project(*this, Vec::Zero(n));
    case Kind::product: {
        Vec x(n);
        Eigen::Index off = 0;
        for (const auto& p : parts) {
            const auto sz = static_cast<Eigen::Index>(p.dim);
            x.segment(off, sz) = p.feasible_point();
            off += sz;
        }
        return x;
    }
    }
    return Vec::Zero(n);
}

std::string ConvexSet::kind_name() const
{
    switch (kind) {
    case Kind::full: return "full";
    case Kind::box: return "box";
    case Kind::ball: return "ball";
    case Kind::halfspace: return "halfspace";
    case Kind::singleton: return "singleton";
    case Kind::product: return "product";
    }
    return "unknown";
}

Vec project(const ConvexSet& K, const WeightedNorm& W, const Vec& x)
{
    if (static_cast<std::size_t>(x.size()) != K.dim || W.W.rows() != x.size())
        throw InvalidArgument("project: dimension mismatch");
    switch (K.kind) {
    case ConvexSet::Kind::full:
        return x;
    case ConvexSet::Kind::singleton:
        return K.center;
    case ConvexSet::Kind::box: {
        if (is_diagonal(W.W))
            return clamp_box(x, K.lo, K.hi);
        std::vector<Block> blocks;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            blocks.push_back({i, 1, ConvexSet::box(K.lo.segment(i, 1), K.hi.segment(i, 1))});
        return block_descent(blocks, W.W, x);
    }
    case ConvexSet::Kind::ball:
        return project_ball(K, W.W, x);
    case ConvexSet::Kind::halfspace:
        return project_halfspace(K, W.W, x);
    case ConvexSet::Kind::product: {
        std::vector<Block> blocks;
        Eigen::Index off = 0;
        for (const auto& p : K.parts) {
            const auto sz = static_cast<Eigen::Index>(p.dim);
            blocks.push_back({off, sz, p});
            off += sz;
        }
        bool separable = true;
        for (const auto& a : blocks)
            for (const auto& b : blocks)
                if (a.offset != b.offset && W.W.block(a.offset, b.offset, a.size, b.size).cwiseAbs().maxCoeff() != 0.0)
                    separable = false;
        if (separable) {
            Vec y(x.size());
            for (const auto& b : blocks)
                y.segment(b.offset, b.size) =
                    project(b.set, make_weighted_norm(W.W.block(b.offset, b.offset, b.size, b.size)),
                            x.segment(b.offset, b.size));
            return y;
        }
        return block_descent(blocks, W.W, x);
    }
    }
    throw InvalidArgument("project: unsupported set kind");
}

Vec project(const ConvexSet& K, const Vec& x)
{
    return project(K, WeightedNorm{Mat::Identity(x.size(), x.size()), 1.0}, x);
}

}  // namespace mfb
