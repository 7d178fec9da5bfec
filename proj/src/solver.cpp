#include "mfb/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace mfb {

namespace {

Vec row_mean(const Eigen::Ref<const Mat>& m)
{
    return m.rowwise().sum() / static_cast<double>(m.cols());
}

// Exponent vectors of total degree <= p over v variables, graded then lexicographic.
std::vector<std::vector<int>> monomials(int v, int p, bool with_constant)
{
    std::vector<std::vector<int>> out;
    std::vector<int> e(static_cast<std::size_t>(v), 0);
    for (int total = with_constant ? 0 : 1; total <= p; ++total) {
        // enumerate compositions of `total` into v parts
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == v - 1) {
                e[static_cast<std::size_t>(pos)] = left;
                out.push_back(e);
                return;
            }
            for (int a = left; a >= 0; --a) {
                e[static_cast<std::size_t>(pos)] = a;
                rec(pos + 1, left - a);
            }
        };
        if (v == 0) {
            if (total == 0)
                out.push_back({});
            continue;
        }
        rec(0, total);
    }
    return out;
}

// Rows standardized to zero mean, unit spread; constant rows become zero.
Mat standardized(const Eigen::Ref<const Mat>& s)
{
    Mat out(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mu = s.row(r).mean();
        const double var = (s.row(r).array() - mu).square().mean();
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * (1.0 + std::abs(mu))))
            out.row(r).setZero();
        else
            out.row(r) = (s.row(r).array() - mu) / sd;
    }
    return out;
}

void append_monomials(Mat& F, Eigen::Index& col, const Mat& vars, const std::vector<std::vector<int>>& exps)
{
    const Eigen::Index M = vars.cols();
    for (const auto& e : exps) {
        Eigen::ArrayXd c = Eigen::ArrayXd::Ones(M);
        for (std::size_t j = 0; j < e.size(); ++j)
            for (int a = 0; a < e[j]; ++a)
                c *= vars.row(static_cast<Eigen::Index>(j)).transpose().array();
        F.col(col++) = c.matrix();
    }
}

double hat(double x, int i, int K)
{
    // knots at integers 0..K in scaled coordinates; outer functions extend linearly
    if (i == 0)
        return x < 1.0 ? 1.0 - x : 0.0;
    if (i == K)
        return x > K - 1.0 ? x - (K - 1.0) : 0.0;
    return std::max(0.0, 1.0 - std::abs(x - i));
}

std::size_t check_finite(const Eigen::Ref<const Mat>& m)
{
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (!m.col(j).allFinite())
            return static_cast<std::size_t>(j);
    return static_cast<std::size_t>(-1);
}

void require_compatible(const CoefficientSet& c, const PairProcess& V, const BrownianEnsemble& noise)
{
    const std::size_t nodes = noise.grid.N + 1;
    for (const auto& v : V) {
        if (v.X.particles() != noise.M || v.X.nodes() != nodes || v.X.width() != c.n || v.Y.width() != c.n ||
            v.Z.width() != c.n * c.d || !v.X.same_shape(v.Y) || !v.X.same_shape(v.Yhat) || v.Z.nodes() != nodes || v.Z.particles() != noise.M)
            throw InvalidArgument("solver: process shapes do not match the noise ensemble");
    }
    if (noise.d != c.d)
        throw InvalidArgument("solver: noise dimension does not match coefficients");
    for (int i = 0; i < 2; ++i)
        if (!c.psi[i] || !c.phi[i] || !c.gamma[i])
            throw InvalidArgument("solver: coefficient set incomplete");
}

void backward_impl(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise, const RegressionBasis& basis,
                   std::array<bool, 2> mask, SweepStats* stats)
{
    const std::size_t N = noise.grid.N;
    const double dt = noise.grid.dt;
    const auto n = static_cast<Eigen::Index>(c.n), d = static_cast<Eigen::Index>(c.d);
    const auto M = static_cast<Eigen::Index>(noise.M);

    const NodeContext ctxN = node_context(noise, N);
    for (int i = 0; i < 2; ++i) {
        if (!mask[i])
            continue;
        const Mat term = c.phi[i](ctxN, Mat(V[0].X.at(N)), Mat(V[1].X.at(N)));
        if (term.rows() != n || term.cols() != M)
            throw InvalidArgument("terminal map: wrong output shape");
        if (check_finite(term) != static_cast<std::size_t>(-1))
            throw NumericFailure("backward: nonfinite terminal value");
        V[i].Y.at(N) = term;
        V[i].Yhat.at(N) = term;
        V[i].Z.at(N).setZero();
    }

    for (std::size_t k = N; k-- > 0;) {
        const NodeContext ctx = node_context(noise, k);
        const auto dW = noise.increments.at(k);
        std::array<Mat, 2> yhat, zhat;
        for (int i = 0; i < 2; ++i) {
            if (!mask[i])
                continue;
            const Mat phi = basis_features(basis, noise.path.at(k), ctx.t, V[i].X.at(k));
            const Eigen::Index p = phi.cols();
            Mat design(M, p * (1 + d));
            design.leftCols(p) = phi;
            for (Eigen::Index j = 0; j < d; ++j)
                design.middleCols(p * (1 + j), p) = phi.array().colwise() * dW.row(j).transpose().array();
            const Mat values = V[i].Y.at(k + 1).transpose();
            const RegressionResult reg = regress_conditional(values, design, basis.rank_tol);
            if (stats && reg.dropped > 0) {
                ++stats->reduced_regressions;
                stats->dropped_columns += static_cast<std::size_t>(reg.dropped);
            }
            yhat[i] = (phi * reg.coefficients.topRows(p)).transpose();
            zhat[i].resize(n * d, M);
            for (Eigen::Index j = 0; j < d; ++j)
                zhat[i].middleRows(j * n, n) = (phi * reg.coefficients.middleRows(p * (1 + j), p)).transpose();
        }
        ExtendedStateView view;
        view.mean_x1 = row_mean(V[0].X.at(k));
        view.mean_x2 = row_mean(V[1].X.at(k));
        view.mean_y1 = mask[0] ? row_mean(yhat[0]) : row_mean(V[0].Yhat.at(k));
        view.mean_y2 = mask[1] ? row_mean(yhat[1]) : row_mean(V[1].Yhat.at(k));
        for (int i = 0; i < 2; ++i) {
            if (!mask[i])
                continue;
            view.x = V[i].X.at(k);
            view.y = yhat[i];
            view.z = zhat[i];
            GammaBatch g;
            c.gamma[i](ctx, view, Part::backward, g);
            if (g.f.rows() != n || g.f.cols() != M)
                throw InvalidArgument("generator: wrong backward drift shape");
            V[i].Y.at(k) = yhat[i] - dt * g.f;
            V[i].Z.at(k) = zhat[i];
            V[i].Yhat.at(k) = yhat[i];
            if (check_finite(V[i].Y.at(k)) != static_cast<std::size_t>(-1) ||
                check_finite(V[i].Z.at(k)) != static_cast<std::size_t>(-1))
                throw NumericFailure("backward: nonfinite value at node " + std::to_string(k));
        }
    }
}

void forward_impl(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise, std::array<bool, 2> mask)
{
    const std::size_t N = noise.grid.N;
    const double dt = noise.grid.dt;
    const auto n = static_cast<Eigen::Index>(c.n), d = static_cast<Eigen::Index>(c.d);
    const auto M = static_cast<Eigen::Index>(noise.M);

    const Vec y1 = row_mean(V[0].Y.at(0)), y2 = row_mean(V[1].Y.at(0));
    for (int i = 0; i < 2; ++i) {
        if (!mask[i])
            continue;
        const Vec x0 = c.psi[i](y1, y2);
        if (x0.size() != n)
            throw InvalidArgument("initial map: wrong output length");
        if (!x0.allFinite())
            throw NumericFailure("forward: nonfinite initial value");
        V[i].X.at(0).colwise() = x0;
    }

    for (std::size_t k = 0; k < N; ++k) {
        const NodeContext ctx = node_context(noise, k);
        const auto dW = noise.increments.at(k);
        ExtendedStateView view;
        view.mean_x1 = row_mean(V[0].X.at(k));
        view.mean_x2 = row_mean(V[1].X.at(k));
        view.mean_y1 = row_mean(V[0].Yhat.at(k));
        view.mean_y2 = row_mean(V[1].Yhat.at(k));
        std::array<GammaBatch, 2> g;
        for (int i = 0; i < 2; ++i) {
            if (!mask[i])
                continue;
            view.x = V[i].X.at(k);
            view.y = V[i].Yhat.at(k);
            view.z = V[i].Z.at(k);
            c.gamma[i](ctx, view, Part::forward, g[i]);
            if (g[i].b.rows() != n || g[i].b.cols() != M || g[i].sigma.rows() != n * d || g[i].sigma.cols() != M)
                throw InvalidArgument("generator: wrong forward coefficient shape");
        }
        for (int i = 0; i < 2; ++i) {
            if (!mask[i])
                continue;
            Mat next = V[i].X.at(k) + dt * g[i].b;
            for (Eigen::Index j = 0; j < d; ++j)
                next.array() += g[i].sigma.middleRows(j * n, n).array().rowwise() * dW.row(j).array();
            if (check_finite(next) != static_cast<std::size_t>(-1))
                throw NumericFailure("forward: nonfinite state at node " + std::to_string(k + 1));
            V[i].X.at(k + 1) = next;
        }
    }
}

PairProcess empty_pair(const CoefficientSet& c, const BrownianEnsemble& noise)
{
    return {TripleProcess(noise.M, noise.grid.N + 1, c.n, c.d), TripleProcess(noise.M, noise.grid.N + 1, c.n, c.d)};
}

void blend(PairProcess& next, const PairProcess& prev, double theta)
{
    auto mix = [theta](EnsembleProcess& a, const EnsembleProcess& b) {
        auto& x = a.data();
        const auto& y = b.data();
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = theta * x[j] + (1.0 - theta) * y[j];
    };
    for (int i = 0; i < 2; ++i) {
        mix(next[i].X, prev[i].X);
        mix(next[i].Y, prev[i].Y);
        mix(next[i].Yhat, prev[i].Yhat);
        mix(next[i].Z, prev[i].Z);
    }
}

// Squared m_norm of a - b (b may be null), accumulated node by node.
double triple_sq(const TripleProcess& a, const TripleProcess* b, double dt)
{
    const std::size_t M = a.X.particles(), nodes = a.X.nodes();
    if (M == 0)
        return 0.0;
    std::vector<double> sx(M, 0.0), sy(M, 0.0), iz(M, 0.0);
    for (std::size_t k = 0; k < nodes; ++k) {
        const auto X = a.X.at(k), Y = a.Y.at(k), Z = a.Z.at(k);
        for (std::size_t m = 0; m < M; ++m) {
            const auto mi = static_cast<Eigen::Index>(m);
            double x, y, z = 0.0;
            if (b) {
                x = (X.col(mi) - b->X.at(k).col(mi)).squaredNorm();
                y = (Y.col(mi) - b->Y.at(k).col(mi)).squaredNorm();
                if (k + 1 < nodes)
                    z = (Z.col(mi) - b->Z.at(k).col(mi)).squaredNorm();
            } else {
                x = X.col(mi).squaredNorm();
                y = Y.col(mi).squaredNorm();
                if (k + 1 < nodes)
                    z = Z.col(mi).squaredNorm();
            }
            sx[m] = std::max(sx[m], x);
            sy[m] = std::max(sy[m], y);
            iz[m] += z * dt;
        }
    }
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m)
        total += sx[m] + sy[m] + iz[m];
    return total / static_cast<double>(M);
}

// X^T X; rows are accumulated over their nonzeros when the design is mostly zero (hat bases).
Mat gram(const Mat& X)
{
    const Eigen::Index M = X.rows(), p = X.cols();
    const auto zeros = (X.array() == 0.0).count();
    Mat G = Mat::Zero(p, p);
    if (2 * zeros < M * p) {
        G.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        return G.selfadjointView<Eigen::Lower>();
    }
    const Mat Xt = X.transpose();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
    for (Eigen::Index m = 0; m < M; ++m) {
        const double* row = Xt.col(m).data();
        std::size_t nnz = 0;
        for (Eigen::Index j = 0; j < p; ++j)
            if (row[j] != 0.0)
                idx[nnz++] = j;
        for (std::size_t a = 0; a < nnz; ++a) {
            const double va = row[idx[a]];
            for (std::size_t b = 0; b <= a; ++b)
                G(idx[a], idx[b]) += va * row[idx[b]];
        }
    }
    return G.selfadjointView<Eigen::Lower>();
}

double quantile_sorted(const std::vector<double>& v, double q)
{
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string to_string(BasisKind k)
{
    switch (k) {
    case BasisKind::polynomial_noise: return "polynomial-in-noise";
    case BasisKind::polynomial_state: return "polynomial-in-state";
    case BasisKind::joint: return "joint";
    case BasisKind::hat_noise: return "hat-noise";
    }
    return "joint";
}

BasisKind basis_kind_from(const std::string& name)
{
    if (name == "polynomial-in-noise")
        return BasisKind::polynomial_noise;
    if (name == "polynomial-in-state")
        return BasisKind::polynomial_state;
    if (name == "joint")
        return BasisKind::joint;
    if (name == "hat-noise")
        return BasisKind::hat_noise;
    throw InvalidArgument("unknown basis kind '" + name + "'");
}

Mat basis_features(const RegressionBasis& b, const Eigen::Ref<const Mat>& w, double t, const Eigen::Ref<const Mat>& state)
{
    if (b.degree < 0 || b.cells < 1 || b.state_degree < 0)
        throw InvalidArgument("basis: degree must be >= 0 and cells >= 1");
    const Eigen::Index M = w.cols();
    if (state.cols() != M)
        throw InvalidArgument("basis: noise and state batches differ");
    Mat wn = Mat::Zero(w.rows(), M);
    if (t > 0.0)
        wn = w / std::sqrt(t);
    const Mat s = standardized(state);
    const auto dn = static_cast<int>(w.rows()), ds = static_cast<int>(state.rows());

    if (b.kind == BasisKind::hat_noise) {
        const int K = b.cells;
        const auto exps = monomials(ds, b.state_degree, false);
        const Eigen::Index p = static_cast<Eigen::Index>(K + 1) + static_cast<Eigen::Index>(dn - 1) * K +
                               static_cast<Eigen::Index>(exps.size());
        Mat F(M, p);
        Eigen::Index col = 0;
        for (int j = 0; j < dn; ++j) {
            for (int i = (j == 0 ? 0 : 1); i <= K; ++i) {
                for (Eigen::Index m = 0; m < M; ++m) {
                    const double x = (wn(j, m) + 4.0) / 8.0 * K;
                    F(m, col) = hat(x, i, K);
                }
                ++col;
            }
        }
        append_monomials(F, col, s, exps);
        return F;
    }

    Mat vars;
    if (b.kind == BasisKind::polynomial_noise) {
        vars = wn;
    } else if (b.kind == BasisKind::polynomial_state) {
        vars = s;
    } else {
        vars.resize(wn.rows() + s.rows(), M);
        vars << wn, s;
    }
    return polynomial_features(vars, b.degree);
}

Mat polynomial_features(const Eigen::Ref<const Mat>& vars, int degree)
{
    if (degree < 0)
        throw InvalidArgument("basis: degree must be >= 0");
    const auto exps = monomials(static_cast<int>(vars.rows()), degree, true);
    Mat F(vars.cols(), static_cast<Eigen::Index>(exps.size()));
    Eigen::Index col = 0;
    append_monomials(F, col, vars, exps);
    return F;
}

RegressionResult regress_conditional(const Mat& values, const Mat& features, double rank_tol)
{
    const Eigen::Index M = features.rows(), p = features.cols();
    if (values.rows() != M)
        throw InvalidArgument("regression: values and features have different particle counts");
    if (p == 0)
        throw InvalidArgument("regression: no features");
    if (M < p)
        throw NumericFailure("regression: fewer particles (" + std::to_string(M) + ") than basis functions (" +
                             std::to_string(p) + ")");
    Mat G = gram(features);
    Vec scale = G.diagonal().cwiseMax(0.0).cwiseSqrt();

    // in-order pivoted Cholesky of the correlation-scaled Gram matrix
    std::vector<Eigen::Index> kept;
    Mat L = Mat::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!(scale(j) > 0.0) || !std::isfinite(scale(j)))
            continue;
        const auto r = static_cast<Eigen::Index>(kept.size());
        Vec v(r);
        for (Eigen::Index a = 0; a < r; ++a)
            v(a) = G(kept[static_cast<std::size_t>(a)], j) / (scale(kept[static_cast<std::size_t>(a)]) * scale(j));
        Vec y = v;
        if (r > 0)
            L.topLeftCorner(r, r).triangularView<Eigen::Lower>().solveInPlace(y);
        const double pivot = 1.0 - y.squaredNorm();
        if (!(pivot > rank_tol))
            continue;
        L.block(r, 0, 1, r) = y.transpose();
        L(r, r) = std::sqrt(pivot);
        kept.push_back(j);
    }
    if (kept.empty())
        throw NumericFailure("regression: design matrix has rank zero");
    const auto r = static_cast<Eigen::Index>(kept.size());
    Mat Xk(M, r);
    Vec sk(r);
    for (Eigen::Index a = 0; a < r; ++a) {
        Xk.col(a) = features.col(kept[static_cast<std::size_t>(a)]);
        sk(a) = scale(kept[static_cast<std::size_t>(a)]);
    }
    const auto Lk = L.topLeftCorner(r, r).triangularView<Eigen::Lower>();
    auto solve = [&](const Mat& rhs) {
        Mat z = sk.asDiagonal().inverse() * (Xk.transpose() * rhs);
        Lk.solveInPlace(z);
        Lk.transpose().solveInPlace(z);
        return Mat(sk.asDiagonal().inverse() * z);
    };
    Mat ck = solve(values);
    const Mat resid = values - Xk * ck;
    ck += solve(resid);

    RegressionResult out;
    out.coefficients = Mat::Zero(p, values.cols());
    for (Eigen::Index a = 0; a < r; ++a)
        out.coefficients.row(kept[static_cast<std::size_t>(a)]) = ck.row(a);
    out.fitted = Xk * ck;
    out.kept = std::move(kept);
    out.dropped = p - r;
    return out;
}

void validate(const SolverConfig& cfg)
{
    if (cfg.particles < 1 || cfg.steps < 1)
        throw InvalidArgument("solver config: particles and steps must be positive");
    if (!(cfg.picard_tol > 0.0))
        throw InvalidArgument("solver config: picard_tol must be positive");
    if (cfg.picard_max < 1)
        throw InvalidArgument("solver config: picard_max must be positive");
    if (!(cfg.damping > 0.0 && cfg.damping <= 1.0))
        throw InvalidArgument("solver config: damping must lie in (0,1]");
    if (cfg.alpha_schedule.empty() || cfg.alpha_schedule.front() != 0.0)
        throw InvalidArgument("solver config: alpha schedule must start at 0");
    for (std::size_t j = 1; j < cfg.alpha_schedule.size(); ++j)
        if (!(cfg.alpha_schedule[j] > cfg.alpha_schedule[j - 1]))
            throw InvalidArgument("solver config: alpha schedule must be increasing");
    if (cfg.alpha_schedule.back() > 1.0)
        throw InvalidArgument("solver config: alpha schedule must end at or below 1");
    if (!(cfg.alpha_floor > 0.0))
        throw InvalidArgument("solver config: alpha floor must be positive");
    if (cfg.basis.degree < 0 || cfg.basis.cells < 1 || cfg.basis.state_degree < 0)
        throw InvalidArgument("solver config: invalid regression basis");
}

PairProcess initial_iterate(const CoefficientSet& c, const BrownianEnsemble& noise)
{
    PairProcess V = empty_pair(c, noise);
    require_compatible(c, V, noise);
    forward_impl(c, V, noise, {true, true});
    return V;
}

EnsembleProcess forward_solve(const CoefficientSet& c, const PairProcess& frozen, const BrownianEnsemble& noise, int eq)
{
    if (eq != 0 && eq != 1)
        throw InvalidArgument("forward_solve: equation index must be 0 or 1");
    require_compatible(c, frozen, noise);
    PairProcess V = frozen;
    forward_impl(c, V, noise, {eq == 0, eq == 1});
    return std::move(V[static_cast<std::size_t>(eq)].X);
}

std::array<EnsembleProcess, 2> backward_solve(const CoefficientSet& c, const PairProcess& frozen,
                                              const BrownianEnsemble& noise, const RegressionBasis& basis, int eq)
{
    if (eq != 0 && eq != 1)
        throw InvalidArgument("backward_solve: equation index must be 0 or 1");
    require_compatible(c, frozen, noise);
    PairProcess V = frozen;
    backward_impl(c, V, noise, basis, {eq == 0, eq == 1}, nullptr);
    auto& v = V[static_cast<std::size_t>(eq)];
    return {std::move(v.Y), std::move(v.Z)};
}

void backward_sweep(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise,
                    const RegressionBasis& basis, SweepStats* stats)
{
    require_compatible(c, V, noise);
    backward_impl(c, V, noise, basis, {true, true}, stats);
}

void forward_sweep(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise)
{
    require_compatible(c, V, noise);
    forward_impl(c, V, noise, {true, true});
}

double pair_distance(const PairProcess& a, const PairProcess& b, double dt)
{
    return std::sqrt(triple_sq(a[0], &b[0], dt) + triple_sq(a[1], &b[1], dt));
}

double pair_norm(const PairProcess& v, double dt)
{
    return std::sqrt(triple_sq(v[0], nullptr, dt) + triple_sq(v[1], nullptr, dt));
}

Solution picard_solve(const CoefficientSet& c, const BrownianEnsemble& noise, const SolverConfig& cfg,
                      const PairProcess* warm)
{
    validate(cfg);
    const auto start = std::chrono::steady_clock::now();
    const double dt = noise.grid.dt;
    Solution sol;
    if (warm) {
        require_compatible(c, *warm, noise);
        sol.V = *warm;
    } else {
        sol.V = initial_iterate(c, noise);
    }
    SolveReport& rep = sol.report;
    for (std::size_t k = 0; k < cfg.picard_max; ++k) {
        PairProcess next = sol.V;
        SweepStats stats;
        backward_impl(c, next, noise, cfg.basis, {true, true}, &stats);
        forward_impl(c, next, noise, {true, true});
        if (cfg.damping < 1.0)
            blend(next, sol.V, cfg.damping);
        const double diff = pair_distance(next, sol.V, dt);
        const double scale = pair_norm(next, dt);
        const double res = diff == 0.0 ? 0.0 : diff / std::max(scale, 1e-300);
        if (!rep.residuals.empty())
            rep.ratios.push_back(rep.residuals.back() > 0.0 ? res / rep.residuals.back() : 0.0);
        rep.residuals.push_back(res);
        rep.reduced_regressions = stats.reduced_regressions;
        rep.dropped_columns = stats.dropped_columns;
        sol.V = std::move(next);
        ++rep.iterations;
        if (!std::isfinite(res) || res > cfg.divergence_bound)
            throw NonConvergence("picard iteration diverged (residual " + format_number(res) + ")", rep.residuals);
        if (res < cfg.picard_tol) {
            rep.converged = true;
            break;
        }
    }
    if (!rep.converged)
        throw NonConvergence("picard iteration limit reached (residual " + format_number(rep.residuals.back()) + ")",
                             rep.residuals);
    rep.final_residual = rep.residuals.back();
    rep.stage_iterations.push_back(rep.iterations);
    rep.stage_residuals.push_back(rep.residuals);
    rep.lambda_norms = {m_norm(sol.V[0], dt), m_norm(sol.V[1], dt)};
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sol;
}

Solution continuation_solve(const CoefficientSet& c, const CoefficientSet& c0, const BrownianEnsemble& noise,
                            const SolverConfig& cfg, const PerturbationData& forcing)
{
    validate(cfg);
    const auto start = std::chrono::steady_clock::now();
    SolveReport rep;
    std::vector<double> trace;
    auto attempt = [&](double alpha, const PairProcess* warm) {
        return picard_solve(interpolate(c, c0, alpha, forcing), noise, cfg, warm);
    };
    auto absorb = [&](Solution& s, double alpha) {
        rep.alpha_trace.push_back(alpha);
        rep.stage_iterations.push_back(s.report.iterations);
        rep.stage_residuals.push_back(s.report.residuals);
        rep.iterations += s.report.iterations;
        rep.residuals = s.report.residuals;
        rep.ratios = s.report.ratios;
        rep.final_residual = s.report.final_residual;
        rep.reduced_regressions = s.report.reduced_regressions;
        rep.dropped_columns = s.report.dropped_columns;
        trace.insert(trace.end(), s.report.residuals.begin(), s.report.residuals.end());
    };

    Solution cur;
    try {
        cur = attempt(0.0, nullptr);
    } catch (const NonConvergence& e) {
        trace.insert(trace.end(), e.trace.begin(), e.trace.end());
        throw NonConvergence(std::string("continuation: base system failed: ") + e.what(), trace);
    }
    absorb(cur, 0.0);
    double prev = 0.0;
    for (std::size_t j = 1; j < cfg.alpha_schedule.size(); ++j) {
        const double target = cfg.alpha_schedule[j];
        double next = target;
        while (prev < target) {
            bool ok = false;
            Solution s;
            try {
                s = attempt(next, &cur.V);
                ok = true;
            } catch (const NonConvergence& e) {
                trace.insert(trace.end(), e.trace.begin(), e.trace.end());
            } catch (const NumericFailure&) {
            }
            if (ok) {
                absorb(s, next);
                cur = std::move(s);
                prev = next;
                next = target;
                continue;
            }
            const double h = 0.5 * (next - prev);
            if (h < cfg.alpha_floor)
                throw NonConvergence("continuation: alpha step fell below the floor at alpha=" + format_number(prev),
                                     trace);
            next = prev + h;
        }
    }
    rep.converged = true;
    rep.lambda_norms = {m_norm(cur.V[0], noise.grid.dt), m_norm(cur.V[1], noise.grid.dt)};
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cur.report = std::move(rep);
    return cur;
}

std::vector<double> stability_probe(const CoefficientSet& c, const PerturbationData& beta,
                                    const std::vector<double>& sizes, const BrownianEnsemble& noise,
                                    const SolverConfig& cfg)
{
    const Solution base = picard_solve(c, noise, cfg);
    std::vector<double> out;
    out.reserve(sizes.size());
    for (double s : sizes) {
        if (s == 0.0) {
            out.push_back(0.0);
            continue;
        }
        const Solution sol = picard_solve(interpolate(c, c, 1.0, scaled(beta, s)), noise, cfg, &base.V);
        out.push_back(pair_distance(sol.V, base.V, noise.grid.dt) / std::abs(s));
    }
    return out;
}

std::string trajectory_csv(const PairProcess& V, const TimeGrid& grid)
{
    std::ostringstream os;
    struct Col {
        const EnsembleProcess* p;
        std::string name;
    };
    const std::vector<Col> cols = {{&V[0].X, "X1"}, {&V[0].Y, "Y1"}, {&V[0].Z, "Z1"},
                                   {&V[1].X, "X2"}, {&V[1].Y, "Y2"}, {&V[1].Z, "Z2"}};
    os << "t";
    for (const auto& c : cols) {
        for (std::size_t j = 0; j < c.p->width(); ++j) {
            const std::string base = c.p->width() == 1 ? c.name : c.name + "_" + std::to_string(j);
            os << ',' << base << "_mean," << base << "_q05," << base << "_q50," << base << "_q95";
        }
    }
    os << '\n';
    const std::size_t nodes = V[0].X.nodes();
    std::vector<double> buf;
    for (std::size_t k = 0; k < nodes; ++k) {
        os << format_number(grid.t(k));
        for (const auto& c : cols) {
            const auto block = c.p->at(k);
            for (Eigen::Index j = 0; j < block.rows(); ++j) {
                buf.resize(static_cast<std::size_t>(block.cols()));
                double sum = 0.0;
                for (Eigen::Index m = 0; m < block.cols(); ++m) {
                    buf[static_cast<std::size_t>(m)] = block(j, m);
                    sum += block(j, m);
                }
                std::sort(buf.begin(), buf.end());
                os << ',' << format_number(sum / static_cast<double>(buf.size())) << ','
                   << format_number(quantile_sorted(buf, 0.05)) << ',' << format_number(quantile_sorted(buf, 0.50))
                   << ',' << format_number(quantile_sorted(buf, 0.95));
            }
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace mfb
