#include "mfb/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfb {

namespace {

Vec row_mean(const Eigen::Ref<const Mat>& m)
{
    return m.rowwise().sum() / static_cast<double>(m.cols());
}

void require_controls(const LinearDynamics& dyn, const ControlQuartet& q, std::size_t M, std::size_t N)
{
    for (int i = 0; i < 2; ++i) {
        if (q.xi[i].size() != static_cast<Eigen::Index>(dyn.m))
            throw InvalidArgument("controls: xi" + std::to_string(i + 1) + " has wrong length");
        if (q.u[i].width() != dyn.k || q.u[i].particles() != M || q.u[i].nodes() < N)
            throw InvalidArgument("controls: u" + std::to_string(i + 1) + " has wrong shape");
    }
}

void require_states(const std::array<EnsembleProcess, 2>& X, std::size_t n, std::size_t M, std::size_t N)
{
    for (const auto& x : X)
        if (x.width() != n || x.particles() != M || x.nodes() != N + 1)
            throw InvalidArgument("states: wrong shape");
}

double finite_or_throw(double v, const std::string& what)
{
    if (!std::isfinite(v))
        throw AdmissibilityViolation(what + " is not finite");
    return v;
}

void finish(CostBreakdown& c)
{
    c.total = c.initial + c.terminal + c.running_state + c.running_control;
    finite_or_throw(c.total, "cost");
}

double paired_tolerance(const std::vector<double>& a, const std::vector<double>& b)
{
    const std::size_t M = a.size();
    if (M < 2 || b.size() != M)
        return 0.0;
    double mean = 0.0;
    for (std::size_t m = 0; m < M; ++m)
        mean += a[m] - b[m];
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double e = a[m] - b[m] - mean;
        var += e * e;
    }
    var /= static_cast<double>(M - 1);
    return 3.0 * std::sqrt(var / static_cast<double>(M));
}

double control_deviation(const ControlQuartet& a, const ControlQuartet& b, std::size_t N, double dt)
{
    double s = 0.0;
    for (int i = 0; i < 2; ++i) {
        const std::size_t M = a.u[i].particles();
        for (std::size_t k = 0; k < N; ++k)
            s += (a.u[i].at(k) - b.u[i].at(k)).squaredNorm() * dt / static_cast<double>(M);
    }
    return s;
}

GapEntry gap_entry(const CostBreakdown& q, const CostBreakdown& opt, double deviation, double delta)
{
    GapEntry e;
    e.gap = q.total - opt.total;
    e.deviation = deviation;
    e.bound = 0.5 * delta * deviation;
    e.mc_tol = paired_tolerance(q.per_particle, opt.per_particle);
    e.margin_bound = e.gap - e.bound + e.mc_tol;
    e.margin_positive = e.gap + e.mc_tol;
    return e;
}

}  // namespace

double CostBreakdown::std_error() const
{
    const std::size_t M = per_particle.size();
    if (M < 2)
        return 0.0;
    double mean = 0.0;
    for (double v : per_particle)
        mean += v;
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (double v : per_particle)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(M - 1);
    return std::sqrt(var / static_cast<double>(M));
}

ControlQuartet extract_lc_controls(const PairProcess& V, const LCProblemData& lc, const TimeGrid& grid, double tol)
{
    const std::size_t N = grid.N, M = V[0].X.particles();
    ControlQuartet q;
    q.xi = lc_initial_controls(lc, row_mean(V[0].Y.at(0)), row_mean(V[1].Y.at(0)), tol);
    for (int i = 0; i < 2; ++i) {
        q.u[i] = EnsembleProcess(M, N, lc.dyn.k);
        for (std::size_t k = 0; k < N; ++k) {
            const Mat y = V[i].Yhat.at(k);
            q.u[i].at(k) = lc_feedback(lc, i, grid.t(k), y, row_mean(y), Mat(V[i].Z.at(k)), tol);
        }
    }
    return q;
}

ControlQuartet extract_lqic_controls(const PairProcess& V, const LQICProblemData& lq, const TimeGrid& grid)
{
    const std::size_t N = grid.N, M = V[0].X.particles();
    ControlQuartet q;
    q.xi = lqic_initial_controls(lq, row_mean(V[0].Y.at(0)), row_mean(V[1].Y.at(0)));
    for (int i = 0; i < 2; ++i) {
        q.u[i] = EnsembleProcess(M, N, lq.dyn.k);
        for (std::size_t k = 0; k < N; ++k) {
            const Mat y = V[i].Yhat.at(k);
            q.u[i].at(k) = lqic_feedback(lq, i, grid.t(k), y, row_mean(y), Mat(V[i].Z.at(k)));
        }
    }
    return q;
}

ControlQuartet zero_controls(const LinearDynamics& dyn, const BrownianEnsemble& noise)
{
    ControlQuartet q;
    for (int i = 0; i < 2; ++i) {
        q.xi[i] = Vec::Zero(static_cast<Eigen::Index>(dyn.m));
        q.u[i] = EnsembleProcess(noise.M, noise.grid.N, dyn.k);
    }
    return q;
}

std::array<EnsembleProcess, 2> simulate_state(const LinearDynamics& dyn, const ControlQuartet& q,
                                              const BrownianEnsemble& noise)
{
    const std::size_t N = noise.grid.N, M = noise.M;
    const double dt = noise.grid.dt;
    if (noise.d != dyn.d)
        throw InvalidArgument("simulate_state: noise dimension mismatch");
    require_controls(dyn, q, M, N);
    const auto n = static_cast<Eigen::Index>(dyn.n), d = static_cast<Eigen::Index>(dyn.d);
    const auto Mi = static_cast<Eigen::Index>(M);
    std::array<EnsembleProcess, 2> X{EnsembleProcess(M, N + 1, dyn.n), EnsembleProcess(M, N + 1, dyn.n)};
    for (int i = 0; i < 2; ++i)
        X[i].at(0).colwise() = Vec(dyn.H * q.xi[i] + dyn.x0);
    for (std::size_t k = 0; k < N; ++k) {
        const NodeContext ctx = node_context(noise, k);
        const double t = ctx.t;
        const auto dW = noise.increments.at(k);
        const Vec mx1 = row_mean(X[0].at(k)), mx2 = row_mean(X[1].at(k));
        for (int i = 0; i < 2; ++i) {
            const auto x = X[i].at(k);
            const auto u = q.u[i].at(k);
            Mat drift = dyn.A[i](t) * x + dyn.B[i](t) * u;
            Vec mean_term = i == 0 ? Vec(dyn.Abar[1](t) * mx2 + dyn.Abar[0](t) * mx1) : Vec(dyn.Abar[1](t) * mx1);
            if (dyn.tau != 0.0)
                mean_term += dyn.tau * dyn.Bbar[i](t) * row_mean(u);
            drift.colwise() += mean_term;
            if (dyn.rho[i])
                drift += field_or_zero(dyn.rho[i], ctx, n, Mi);
            Mat sigma = dyn.C[i](t) * x + dyn.D[i](t) * u;
            if (dyn.kappa[i])
                sigma += field_or_zero(dyn.kappa[i], ctx, n * d, Mi);
            Mat next = x + dt * drift;
            for (Eigen::Index j = 0; j < d; ++j)
                next.array() += sigma.middleRows(j * n, n).array().rowwise() * dW.row(j).array();
            if (!next.allFinite())
                throw NumericFailure("simulate_state: nonfinite state at node " + std::to_string(k + 1));
            X[i].at(k + 1) = next;
        }
    }
    return X;
}

CostBreakdown cost_lc(const LCProblemData& lc, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                      const TimeGrid& grid)
{
    const std::size_t N = grid.N, M = X[0].particles();
    const double dt = grid.dt, tau = lc.dyn.tau;
    require_controls(lc.dyn, q, M, N);
    require_states(X, lc.dyn.n, M, N);
    CostBreakdown c;
    c.initial = finite_or_throw(lc.f11.eval(q.xi[0] + tau * q.xi[1]) + lc.f12.eval(q.xi[1] + tau * q.xi[0]),
                                "initial cost");
    c.per_particle.assign(M, 0.0);
    const double w = 1.0 / static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m) {
        const Vec S = X[0](m, N) + X[1](m, N);
        const double v = lc.f21.eval(S) + lc.f22.eval(S);
        c.terminal += v * w;
        c.per_particle[m] += v;
    }
    for (std::size_t k = 0; k < N; ++k) {
        const double t = grid.t(k);
        for (int i = 0; i < 2; ++i) {
            const ConvexFunction f3 = lc.f3[i].at(t);
            const ConvexFunction f4 = lc.f4[i].at(t);
            for (std::size_t m = 0; m < M; ++m) {
                const double a = f3.identically_zero ? 0.0 : f3.eval(Vec(X[i](m, k))) * dt;
                const double b = f4.eval(Vec(q.u[i](m, k))) * dt;
                c.running_state += a * w;
                c.running_control += b * w;
                c.per_particle[m] += a + b;
            }
        }
    }
    finite_or_throw(c.terminal, "terminal cost");
    finite_or_throw(c.running_state, "running state cost");
    finite_or_throw(c.running_control, "running control cost");
    finish(c);
    return c;
}

void require_admissible(const LQICProblemData& lq, const ControlQuartet& q, const TimeGrid& grid, double tol)
{
    for (int i = 0; i < 2; ++i)
        if (!lq.U0.contains(q.xi[i], tol))
            throw AdmissibilityViolation("xi" + std::to_string(i + 1) + " lies outside U0");
    for (std::size_t k = 0; k < grid.N; ++k) {
        const ConvexSet U = lq.U(grid.t(k));
        if (U.kind == ConvexSet::Kind::full)
            continue;
        for (int i = 0; i < 2; ++i)
            for (std::size_t m = 0; m < q.u[i].particles(); ++m)
                if (!U.contains(Vec(q.u[i](m, k)), tol))
                    throw AdmissibilityViolation("u" + std::to_string(i + 1) + " leaves U at node " +
                                                 std::to_string(k) + ", particle " + std::to_string(m));
    }
}

CostBreakdown cost_lqic(const LQICProblemData& lq, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                        const TimeGrid& grid)
{
    const std::size_t N = grid.N, M = X[0].particles();
    const double dt = grid.dt;
    require_controls(lq.dyn, q, M, N);
    require_states(X, lq.dyn.n, M, N);
    require_admissible(lq, q, grid);
    CostBreakdown c;
    for (int i = 0; i < 2; ++i)
        c.initial += 0.5 * q.xi[i].dot(lq.M[i] * q.xi[i]);
    c.per_particle.assign(M, 0.0);
    const double w = 1.0 / static_cast<double>(M);
    const bool g_const = !lq.G[0].fn && !lq.G[1].fn;
    const Mat Gc = g_const ? Mat(lq.G[0].value + lq.G[1].value) : Mat();
    for (std::size_t m = 0; m < M; ++m) {
        const Vec S = X[0](m, N) + X[1](m, N);
        const Mat G = g_const ? Gc : Mat(lq.G[0](m) + lq.G[1](m));
        const double v = 0.5 * S.dot(G * S);
        c.terminal += v * w;
        c.per_particle[m] += v;
    }
    for (std::size_t k = 0; k < N; ++k) {
        const double t = grid.t(k);
        for (int i = 0; i < 2; ++i) {
            const Mat Q = lq.Q[i](t), R = lq.R[i](t);
            const auto x = X[i].at(k);
            const auto u = q.u[i].at(k);
            for (std::size_t m = 0; m < M; ++m) {
                const auto mi = static_cast<Eigen::Index>(m);
                const double a = 0.5 * x.col(mi).dot(Q * x.col(mi)) * dt;
                const double b = 0.5 * u.col(mi).dot(R * u.col(mi)) * dt;
                c.running_state += a * w;
                c.running_control += b * w;
                c.per_particle[m] += a + b;
            }
        }
    }
    finish(c);
    return c;
}

bool GapReport::passed() const
{
    for (const auto& e : entries)
        if (e.margin_bound < 0.0 || e.margin_positive < 0.0)
            return false;
    return true;
}

GapReport optimality_gap_check(const LCProblemData& lc, const ControlQuartet& q_opt,
                               const std::vector<ControlQuartet>& perturbations, const BrownianEnsemble& noise)
{
    const TimeGrid& grid = noise.grid;
    GapReport r;
    r.delta = std::min({lc.f11.delta, lc.f12.delta, lc.f4[0].delta, lc.f4[1].delta});
    const CostBreakdown opt = cost_lc(lc, q_opt, simulate_state(lc.dyn, q_opt, noise), grid);
    r.optimal_cost = opt.total;
    const double tau = lc.dyn.tau;
    for (const auto& q : perturbations) {
        const CostBreakdown c = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), grid);
        const Vec d1 = q.xi[0] - q_opt.xi[0], d2 = q.xi[1] - q_opt.xi[1];
        const double dev = (d1 + tau * d2).squaredNorm() + (tau * d1 + d2).squaredNorm() +
                           control_deviation(q, q_opt, grid.N, grid.dt);
        r.entries.push_back(gap_entry(c, opt, dev, r.delta));
    }
    return r;
}

GapReport optimality_gap_check(const LQICProblemData& lq, const ControlQuartet& q_opt,
                               const std::vector<ControlQuartet>& perturbations, const BrownianEnsemble& noise)
{
    const TimeGrid& grid = noise.grid;
    GapReport r;
    r.delta = lq.delta;
    const CostBreakdown opt = cost_lqic(lq, q_opt, simulate_state(lq.dyn, q_opt, noise), grid);
    r.optimal_cost = opt.total;
    for (const auto& q : perturbations) {
        const CostBreakdown c = cost_lqic(lq, q, simulate_state(lq.dyn, q, noise), grid);
        const double dev = (q.xi[0] - q_opt.xi[0]).squaredNorm() + (q.xi[1] - q_opt.xi[1]).squaredNorm() +
                           control_deviation(q, q_opt, grid.N, grid.dt);
        r.entries.push_back(gap_entry(c, opt, dev, r.delta));
    }
    return r;
}

DualityReport duality_residual(const PairProcess& V, const LCProblemData& lc, const ControlQuartet& q_opt,
                               const ControlQuartet& q, const BrownianEnsemble& noise)
{
    const TimeGrid& grid = noise.grid;
    const std::size_t N = grid.N, M = noise.M;
    const double dt = grid.dt, w = 1.0 / static_cast<double>(M);
    const auto& dyn = lc.dyn;
    const auto Xs = simulate_state(dyn, q_opt, noise);
    const auto X = simulate_state(dyn, q, noise);
    DualityReport r;
    for (std::size_t m = 0; m < M; ++m) {
        const Vec Ss = Xs[0](m, N) + Xs[1](m, N);
        const Vec dS = X[0](m, N) + X[1](m, N) - Ss;
        r.lhs += (lc.f21.grad(Ss) + lc.f22.grad(Ss)).dot(dS) * w;
    }
    for (std::size_t k = 0; k < N; ++k) {
        const double t = grid.t(k);
        for (int i = 0; i < 2; ++i) {
            const ConvexFunction f3 = lc.f3[i].at(t);
            if (f3.identically_zero)
                continue;
            for (std::size_t m = 0; m < M; ++m)
                r.lhs += f3.grad(Vec(Xs[i](m, k))).dot(X[i](m, k) - Xs[i](m, k)) * dt * w;
        }
    }
    for (int i = 0; i < 2; ++i) {
        r.rhs += (dyn.H.transpose() * row_mean(V[i].Y.at(0))).dot(q.xi[i] - q_opt.xi[i]);
        for (std::size_t k = 0; k < N; ++k) {
            const double t = grid.t(k);
            const Mat y = V[i].Yhat.at(k);
            Mat p = dyn.B[i](t).transpose() * y + dyn.D[i](t).transpose() * V[i].Z.at(k);
            if (dyn.tau != 0.0)
                p.colwise() += Vec(dyn.tau * dyn.Bbar[i](t).transpose() * row_mean(y));
            r.rhs += (p.array() * (q.u[i].at(k) - q_opt.u[i].at(k)).array()).sum() * dt * w;
        }
    }
    r.residual = std::abs(r.lhs - r.rhs);
    r.scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
    return r;
}

double relative_l2(const EnsembleProcess& a, const EnsembleProcess& b, std::size_t nodes)
{
    if (a.particles() != b.particles() || a.width() != b.width() || a.nodes() < nodes || b.nodes() < nodes)
        throw InvalidArgument("relative_l2: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
        num += (a.at(k) - b.at(k)).squaredNorm();
        den += b.at(k).squaredNorm();
    }
    if (den == 0.0)
        return num == 0.0 ? 0.0 : std::sqrt(num);
    return std::sqrt(num / den);
}

std::string controls_csv(const ControlQuartet& q, const TimeGrid& grid)
{
    std::ostringstream os;
    os << "t";
    for (int i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < q.u[i].width(); ++j) {
            const std::string base =
                "u" + std::to_string(i + 1) + (q.u[i].width() == 1 ? std::string() : "_" + std::to_string(j));
            os << ',' << base << "_mean," << base << "_q05," << base << "_q50," << base << "_q95";
        }
    os << '\n';
    std::vector<double> buf;
    auto quant = [&](double p) {
        const double h = p * static_cast<double>(buf.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, buf.size() - 1);
        return buf[lo] + (h - static_cast<double>(lo)) * (buf[hi] - buf[lo]);
    };
    for (std::size_t k = 0; k < grid.N; ++k) {
        os << format_number(grid.t(k));
        for (int i = 0; i < 2; ++i) {
            const auto block = q.u[i].at(k);
            for (Eigen::Index j = 0; j < block.rows(); ++j) {
                buf.resize(static_cast<std::size_t>(block.cols()));
                double sum = 0.0;
                for (Eigen::Index m = 0; m < block.cols(); ++m) {
                    buf[static_cast<std::size_t>(m)] = block(j, m);
                    sum += block(j, m);
                }
                std::sort(buf.begin(), buf.end());
                os << ',' << format_number(sum / static_cast<double>(buf.size())) << ',' << format_number(quant(0.05))
                   << ',' << format_number(quant(0.5)) << ',' << format_number(quant(0.95));
            }
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace mfb
