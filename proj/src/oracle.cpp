#include "mfb/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace mfb {

namespace {

double defining_map(double u, double w)
{
    const double g = std::copysign(std::expm1(std::abs(u)), u);
    return g + u + w;
}

Vec row_mean(const Eigen::Ref<const Mat>& m)
{
    return m.rowwise().sum() / static_cast<double>(m.cols());
}

}  // namespace

double implicit_u(double w, double tol)
{
    if (w == 0.0)
        return 0.0;
    // |u| <= |w| / 2 because the map u -> grad f(u) + u has slope >= 2
    double lo = -0.5 * std::abs(w) - 1e-300, hi = 0.5 * std::abs(w) + 1e-300;
    double u = -w / 3.0;
    for (int it = 0; it < 200; ++it) {
        const double F = defining_map(u, w);
        if (std::abs(F) <= tol)
            return u;
        if (F > 0.0)
            hi = u;
        else
            lo = u;
        const double slope = std::exp(std::abs(u)) + 1.0;
        double next = u - F / slope;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (next == u)
            return u;
        u = next;
    }
    return u;
}

OracleSolution example_reference(const BrownianEnsemble& noise, double tol)
{
    if (noise.d != 1)
        throw InvalidArgument("example_reference: needs one-dimensional noise");
    const std::size_t N = noise.grid.N, M = noise.M;
    OracleSolution o;
    o.tol = tol;
    o.V = {TripleProcess(M, N + 1, 1, 1), TripleProcess(M, N + 1, 1, 1)};
    o.u = {EnsembleProcess(M, N, 1), EnsembleProcess(M, N, 1)};
    o.xi = {Vec::Zero(1), Vec::Zero(1)};
    auto& X = o.V[0].X;
    auto& Z = o.V[0].Z;
    for (std::size_t k = 0; k < N; ++k) {
        const auto W = noise.path.at(k);
        const auto dW = noise.increments.at(k);
        for (std::size_t m = 0; m < M; ++m) {
            const auto mi = static_cast<Eigen::Index>(m);
            const double s = std::sin(W(0, mi));
            const double u = implicit_u(s, tol);
            o.max_residual = std::max(o.max_residual, std::abs(defining_map(u, s)));
            o.u[0].at(k)(0, mi) = u;
            Z.at(k)(0, mi) = u + s;
            X.at(k + 1)(0, mi) = X.at(k)(0, mi) + (u + s) * dW(0, mi);
        }
    }
    o.V[0].Y = X;
    o.V[0].Yhat = X;
    o.V[1] = o.V[0];
    o.u[1] = o.u[0];
    return o;
}

double ito_isometry_cost()
{
    // int_0^1 E sin^2 W_s ds with E cos(2 W_s) = e^{-2s}
    return 0.5 - (1.0 - std::exp(-2.0)) / 4.0;
}

CostGradient lqic_gradient(const LQICProblemData& lq, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                           const BrownianEnsemble& noise)
{
    const auto& dyn = lq.dyn;
    const std::size_t N = noise.grid.N, M = noise.M;
    const double dt = noise.grid.dt;
    const auto n = static_cast<Eigen::Index>(dyn.n), d = static_cast<Eigen::Index>(dyn.d);
    const auto Mi = static_cast<Eigen::Index>(M);

    // p(n) = M * dJ/dX(n), particle by particle
    std::array<Mat, 2> p;
    {
        const Mat S = X[0].at(N) + X[1].at(N);
        Mat pN(n, Mi);
        if (!lq.G[0].fn && !lq.G[1].fn) {
            pN = (lq.G[0].value + lq.G[1].value) * S;
        } else {
            for (Eigen::Index m = 0; m < Mi; ++m)
                pN.col(m) = (lq.G[0](static_cast<std::size_t>(m)) + lq.G[1](static_cast<std::size_t>(m))) * S.col(m);
        }
        p = {pN, pN};
    }
    CostGradient g;
    g.u = {EnsembleProcess(M, N, dyn.k), EnsembleProcess(M, N, dyn.k)};
    for (std::size_t k = N; k-- > 0;) {
        const double t = noise.grid.t(k);
        const auto dW = noise.increments.at(k);
        const Vec mp0 = row_mean(p[0]), mp1 = row_mean(p[1]);
        std::array<Mat, 2> prev;
        for (int i = 0; i < 2; ++i) {
            const Vec& mp = i == 0 ? mp0 : mp1;
            const Mat D = dyn.D[i](t), C = dyn.C[i](t);
            Mat gu = lq.R[i](t) * q.u[i].at(k) + dyn.B[i](t).transpose() * p[i];
            for (Eigen::Index j = 0; j < d; ++j)
                gu += D.middleRows(j * n, n).transpose() * (p[i].array().rowwise() * dW.row(j).array()).matrix() / dt;
            if (dyn.tau != 0.0)
                gu.colwise() += Vec(dyn.tau * dyn.Bbar[i](t).transpose() * mp);
            g.u[i].at(k) = gu;

            Mat pk = p[i] + dt * (dyn.A[i](t).transpose() * p[i] + lq.Q[i](t) * X[i].at(k));
            for (Eigen::Index j = 0; j < d; ++j)
                pk.array() += (C.middleRows(j * n, n).transpose() * p[i]).array().rowwise() * dW.row(j).array();
            const Vec mean_term = i == 0 ? Vec(dyn.Abar[0](t).transpose() * mp0 + dyn.Abar[1](t).transpose() * mp1)
                                         : Vec(dyn.Abar[1](t).transpose() * mp0);
            pk.colwise() += dt * mean_term;
            prev[static_cast<std::size_t>(i)] = std::move(pk);
        }
        p = std::move(prev);
    }
    for (int i = 0; i < 2; ++i)
        g.xi[i] = lq.M[i] * q.xi[i] + dyn.H.transpose() * row_mean(p[i]);
    return g;
}

Mat history_features(const BrownianEnsemble& noise, std::size_t node, int degree)
{
    const auto d = static_cast<Eigen::Index>(noise.d);
    Mat vars(static_cast<Eigen::Index>(node) * d, static_cast<Eigen::Index>(noise.M));
    const double scale = 1.0 / std::sqrt(noise.grid.dt);
    for (std::size_t j = 0; j < node; ++j)
        vars.middleRows(static_cast<Eigen::Index>(j) * d, d) = noise.increments.at(j) * scale;
    return polynomial_features(vars, degree);
}

namespace {

struct ControlSet {
    bool box = false;
    Vec lo, hi;
};

ControlSet control_set(const ConvexSet& U)
{
    if (U.kind == ConvexSet::Kind::full)
        return {};
    if (U.kind == ConvexSet::Kind::box)
        return {true, U.lo, U.hi};
    throw InvalidArgument("brute_force_lqic: process constraints must be boxes or the full space, got " +
                          U.kind_name());
}

// Decision variables: xi per equation, basis coefficients theta (p_k x k) per equation and node.
struct Iterate {
    std::array<Vec, 2> xi;
    std::array<std::vector<Mat>, 2> theta;
};

double dot(const Iterate& a, const Iterate& b)
{
    double v = 0.0;
    for (int i = 0; i < 2; ++i) {
        v += a.xi[i].dot(b.xi[i]);
        for (std::size_t k = 0; k < a.theta[i].size(); ++k)
            v += (a.theta[i][k].array() * b.theta[i][k].array()).sum();
    }
    return v;
}

Iterate axpy(const Iterate& x, double s, const Iterate& g)
{
    Iterate out = x;
    for (int i = 0; i < 2; ++i) {
        out.xi[i] += s * g.xi[i];
        for (std::size_t k = 0; k < x.theta[i].size(); ++k)
            out.theta[i][k] += s * g.theta[i][k];
    }
    return out;
}

}  // namespace

BruteForceResult brute_force_lqic(const LQICProblemData& lq, const BrownianEnsemble& noise,
                                  const BruteForceOptions& opt)
{
    const TimeGrid& grid = noise.grid;
    validate(lq, &grid);
    const auto& dyn = lq.dyn;
    const std::size_t N = grid.N, M = noise.M;
    const double dt = grid.dt;
    const double size = static_cast<double>(dyn.n) * static_cast<double>(dyn.k) * static_cast<double>(N) *
                        static_cast<double>(M);
    if (size > opt.budget)
        throw InvalidArgument("brute_force_lqic: instance exceeds the configured budget");
    if (!(opt.step > 0.0) || !(opt.tol > 0.0) || opt.degree < 0)
        throw InvalidArgument("brute_force_lqic: step and tolerance must be positive, degree nonnegative");

    const auto kdim = static_cast<Eigen::Index>(dyn.k);
    std::vector<Mat> phi(N);
    std::vector<ControlSet> sets(N);
    for (std::size_t k = 0; k < N; ++k) {
        phi[k] = history_features(noise, k, opt.degree);
        sets[k] = control_set(lq.U(grid.t(k)));
    }

    auto project_xi = [&](Iterate& x) {
        for (int i = 0; i < 2; ++i)
            x.xi[i] = project(lq.U0, x.xi[i]);
    };
    // u(k) = clamp(phi(k) theta(k)) column by column
    auto controls = [&](const Iterate& x) {
        ControlQuartet q;
        for (int i = 0; i < 2; ++i) {
            q.xi[i] = x.xi[i];
            q.u[i] = EnsembleProcess(M, N, dyn.k);
            for (std::size_t k = 0; k < N; ++k) {
                Mat u = (phi[k] * x.theta[i][k]).transpose();
                if (sets[k].box)
                    u = u.cwiseMax(sets[k].lo.replicate(1, u.cols())).cwiseMin(sets[k].hi.replicate(1, u.cols()));
                q.u[i].at(k) = u;
            }
        }
        return q;
    };
    struct Eval {
        ControlQuartet q;
        std::array<EnsembleProcess, 2> X;
        CostBreakdown cost;
    };
    auto evaluate = [&](const Iterate& x) {
        Eval e;
        e.q = controls(x);
        e.X = simulate_state(dyn, e.q, noise);
        e.cost = cost_lqic(lq, e.q, e.X, grid);
        return e;
    };
    // exact gradient in (xi, theta): the clamp passes the pathwise gradient where it is inactive
    auto gradient = [&](const Iterate& x, const Eval& e) {
        const CostGradient g = lqic_gradient(lq, e.q, e.X, noise);
        Iterate out;
        for (int i = 0; i < 2; ++i) {
            out.xi[i] = g.xi[i];
            out.theta[i].resize(N);
            for (std::size_t k = 0; k < N; ++k) {
                Mat gu = g.u[i].at(k);
                if (sets[k].box) {
                    const Mat v = (phi[k] * x.theta[i][k]).transpose();
                    for (Eigen::Index m = 0; m < v.cols(); ++m)
                        for (Eigen::Index r = 0; r < kdim; ++r)
                            if (!(v(r, m) > sets[k].lo(r) && v(r, m) < sets[k].hi(r)))
                                gu(r, m) = 0.0;
                }
                out.theta[i][k] = phi[k].transpose() * gu.transpose() * (dt / static_cast<double>(M));
            }
        }
        return out;
    };
    auto stationarity = [&](const Iterate& x, const Iterate& g) {
        Iterate t = axpy(x, -1.0, g);
        project_xi(t);
        const Iterate diff = axpy(t, -1.0, x);
        return std::sqrt(dot(diff, diff));
    };

    Iterate x;
    for (int i = 0; i < 2; ++i) {
        x.xi[i] = Vec::Zero(static_cast<Eigen::Index>(dyn.m));
        x.theta[i].resize(N);
        for (std::size_t k = 0; k < N; ++k)
            x.theta[i][k] = Mat::Zero(phi[k].cols(), kdim);
    }
    project_xi(x);
    Eval cur = evaluate(x);
    Iterate g = gradient(x, cur);

    BruteForceResult r;
    r.cost_history.push_back(cur.cost.total);
    double s = opt.step;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        r.stationarity = stationarity(x, g);
        if (r.stationarity <= opt.tol) {
            r.converged = true;
            break;
        }
        bool accepted = false;
        Iterate xn;
        Eval en;
        while (s >= 1e-14) {
            xn = axpy(x, -s, g);
            project_xi(xn);
            en = evaluate(xn);
            if (en.cost.total <= cur.cost.total) {
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if (!accepted)
            break;
        const Iterate gn = gradient(xn, en);
        // Barzilai-Borwein step for the next trial
        const Iterate dx = axpy(xn, -1.0, x), dg = axpy(gn, -1.0, g);
        const double sy = dot(dx, dg);
        r.step = s;
        s = std::min(4.0 * s, sy > 0.0 ? dot(dx, dx) / sy : 2.0 * s);
        x = std::move(xn);
        cur = std::move(en);
        g = gn;
        r.cost_history.push_back(cur.cost.total);
        ++r.iterations;
    }
    r.q = std::move(cur.q);
    r.cost = std::move(cur.cost);
    return r;
}

}  // namespace mfb
