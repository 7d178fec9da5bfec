#include "mfb/coefficients.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace mfb {

namespace {

void require_shape(const Mat& m, Eigen::Index r, Eigen::Index c, const std::string& what)
{
    if (m.rows() != r || m.cols() != c)
        throw InvalidArgument(what + ": expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                              std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

Vec row_mean(const Mat& m)
{
    Vec s = Vec::Zero(m.rows());
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        s += m.col(j);
    return m.cols() > 0 ? Vec(s / static_cast<double>(m.cols())) : s;
}

double op_norm(const Mat& m)
{
    if (m.size() == 0)
        return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

double min_eig(const Mat& m)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

bool symmetric(const Mat& m)
{
    return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
}

Mat apply_cols(const Mat& in, const std::function<Vec(const Vec&)>& f, Eigen::Index out_rows)
{
    Mat out(out_rows, in.cols());
    for (Eigen::Index j = 0; j < in.cols(); ++j)
        out.col(j) = f(in.col(j));
    return out;
}

Mat feedback_arg(const Mat& B, const Mat& gain, const Mat& D, const Mat& y, const Vec& mean_y, const Mat& z)
{
    Mat q = B.transpose() * y + D.transpose() * z;
    if (gain.size() > 0 && mean_y.size() > 0)
        q.colwise() += gain * mean_y;
    return q;
}

std::vector<double> check_nodes(const TimeGrid* grid, double T)
{
    if (grid)
        return grid->nodes;
    std::vector<double> t;
    for (int i = 0; i <= 16; ++i)
        t.push_back(T * i / 16.0);
    return t;
}

}  // namespace

NodeContext node_context(const BrownianEnsemble& noise, std::size_t node)
{
    NodeContext c;
    c.t = noise.grid.t(node);
    c.node = node;
    c.first_particle = 0;
    auto w = noise.path.at(node);
    c.w_data = w.data();
    c.w_rows = w.rows();
    c.w_cols = w.cols();
    return c;
}

PointContext::PointContext(double t, Vec noise) : w(std::move(noise))
{
    ctx.t = t;
    ctx.w_data = w.data();
    ctx.w_rows = w.size();
    ctx.w_cols = 1;
}

PointContext::PointContext(const PointContext& o) : w(o.w), ctx(o.ctx)
{
    ctx.w_data = w.data();
}

TimeMatrix TimeMatrix::of(std::function<Mat(double)> f, Mat shape_hint)
{
    TimeMatrix m;
    m.value = Mat::Zero(shape_hint.rows(), shape_hint.cols());
    m.fn = std::move(f);
    return m;
}

Mat StructuralData::feedback_mean_gain(int eq, double t) const
{
    if (mean_gain[eq])
        return (*mean_gain[eq])(t);
    return tau * Bbar[eq](t).transpose();
}

Mat StructuralData::feedback_argument(int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z) const
{
    return feedback_arg(B[eq](t), feedback_mean_gain(eq, t), D[eq](t), y, mean_y, z);
}

Vec StructuralData::psi_argument(int eq, int slot, const Vec& y1, const Vec& y2) const
{
    const Vec a = H.transpose() * y1;
    const Vec b = H.transpose() * y2;
    const double s = 1.0 - tau * tau;
    // eq 0: (a - tau b, b - tau a); eq 1: (b - tau a, a - tau b)
    const bool own_first = (eq == 0) == (slot == 0);
    return own_first ? Vec((a - tau * b) / s) : Vec((b - tau * a) / s);
}

void validate(const StructuralData& s)
{
    if (s.n < 1 || s.m < 1 || s.k < 1 || s.d < 1)
        throw InvalidArgument("structural: dimensions must be positive");
    if (!(s.tau >= 0.0 && s.tau < 1.0))
        throw InvalidArgument("structural: tau must lie in [0,1)");
    require_shape(s.H, static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.m), "structural H");
    for (int i = 0; i < 2; ++i) {
        const std::string tag = std::to_string(i + 1);
        require_shape(s.B[i](0.0), s.n, s.k, "structural B" + tag);
        require_shape(s.Bbar[i](0.0), s.n, s.k, "structural Bbar" + tag);
        require_shape(s.D[i](0.0), s.n * s.d, s.k, "structural D" + tag);
        if (!s.h[i])
            throw InvalidArgument("structural: missing h" + tag);
        for (int k = 0; k < 2; ++k)
            if (!s.hbar[i][k])
                throw InvalidArgument("structural: missing hbar" + tag + std::to_string(k + 1));
    }
    if (!(s.constants.L3 > 0.0))
        throw InvalidArgument("structural: L3 must be positive");
}

GammaPoint eval_gamma(const CoefficientSet& c, int eq, const NodeContext& ctx, const PointState& s)
{
    ExtendedStateView v;
    v.mean_x1 = s.mean_x1;
    v.mean_y1 = s.mean_y1;
    v.mean_x2 = s.mean_x2;
    v.mean_y2 = s.mean_y2;
    v.x = s.x;
    v.y = s.y;
    v.z = s.z;
    GammaBatch g;
    c.gamma[eq](ctx, v, Part::all, g);
    return {g.f.col(0), g.b.col(0), g.sigma.col(0)};
}

Vec eval_phi(const CoefficientSet& c, int eq, const NodeContext& ctx, const Vec& x1, const Vec& x2)
{
    return c.phi[eq](ctx, Mat(x1), Mat(x2)).col(0);
}

bool PerturbationData::is_zero() const
{
    for (int i = 0; i < 2; ++i) {
        if (xi[i].size() > 0 && !xi[i].isZero(0.0))
            return false;
        if (zeta[i] || phi[i] || psi[i] || gamma[i])
            return false;
    }
    return true;
}

PerturbationData scaled(const PerturbationData& p, double s)
{
    PerturbationData q;
    auto scale_field = [s](const ProcessField& f) -> ProcessField {
        if (!f)
            return {};
        return [f, s](const NodeContext& ctx, Eigen::Index batch) -> Mat { return s * f(ctx, batch); };
    };
    for (int i = 0; i < 2; ++i) {
        if (p.xi[i].size() > 0)
            q.xi[i] = s * p.xi[i];
        q.zeta[i] = scale_field(p.zeta[i]);
        q.phi[i] = scale_field(p.phi[i]);
        q.psi[i] = scale_field(p.psi[i]);
        q.gamma[i] = scale_field(p.gamma[i]);
    }
    return q;
}

CoefficientSet base_coefficients(const StructuralData& s)
{
    validate(s);
    auto sd = std::make_shared<const StructuralData>(s);
    const auto n = static_cast<Eigen::Index>(s.n);
    const auto nd = static_cast<Eigen::Index>(s.n * s.d);
    CoefficientSet c;
    c.n = s.n;
    c.d = s.d;
    c.structural = s;
    c.label = "base";
    for (int i = 0; i < 2; ++i) {
        c.psi[i] = [sd, i](const Vec& y1, const Vec& y2) -> Vec {
            return sd->H * sd->hbar[i][0](sd->psi_argument(i, 0, y1, y2)) +
                   sd->H * sd->hbar[i][1](sd->psi_argument(i, 1, y1, y2));
        };
        c.phi[i] = [n](const NodeContext&, const Mat& x1, const Mat&) -> Mat { return Mat::Zero(n, x1.cols()); };
        c.gamma[i] = [sd, i, n, nd](const NodeContext& ctx, const ExtendedStateView& v, Part part, GammaBatch& g) {
            const Eigen::Index M = v.batch();
            if (wants_f(part))
                g.f = Mat::Zero(n, M);
            if (wants_bs(part)) {
                const Mat q = sd->feedback_argument(i, ctx.t, v.y, v.mean_y_own(i), v.z);
                Mat hq(q.rows(), M);
                for (Eigen::Index j = 0; j < M; ++j)
                    hq.col(j) = sd->h[i](ctx.t, q.col(j));
                g.b = sd->B[i](ctx.t) * hq;
                g.sigma = sd->D[i](ctx.t) * hq;
                if (g.sigma.rows() != nd)
                    throw InvalidArgument("base_coefficients: sigma width mismatch");
            }
        };
    }
    return c;
}

CoefficientSet interpolate(const CoefficientSet& c, const CoefficientSet& c0, double alpha, const PerturbationData& p)
{
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw InvalidArgument("interpolate: alpha must lie in [0,1]");
    if (c.n != c0.n || c.d != c0.d)
        throw InvalidArgument("interpolate: dimension mismatch");
    const auto n = static_cast<Eigen::Index>(c.n);
    const auto nd = static_cast<Eigen::Index>(c.n * c.d);
    auto A = std::make_shared<const CoefficientSet>(c);
    auto A0 = std::make_shared<const CoefficientSet>(c0);
    auto P = std::make_shared<const PerturbationData>(p);
    const double a = alpha, b = 1.0 - alpha;

    CoefficientSet out;
    out.n = c.n;
    out.d = c.d;
    out.structural = c.structural ? c.structural : c0.structural;
    out.label = c.label + "@alpha";
    for (int i = 0; i < 2; ++i) {
        out.psi[i] = [A, A0, P, a, b, i](const Vec& y1, const Vec& y2) -> Vec {
            Vec r;
            if (b == 0.0)
                r = A->psi[i](y1, y2);
            else if (a == 0.0)
                r = A0->psi[i](y1, y2);
            else
                r = a * A->psi[i](y1, y2) + b * A0->psi[i](y1, y2);
            if (P->xi[i].size() > 0)
                r += P->xi[i];
            return r;
        };
        out.phi[i] = [A, A0, P, a, b, i, n](const NodeContext& ctx, const Mat& x1, const Mat& x2) -> Mat {
            Mat r;
            if (b == 0.0)
                r = A->phi[i](ctx, x1, x2);
            else if (a == 0.0)
                r = A0->phi[i](ctx, x1, x2);
            else
                r = a * A->phi[i](ctx, x1, x2) + b * A0->phi[i](ctx, x1, x2);
            if (P->zeta[i])
                r += field_or_zero(P->zeta[i], ctx, n, x1.cols());
            return r;
        };
        out.gamma[i] = [A, A0, P, a, b, i, n, nd](const NodeContext& ctx, const ExtendedStateView& v, Part part,
                                                 GammaBatch& g) {
            const Eigen::Index M = v.batch();
            if (b == 0.0) {
                A->gamma[i](ctx, v, part, g);
            } else if (a == 0.0) {
                A0->gamma[i](ctx, v, part, g);
            } else {
                GammaBatch g1, g0;
                A->gamma[i](ctx, v, part, g1);
                A0->gamma[i](ctx, v, part, g0);
                if (wants_f(part))
                    g.f = a * g1.f + b * g0.f;
                if (wants_bs(part)) {
                    g.b = a * g1.b + b * g0.b;
                    g.sigma = a * g1.sigma + b * g0.sigma;
                }
            }
            if (wants_f(part) && P->phi[i])
                g.f += field_or_zero(P->phi[i], ctx, n, M);
            if (wants_bs(part)) {
                if (P->psi[i])
                    g.b += field_or_zero(P->psi[i], ctx, n, M);
                if (P->gamma[i])
                    g.sigma += field_or_zero(P->gamma[i], ctx, nd, M);
            }
        };
    }
    return out;
}

Mat LinearDynamics::feedback_mean_gain(int eq, double t) const
{
    if (mean_feedback[eq])
        return (*mean_feedback[eq])(t);
    return tau * Bbar[eq](t).transpose();
}

void validate(const LinearDynamics& dyn, const TimeGrid* grid)
{
    if (dyn.n < 1 || dyn.m < 1 || dyn.k < 1 || dyn.d < 1)
        throw InvalidArgument("dynamics: dimensions must be positive");
    if (!(dyn.T > 0.0) || !std::isfinite(dyn.T))
        throw InvalidArgument("dynamics: horizon T must be positive");
    if (!(dyn.tau >= 0.0 && dyn.tau < 1.0))
        throw InvalidArgument("dynamics: tau must lie in [0,1)");
    const auto n = static_cast<Eigen::Index>(dyn.n), k = static_cast<Eigen::Index>(dyn.k);
    const auto nd = static_cast<Eigen::Index>(dyn.n * dyn.d);
    require_shape(dyn.H, n, static_cast<Eigen::Index>(dyn.m), "H");
    if (dyn.x0.size() != n)
        throw InvalidArgument("x0: expected length " + std::to_string(n));
    for (double t : check_nodes(grid, dyn.T)) {
        for (int i = 0; i < 2; ++i) {
            const std::string tag = std::to_string(i + 1);
            require_shape(dyn.A[i](t), n, n, "A" + tag);
            require_shape(dyn.Abar[i](t), n, n, "Abar" + tag);
            require_shape(dyn.B[i](t), n, k, "B" + tag);
            require_shape(dyn.Bbar[i](t), n, k, "Bbar" + tag);
            require_shape(dyn.C[i](t), nd, n, "C" + tag);
            require_shape(dyn.D[i](t), nd, k, "D" + tag);
            if (dyn.mean_feedback[i])
                require_shape((*dyn.mean_feedback[i])(t), k, n, "mean_feedback" + tag);
            const double a = op_norm(dyn.Abar[i](t));
            if (!(a < dyn.tau1))
                throw InvalidArgument("Abar" + tag + ": norm " + std::to_string(a) + " at t=" + std::to_string(t) +
                                      " is not below tau1=" + std::to_string(dyn.tau1));
        }
    }
}

void validate(const LCProblemData& lc, const TimeGrid* grid)
{
    validate(lc.dyn, grid);
    const auto& d = lc.dyn;
    auto need = [](const ConvexFunction& f, std::size_t dim, const std::string& name, bool strong) {
        if (!f.grad || !f.eval)
            throw InvalidArgument(name + ": missing eval or grad");
        if (f.dim != dim)
            throw InvalidArgument(name + ": dimension " + std::to_string(f.dim) + ", expected " + std::to_string(dim));
        if (strong && !(f.delta > 0.0))
            throw InvalidArgument(name + ": needs a positive convexity parameter");
    };
    need(lc.f11, d.m, "f11", true);
    need(lc.f12, d.m, "f12", true);
    need(lc.f21, d.n, "f21", false);
    need(lc.f22, d.n, "f22", false);
    for (int i = 0; i < 2; ++i) {
        const std::string tag = std::to_string(i + 1);
        if (!lc.f3[i].at || !lc.f4[i].at)
            throw InvalidArgument("f3" + tag + "/f4" + tag + ": missing");
        for (double t : check_nodes(grid, d.T)) {
            need(lc.f3[i].at(t), d.n, "f3" + tag, false);
            need(lc.f4[i].at(t), d.k, "f4" + tag, true);
            if (lc.f4[i].time_invariant)
                break;
        }
    }
    if (!(lc.constants.L3 > 0.0))
        throw InvalidArgument("constants: L3 must be positive");
}

void validate(const LQICProblemData& lq, const TimeGrid* grid)
{
    validate(lq.dyn, grid);
    const auto& d = lq.dyn;
    const auto n = static_cast<Eigen::Index>(d.n), m = static_cast<Eigen::Index>(d.m),
               k = static_cast<Eigen::Index>(d.k);
    if (!(lq.delta > 0.0))
        throw InvalidArgument("delta must be positive");
    for (int i = 0; i < 2; ++i) {
        const std::string tag = std::to_string(i + 1);
        require_shape(lq.M[i], m, m, "M" + tag);
        if (!symmetric(lq.M[i]))
            throw InvalidArgument("M" + tag + ": not symmetric");
        if (min_eig(lq.M[i]) < lq.delta - 1e-12)
            throw InvalidArgument("M" + tag + ": M - delta I is not positive semidefinite");
        const Mat G = lq.G[i](0);
        require_shape(G, n, n, "G" + tag);
        if (!symmetric(G))
            throw InvalidArgument("G" + tag + ": not symmetric");
        if (min_eig(G) < -1e-12)
            throw InvalidArgument("G" + tag + ": not positive semidefinite");
        for (double t : check_nodes(grid, d.T)) {
            const Mat Q = lq.Q[i](t), R = lq.R[i](t);
            require_shape(Q, n, n, "Q" + tag);
            require_shape(R, k, k, "R" + tag);
            if (!symmetric(Q))
                throw InvalidArgument("Q" + tag + ": not symmetric at t=" + std::to_string(t));
            if (!symmetric(R))
                throw InvalidArgument("R" + tag + ": not symmetric at t=" + std::to_string(t));
            if (min_eig(Q) < -1e-12)
                throw InvalidArgument("Q" + tag + ": not positive semidefinite at t=" + std::to_string(t));
            if (min_eig(R) < lq.delta - 1e-12)
                throw InvalidArgument("R" + tag + ": R - delta I is not positive semidefinite at t=" +
                                      std::to_string(t));
        }
    }
    if (lq.U0.dim != d.m)
        throw InvalidArgument("U0: dimension mismatch");
    if (!lq.U0.contains(lq.U0.feasible_point(), 1e-9))
        throw InvalidArgument("U0: empty");
    for (double t : check_nodes(grid, d.T)) {
        const ConvexSet U = lq.U(t);
        if (U.dim != d.k)
            throw InvalidArgument("U: dimension mismatch at t=" + std::to_string(t));
        if (!U.contains(U.feasible_point(), 1e-9))
            throw InvalidArgument("U: empty at t=" + std::to_string(t));
    }
}

std::array<Vec, 2> lc_initial_controls(const LCProblemData& lc, const Vec& y1_0, const Vec& y2_0, double tol)
{
    const double tau = lc.dyn.tau;
    const double s = 1.0 - tau * tau;
    const Mat& H = lc.dyn.H;
    const Vec a1 = -(H.transpose() * y1_0 - tau * H.transpose() * y2_0) / s;
    const Vec a2 = -(H.transpose() * y2_0 - tau * H.transpose() * y1_0) / s;
    const Vec e1 = grad_inverse(lc.f11, a1, tol);
    const Vec e2 = grad_inverse(lc.f12, a2, tol);
    return {Vec((e1 - tau * e2) / s), Vec((e2 - tau * e1) / s)};
}

Mat lc_feedback(const LCProblemData& lc, int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z, double tol)
{
    const auto& d = lc.dyn;
    const Mat q = feedback_arg(d.B[eq](t), d.feedback_mean_gain(eq, t), d.D[eq](t), y, mean_y, z);
    const ConvexFunction f4 = lc.f4[eq].at(t);
    if (d.k == 1 && f4.scalar_inverse) {
        Mat out(1, q.cols());
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            out(0, j) = f4.scalar_inverse(-q(0, j));
        return out;
    }
    return apply_cols(q, [&](const Vec& col) { return grad_inverse(f4, Vec(-col), tol); },
                      static_cast<Eigen::Index>(d.k));
}

std::array<Vec, 2> lqic_initial_controls(const LQICProblemData& lq, const Vec& y1_0, const Vec& y2_0)
{
    std::array<Vec, 2> out;
    const Vec* y[2] = {&y1_0, &y2_0};
    for (int i = 0; i < 2; ++i) {
        const WeightedNorm W = make_weighted_norm(lq.M[i]);
        const Vec free = -lq.M[i].ldlt().solve(lq.dyn.H.transpose() * *y[i]);
        out[i] = project(lq.U0, W, free);
    }
    return out;
}

Mat lqic_feedback(const LQICProblemData& lq, int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z)
{
    const auto& d = lq.dyn;
    const Mat q = feedback_arg(d.B[eq](t), d.feedback_mean_gain(eq, t), d.D[eq](t), y, mean_y, z);
    const Mat R = lq.R[eq](t);
    const WeightedNorm W = make_weighted_norm(R);
    const ConvexSet U = lq.U(t);
    const auto ldlt = R.ldlt();
    const Mat free = -ldlt.solve(q);
    if (U.kind == ConvexSet::Kind::full)
        return free;
    Mat out(free.rows(), free.cols());
    for (Eigen::Index j = 0; j < free.cols(); ++j)
        out.col(j) = project(U, W, free.col(j));
    return out;
}

namespace {

// Drift/diffusion/adjoint-drift shared by both Hamiltonian systems; only the control map and the
// running-state gradient differ.
struct LinearHamiltonianParts {
    LinearDynamics dyn;
    std::function<Mat(int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z)> control;
    std::function<Mat(int eq, const NodeContext& ctx, const Mat& x)> state_grad;
};

void linear_gamma(const LinearHamiltonianParts& P, int i, const NodeContext& ctx, const ExtendedStateView& v, Part part,
                  GammaBatch& g)
{
    const auto& d = P.dyn;
    const double t = ctx.t;
    const Eigen::Index M = v.batch();
    const auto n = static_cast<Eigen::Index>(d.n), nd = static_cast<Eigen::Index>(d.n * d.d);
    const Mat C = d.C[i](t);
    if (wants_f(part)) {
        Mat f = P.state_grad(i, ctx, v.x) + d.A[i](t).transpose() * v.y + C.transpose() * v.z;
        Vec mean_term;
        if (i == 0)
            mean_term = d.Abar[0](t).transpose() * v.mean_y1 + d.Abar[1](t).transpose() * v.mean_y2;
        else
            mean_term = d.Abar[1](t).transpose() * v.mean_y1;
        f.colwise() += mean_term;
        g.f = -f;
    }
    if (wants_bs(part)) {
        const Mat alpha = P.control(i, t, v.y, v.mean_y_own(i), v.z);
        Mat b = d.A[i](t) * v.x + d.B[i](t) * alpha;
        Vec mean_term;
        if (i == 0)
            mean_term = d.Abar[1](t) * v.mean_x2 + d.Abar[0](t) * v.mean_x1;
        else
            mean_term = d.Abar[1](t) * v.mean_x1;
        if (d.tau != 0.0) {
            const Mat Bb = d.Bbar[i](t);
            if (!Bb.isZero(0.0))
                mean_term += d.tau * Bb * row_mean(alpha);
        }
        b.colwise() += mean_term;
        if (d.rho[i])
            b += field_or_zero(d.rho[i], ctx, n, M);
        Mat sigma = C * v.x + d.D[i](t) * alpha;
        if (d.kappa[i])
            sigma += field_or_zero(d.kappa[i], ctx, nd, M);
        g.b = std::move(b);
        g.sigma = std::move(sigma);
    }
}

StructuralData structural_from(const LinearDynamics& d, const AssumptionConstants& k)
{
    StructuralData s;
    s.n = d.n;
    s.m = d.m;
    s.k = d.k;
    s.d = d.d;
    s.H = d.H;
    s.B = d.B;
    s.Bbar = d.Bbar;
    s.D = d.D;
    s.tau = d.tau;
    s.mean_gain = d.mean_feedback;
    s.constants = k;
    return s;
}

}  // namespace

CoefficientSet lc_hamiltonian(const LCProblemData& lc_in)
{
    validate(lc_in);
    auto lc = std::make_shared<const LCProblemData>(lc_in);
    auto P = std::make_shared<LinearHamiltonianParts>();
    P->dyn = lc->dyn;
    P->control = [lc](int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z) {
        return lc_feedback(*lc, eq, t, y, mean_y, z);
    };
    P->state_grad = [lc](int eq, const NodeContext& ctx, const Mat& x) -> Mat {
        const ConvexFunction f3 = lc->f3[eq].at(ctx.t);
        if (f3.identically_zero)
            return Mat(Mat::Zero(x.rows(), x.cols()));
        return apply_cols(x, f3.grad, x.rows());
    };

    CoefficientSet c;
    c.n = lc->dyn.n;
    c.d = lc->dyn.d;
    c.label = "lc-hamiltonian";
    for (int i = 0; i < 2; ++i) {
        c.psi[i] = [lc, i](const Vec& y1, const Vec& y2) -> Vec {
            const auto xi = lc_initial_controls(*lc, y1, y2);
            return lc->dyn.H * xi[i] + lc->dyn.x0;
        };
        c.phi[i] = [lc](const NodeContext&, const Mat& x1, const Mat& x2) -> Mat {
            const Mat S = x1 + x2;
            Mat out(S.rows(), S.cols());
            for (Eigen::Index j = 0; j < S.cols(); ++j) {
                const Vec s = S.col(j);
                out.col(j) = lc->f21.grad(s) + lc->f22.grad(s);
            }
            return out;
        };
        c.gamma[i] = [P, i](const NodeContext& ctx, const ExtendedStateView& v, Part part, GammaBatch& g) {
            linear_gamma(*P, i, ctx, v, part, g);
        };
    }

    StructuralData s = structural_from(lc->dyn, lc->constants);
    const double tau = lc->dyn.tau;
    const double s1 = 1.0 / (1.0 - tau * tau);
    const double s2 = -tau / (1.0 - tau * tau);
    auto inv = [](const ConvexFunction& f) {
        return [f](const Vec& v) -> Vec { return grad_inverse(f, Vec(-v), 1e-12); };
    };
    auto g11 = inv(lc->f11), g12 = inv(lc->f12);
    s.hbar[0][0] = [g11, s1](const Vec& v) -> Vec { return s1 * g11(v); };
    s.hbar[0][1] = [g12, s2](const Vec& v) -> Vec { return s2 * g12(v); };
    s.hbar[1][0] = [g12, s1](const Vec& v) -> Vec { return s1 * g12(v); };
    s.hbar[1][1] = [g11, s2](const Vec& v) -> Vec { return s2 * g11(v); };
    for (int i = 0; i < 2; ++i)
        s.h[i] = [lc, i](double t, const Vec& u) -> Vec { return grad_inverse(lc->f4[i].at(t), Vec(-u), 1e-12); };
    c.structural = std::move(s);
    return c;
}

CoefficientSet lqic_hamiltonian(const LQICProblemData& lq_in)
{
    validate(lq_in);
    auto lq = std::make_shared<const LQICProblemData>(lq_in);
    auto P = std::make_shared<LinearHamiltonianParts>();
    P->dyn = lq->dyn;
    P->control = [lq](int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z) {
        return lqic_feedback(*lq, eq, t, y, mean_y, z);
    };
    P->state_grad = [lq](int eq, const NodeContext& ctx, const Mat& x) -> Mat { return lq->Q[eq](ctx.t) * x; };

    CoefficientSet c;
    c.n = lq->dyn.n;
    c.d = lq->dyn.d;
    c.label = "lqic-hamiltonian";
    for (int i = 0; i < 2; ++i) {
        c.psi[i] = [lq, i](const Vec& y1, const Vec& y2) -> Vec {
            const auto xi = lqic_initial_controls(*lq, y1, y2);
            return lq->dyn.H * xi[i] + lq->dyn.x0;
        };
        c.phi[i] = [lq](const NodeContext& ctx, const Mat& x1, const Mat& x2) -> Mat {
            const Mat S = x1 + x2;
            if (!lq->G[0].fn && !lq->G[1].fn)
                return (lq->G[0].value + lq->G[1].value) * S;
            Mat out(S.rows(), S.cols());
            for (Eigen::Index j = 0; j < S.cols(); ++j) {
                const std::size_t p = ctx.first_particle + static_cast<std::size_t>(j);
                out.col(j) = (lq->G[0](p) + lq->G[1](p)) * S.col(j);
            }
            return out;
        };
        c.gamma[i] = [P, i](const NodeContext& ctx, const ExtendedStateView& v, Part part, GammaBatch& g) {
            linear_gamma(*P, i, ctx, v, part, g);
        };
    }

    StructuralData s = structural_from(lq->dyn, lq->constants);
    for (int i = 0; i < 2; ++i) {
        s.hbar[i][0] = [lq, i](const Vec& v) -> Vec {
            const Vec free = -lq->M[i].ldlt().solve(v);
            return project(lq->U0, make_weighted_norm(lq->M[i]), free);
        };
        s.hbar[i][1] = [m = lq->dyn.m](const Vec&) -> Vec { return Vec::Zero(static_cast<Eigen::Index>(m)); };
        s.h[i] = [lq, i](double t, const Vec& u) -> Vec {
            const Mat R = lq->R[i](t);
            const Vec free = -R.ldlt().solve(u);
            return project(lq->U(t), make_weighted_norm(R), free);
        };
    }
    c.structural = std::move(s);
    return c;
}

LCProblemData paper_example_lc()
{
    LCProblemData lc;
    auto& d = lc.dyn;
    d.n = d.m = d.k = d.d = 1;
    d.T = 1.0;
    const Mat zero = Mat::Zero(1, 1);
    const Mat one = Mat::Identity(1, 1);
    for (int i = 0; i < 2; ++i) {
        d.A[i] = zero;
        d.B[i] = zero;
        d.Bbar[i] = zero;
        d.C[i] = zero;
        d.D[i] = one;
        d.kappa[i] = [](const NodeContext& ctx, Eigen::Index batch) -> Mat {
            return ctx.w().leftCols(batch).array().sin().matrix();
        };
        d.mean_feedback[i] = TimeMatrix(Mat::Constant(1, 1, 1e-3));
    }
    d.Abar[0] = zero;
    d.Abar[1] = TimeMatrix(Mat::Constant(1, 1, 1e-3));
    d.H = one;
    d.x0 = Vec::Zero(1);
    d.tau = 0.0;
    d.tau1 = 1e-2;

    const ConvexFunction f = example_family();
    lc.f11 = f;
    lc.f12 = f;
    lc.f21 = quadratic_function(Mat::Constant(1, 1, 0.25));
    lc.f22 = quadratic_function(Mat::Constant(1, 1, 0.25));
    for (int i = 0; i < 2; ++i) {
        lc.f3[i] = constant_in_time(zero_function(1));
        lc.f4[i] = constant_in_time(f);
    }
    auto& k = lc.constants;
    k.L = 2.0;
    k.Lb = 1.0;
    k.Lsigma = 1.0;
    k.Lf = 1.0;
    k.LPhi = 0.5;
    k.LPsi = 1.0;
    k.L1 = k.L2 = k.L3 = 1.0;
    k.eps = 1e-3;
    k.eps_cross = 0.5;
    return lc;
}

Mat field_or_zero(const ProcessField& f, const NodeContext& ctx, Eigen::Index rows, Eigen::Index batch)
{
    if (!f)
        return Mat::Zero(rows, batch);
    Mat m = f(ctx, batch);
    if (m.rows() != rows || m.cols() != batch)
        throw InvalidArgument("process field: expected " + std::to_string(rows) + "x" + std::to_string(batch) +
                              ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    return m;
}

}  // namespace mfb
