#include "mfb/checks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mfb {

void CheckReport::record(const std::string& label, double margin, const std::vector<double>& inputs,
                         const std::string& note)
{
    auto it = std::find_if(details.begin(), details.end(), [&](const auto& p) { return p.first == label; });
    if (it == details.end())
        details.emplace_back(label, margin);
    else
        it->second = std::min(it->second, margin);
    if (!(margin >= -tolerance))
        ++violations;
    if (!(margin >= worst_margin)) {
        worst_margin = std::isnan(margin) ? -std::numeric_limits<double>::max() : margin;
        worst_inequality = label;
        if (!(margin >= -tolerance)) {
            witness_values = inputs;
            std::ostringstream os;
            os << label;
            if (!note.empty())
                os << " " << note;
            os << " slack=" << margin;
            witness = os.str();
        }
    }
}

double Sampler::uniform(double lo, double hi)
{
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

double Sampler::normal()
{
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec Sampler::point(Eigen::Index dim)
{
    Vec v(dim);
    const bool gaussian = (count_++ % 2) == 1;
    for (Eigen::Index i = 0; i < dim; ++i)
        v(i) = gaussian ? std::clamp(normal() * box_ / 3.0, -box_, box_) : uniform(-box_, box_);
    return v;
}

Vec Sampler::partner(const Vec& x)
{
    const std::uint64_t kind = count_ % 3;
    if (kind == 0)
        return point(x.size());
    ++count_;
    const double scale = kind == 1 ? 0.1 * box_ : 1e-4 * box_;
    Vec v = x;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) += scale * normal();
    return v;
}

namespace {

const StructuralData& need_structural(const CoefficientSet& c, const char* who)
{
    if (!c.structural)
        throw InvalidArgument(std::string(who) + ": coefficient set carries no structural data");
    return *c.structural;
}

PointState random_state(Sampler& s, Eigen::Index n, Eigen::Index nd)
{
    PointState p;
    p.mean_x1 = s.point(n);
    p.mean_y1 = s.point(n);
    p.mean_x2 = s.point(n);
    p.mean_y2 = s.point(n);
    p.x = s.point(n);
    p.y = s.point(n);
    p.z = s.point(nd);
    return p;
}

Vec flatten(const PointState& p)
{
    Vec v(p.mean_x1.size() * 6 + p.z.size());
    v << p.mean_x1, p.mean_y1, p.mean_x2, p.mean_y2, p.x, p.y, p.z;
    return v;
}

PointState unflatten(const Vec& v, Eigen::Index n, Eigen::Index nd)
{
    PointState p;
    p.mean_x1 = v.segment(0, n);
    p.mean_y1 = v.segment(n, n);
    p.mean_x2 = v.segment(2 * n, n);
    p.mean_y2 = v.segment(3 * n, n);
    p.x = v.segment(4 * n, n);
    p.y = v.segment(5 * n, n);
    p.z = v.segment(6 * n, nd);
    return p;
}

std::vector<double> to_std(std::initializer_list<const Vec*> parts)
{
    std::vector<double> out;
    for (const Vec* p : parts)
        out.insert(out.end(), p->data(), p->data() + p->size());
    return out;
}

std::vector<double> to_std(const Vec& v)
{
    return {v.data(), v.data() + v.size()};
}

std::string idx(int i)
{
    return std::to_string(i + 1);
}

Vec h_of(const StructuralData& s, int eq, double t, const PointState& p)
{
    const Vec q = s.feedback_argument(eq, t, p.y, eq == 0 ? p.mean_y1 : p.mean_y2, p.z).col(0);
    return s.h[eq](t, q);
}

}  // namespace

CheckReport check_lipschitz(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt)
{
    const StructuralData& s = need_structural(c, "check_lipschitz");
    const AssumptionConstants& k = s.constants;
    const auto n = static_cast<Eigen::Index>(c.n), nd = static_cast<Eigen::Index>(c.n * c.d);
    CheckReport r;
    r.name = "lipschitz";
    r.tolerance = opt.tol;
    Sampler smp(opt.seed, opt.box);
    const Vec zero_n = Vec::Zero(n), zero_nd = Vec::Zero(nd);
    for (std::size_t it = 0; it < samples; ++it) {
        const double t = smp.uniform(0.0, opt.horizon);
        const PointContext pc(t, smp.point(static_cast<Eigen::Index>(c.d)));
        const PointState a = random_state(smp, n, nd);
        const Vec fa = flatten(a);
        const Vec fb = smp.partner(fa);
        const PointState b = unflatten(fb, n, nd);
        const std::vector<double> wit = to_std({&fa, &fb});
        const double mean_diff = (a.mean_x1 - b.mean_x1).norm() + (a.mean_y1 - b.mean_y1).norm() +
                                 (a.mean_x2 - b.mean_x2).norm() + (a.mean_y2 - b.mean_y2).norm();
        const double own_diff = (a.x - b.x).norm() + (a.y - b.y).norm() + (a.z - b.z).norm();
        for (int i = 0; i < 2; ++i) {
            const GammaPoint ga = eval_gamma(c, i, pc.ctx, a), gb = eval_gamma(c, i, pc.ctx, b);
            r.record("f" + idx(i), k.eps * mean_diff + k.Lf * own_diff - (ga.f - gb.f).norm(), wit);
            r.record("b" + idx(i), k.eps * mean_diff + k.Lb * own_diff - (ga.b - gb.b).norm(), wit);
            r.record("sigma" + idx(i), k.eps * mean_diff + k.Lsigma * own_diff - (ga.sigma - gb.sigma).norm(), wit);

            PointState z0 = a;
            z0.x = zero_n;
            z0.y = zero_n;
            z0.z = zero_nd;
            const GammaPoint g0 = eval_gamma(c, i, pc.ctx, z0);
            const double psi0 = c.psi[0](zero_n, a.y).norm() + c.psi[1](a.x, zero_n).norm();
            const auto growth = to_std({&a.mean_x1, &a.mean_y1, &a.mean_x2, &a.mean_y2, &a.x, &a.y});
            r.record("growth-f" + idx(i), k.L - psi0 - g0.f.norm(), growth);
            r.record("growth-b" + idx(i), k.L - psi0 - g0.b.norm(), growth);
            r.record("growth-sigma" + idx(i), k.L - psi0 - g0.sigma.norm(), growth);
        }

        // Terminal and initial maps: (x1, x2) = (a.x, a.y) against (b.x, b.y).
        const PointContext pt(opt.horizon, pc.w);
        const double d1 = (a.x - b.x).norm(), d2 = (a.y - b.y).norm();
        const Vec p1a = eval_phi(c, 0, pt.ctx, a.x, a.y), p1b = eval_phi(c, 0, pt.ctx, b.x, b.y);
        const Vec p2a = eval_phi(c, 1, pt.ctx, a.x, a.y), p2b = eval_phi(c, 1, pt.ctx, b.x, b.y);
        r.record("Phi1", k.LPhi * d1 + k.eps_cross * d2 - (p1a - p1b).norm(), wit);
        r.record("Phi2", k.eps_cross * d1 + k.LPhi * d2 - (p2a - p2b).norm(), wit);
        const Vec s1a = c.psi[0](a.x, a.y), s1b = c.psi[0](b.x, b.y);
        const Vec s2a = c.psi[1](a.x, a.y), s2b = c.psi[1](b.x, b.y);
        r.record("Psi1", k.LPsi * d1 + k.eps_cross * d2 - (s1a - s1b).norm(), wit);
        r.record("Psi2", k.eps_cross * d1 + k.LPsi * d2 - (s2a - s2b).norm(), wit);
        ++r.samples;
    }
    return r;
}

CheckReport check_adjoint(const StructuralData& s, std::size_t samples, const CheckOptions& opt)
{
    validate(s);
    const AssumptionConstants& k = s.constants;
    CheckReport r;
    r.name = "adjoint";
    r.tolerance = opt.tol;
    Sampler smp(opt.seed, opt.box);
    const auto m = static_cast<Eigen::Index>(s.m), kk = static_cast<Eigen::Index>(s.k);
    for (int i = 0; i < 2; ++i) {
        const Vec h0 = s.h[i](0.0, Vec::Zero(kk));
        r.record("h" + idx(i) + "(t,0) finite", h0.allFinite() ? 0.0 : -std::numeric_limits<double>::max());
    }
    for (std::size_t it = 0; it < samples; ++it) {
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const Vec v1 = smp.point(m), v2 = smp.partner(v1);
                const Vec dh = s.hbar[i][j](v1) - s.hbar[i][j](v2);
                const Vec dv = v1 - v2;
                const auto wit = to_std({&v1, &v2});
                const std::string tag = "hbar" + idx(i) + idx(j);
                r.record(tag + " lipschitz", k.L2 * dv.norm() - dh.norm(), wit);
                r.record(tag + " dissipative", -k.L3 * dh.squaredNorm() - dh.dot(dv), wit);
            }
            const double t = smp.uniform(0.0, opt.horizon);
            const Vec u1 = smp.point(kk), u2 = smp.partner(u1);
            const Vec dh = s.h[i](t, u1) - s.h[i](t, u2);
            const Vec du = u1 - u2;
            auto wit = to_std({&u1, &u2});
            wit.push_back(t);
            r.record("h" + idx(i) + " lipschitz", k.L2 * du.norm() - dh.norm(), wit);
            r.record("h" + idx(i) + " dissipative", -k.L3 * dh.squaredNorm() - dh.dot(du), wit);
        }
        ++r.samples;
    }
    return r;
}

std::vector<LinearDominationProbe> linear_domination_ratios(const StructuralData& s, const std::vector<double>& probes,
                                                            double t)
{
    validate(s);
    std::vector<LinearDominationProbe> out;
    const auto kk = static_cast<Eigen::Index>(s.k);
    for (double p : probes) {
        for (int i = 0; i < 2; ++i) {
            Vec u = Vec::Zero(kk), ub = Vec::Zero(kk);
            u(0) = p;
            ub(0) = p + 1.0;
            const double num = (s.h[i](t, u) - s.h[i](t, ub)).squaredNorm();
            out.push_back({p, p + 1.0, num / (u - ub).squaredNorm(), i});
        }
    }
    return out;
}

CheckReport check_no_linear_domination(const StructuralData& s, const std::vector<double>& probes, double threshold,
                                       double large)
{
    CheckReport r;
    r.name = "no-linear-domination";
    r.tolerance = 0.0;
    for (const auto& p : linear_domination_ratios(s, probes)) {
        std::ostringstream label;
        label << "ratio h" << (p.eq + 1) << " at (" << p.u << "," << p.ubar << ")";
        r.details.emplace_back(label.str(), p.ratio);
        if (std::abs(p.u) >= large)
            r.record("ratio below threshold at large |u|", threshold - p.ratio, {p.u, p.ubar, p.ratio});
        ++r.samples;
    }
    if (std::none_of(probes.begin(), probes.end(), [&](double p) { return std::abs(p) >= large; }))
        r.warnings.push_back("no probe reaches the large-|u| regime");
    return r;
}

namespace {

struct PsiDomination {
    double lhs = 0.0, rhs = 0.0;
};

PsiDomination psi_domination(const CoefficientSet& c, const StructuralData& s, int i, const Vec& y1, const Vec& y2,
                             const Vec& yb1, const Vec& yb2, DominationForm form)
{
    const double lhs = (c.psi[i](y1, y2) - c.psi[i](yb1, yb2)).norm();
    double rhs = 0.0;
    for (int j = 0; j < 2; ++j) {
        const double d = (s.hbar[i][j](s.psi_argument(i, j, y1, y2)) - s.hbar[i][j](s.psi_argument(i, j, yb1, yb2))).norm();
        rhs += s.constants.L2 * (form == DominationForm::literal ? d * d : d);
    }
    return {lhs, rhs};
}

}  // namespace

CheckReport check_domination(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt,
                             DominationForm form)
{
    const StructuralData& s = need_structural(c, "check_domination");
    validate(s);
    const auto n = static_cast<Eigen::Index>(c.n), nd = static_cast<Eigen::Index>(c.n * c.d);
    CheckReport r;
    r.name = form == DominationForm::literal ? "domination (squared adjoint differences)"
                                             : "domination (linear adjoint differences)";
    r.tolerance = opt.tol;
    Sampler smp(opt.seed, opt.box);
    const double L2 = s.constants.L2;

    // Scaling probe: compare growth exponents of both sides of the initial-map inequality.
    {
        const Vec y1 = Vec::Constant(n, 0.3), y2 = Vec::Constant(n, -0.2);
        double e_lhs[2] = {0, 0}, e_rhs[2] = {0, 0};
        const double scales[2] = {1e-3, 1e-1};
        bool usable = true;
        for (int q = 0; q < 2; ++q) {
            const Vec d = Vec::Constant(n, scales[q]);
            const auto v = psi_domination(c, s, 0, y1, y2, y1 + d, y2, form);
            if (!(v.lhs > 0.0 && v.rhs > 0.0))
                usable = false;
            e_lhs[q] = std::log(v.lhs);
            e_rhs[q] = std::log(v.rhs);
        }
        if (usable) {
            const double span = std::log(scales[1] / scales[0]);
            const double pl = (e_lhs[1] - e_lhs[0]) / span, pr = (e_rhs[1] - e_rhs[0]) / span;
            if (std::abs(pl - pr) > 0.5) {
                std::ostringstream os;
                os << "initial-map inequality is not scale consistent: left side grows like |dy|^" << pl
                   << ", right side like |dy|^" << pr;
                r.warnings.push_back(os.str());
            }
        }
    }

    for (std::size_t it = 0; it < samples; ++it) {
        const Vec y1 = smp.point(n), y2 = smp.point(n);
        Vec both(2 * n);
        both << y1, y2;
        const Vec pb = smp.partner(both);
        const Vec yb1 = pb.head(n), yb2 = pb.tail(n);
        const auto wit = to_std({&both, &pb});
        for (int i = 0; i < 2; ++i) {
            const auto v = psi_domination(c, s, i, y1, y2, yb1, yb2, form);
            r.record("Psi" + idx(i), v.rhs - v.lhs, wit);
        }

        const double t = smp.uniform(0.0, opt.horizon);
        const PointContext pc(t, smp.point(static_cast<Eigen::Index>(c.d)));
        const PointState a = random_state(smp, n, nd);
        for (int i = 0; i < 2; ++i) {
            // Vary the own mean of Y and the own (y, z); everything else is held.
            PointState b = a;
            Vec& own_mean = i == 0 ? b.mean_y1 : b.mean_y2;
            Vec pack(2 * n + nd);
            pack << (i == 0 ? a.mean_y1 : a.mean_y2), a.y, a.z;
            const Vec moved = smp.partner(pack);
            own_mean = moved.head(n);
            b.y = moved.segment(n, n);
            b.z = moved.tail(nd);
            const GammaPoint ga = eval_gamma(c, i, pc.ctx, a), gb = eval_gamma(c, i, pc.ctx, b);
            const double dh = (h_of(s, i, t, a) - h_of(s, i, t, b)).norm();
            const auto wit2 = to_std({&pack, &moved});
            r.record("b" + idx(i), L2 * dh - (ga.b - gb.b).norm(), wit2);
            r.record("sigma" + idx(i), L2 * dh - (ga.sigma - gb.sigma).norm(), wit2);
            r.record("f" + idx(i), L2 * dh - (ga.f - gb.f).norm(), wit2);
        }
        ++r.samples;
    }
    return r;
}

CheckReport check_monotonicity(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt)
{
    const StructuralData& s = need_structural(c, "check_monotonicity");
    validate(s);
    const auto n = static_cast<Eigen::Index>(c.n), nd = static_cast<Eigen::Index>(c.n * c.d);
    const double L3 = s.constants.L3;
    CheckReport r;
    r.name = "monotonicity";
    r.tolerance = opt.tol;
    Sampler smp(opt.seed, opt.box);
    auto hbar_gap = [&](int i, int j, const Vec& a1, const Vec& a2, const Vec& b1, const Vec& b2) {
        return (s.hbar[i][j](s.psi_argument(i, j, a1, a2)) - s.hbar[i][j](s.psi_argument(i, j, b1, b2))).squaredNorm();
    };
    for (std::size_t it = 0; it < samples; ++it) {
        // Initial maps, other argument held at y.
        {
            const Vec y = smp.point(n), y1 = smp.point(n), yb1 = smp.partner(y1);
            const auto wit = to_std({&y, &y1, &yb1});
            const double l1 = (c.psi[0](y1, y) - c.psi[0](yb1, y)).dot(y1 - yb1);
            const double r1 = -L3 * hbar_gap(0, 0, y1, y, yb1, y) - L3 * hbar_gap(0, 1, y1, y, yb1, y);
            r.record("Psi1", r1 - l1, wit);
            const double l2 = (c.psi[1](y, y1) - c.psi[1](y, yb1)).dot(y1 - yb1);
            const double r2 = -L3 * hbar_gap(1, 0, y, y1, y, yb1) - L3 * hbar_gap(1, 1, y, y1, y, yb1);
            r.record("Psi2", r2 - l2, wit);
        }
        // Terminal maps.
        {
            const PointContext pt(opt.horizon, smp.point(static_cast<Eigen::Index>(c.d)));
            const Vec x1 = smp.point(n), x2 = smp.point(n), xb1 = smp.partner(x1), xb2 = smp.partner(x2);
            const double v = (eval_phi(c, 0, pt.ctx, x1, x2) - eval_phi(c, 0, pt.ctx, xb1, x2)).dot(x1 - xb1) +
                             (eval_phi(c, 1, pt.ctx, x1, x2) - eval_phi(c, 1, pt.ctx, x1, xb2)).dot(x2 - xb2);
            r.record("Phi", v, to_std({&x1, &x2, &xb1, &xb2}));
        }
        // Generators with shared mean blocks.
        {
            const double t = smp.uniform(0.0, opt.horizon);
            const PointContext pc(t, smp.point(static_cast<Eigen::Index>(c.d)));
            const PointState base = random_state(smp, n, nd);
            PointState a[2], b[2];
            double lhs = 0.0, rhs = 0.0;
            std::vector<double> wit{t};
            for (int i = 0; i < 2; ++i) {
                a[i] = base;
                if (i == 1) {
                    a[i].x = smp.point(n);
                    a[i].y = smp.point(n);
                    a[i].z = smp.point(nd);
                }
                Vec own(2 * n + nd);
                own << a[i].x, a[i].y, a[i].z;
                const Vec moved = smp.partner(own);
                b[i] = a[i];
                b[i].x = moved.head(n);
                b[i].y = moved.segment(n, n);
                b[i].z = moved.tail(nd);
                const GammaPoint ga = eval_gamma(c, i, pc.ctx, a[i]), gb = eval_gamma(c, i, pc.ctx, b[i]);
                lhs += (ga.f - gb.f).dot(a[i].x - b[i].x) + (ga.b - gb.b).dot(a[i].y - b[i].y) +
                       (ga.sigma - gb.sigma).dot(a[i].z - b[i].z);
                rhs -= L3 * (h_of(s, i, t, a[i]) - h_of(s, i, t, b[i])).squaredNorm();
                const auto fa = to_std(flatten(a[i])), fb = to_std(moved);
                wit.insert(wit.end(), fa.begin(), fa.end());
                wit.insert(wit.end(), fb.begin(), fb.end());
            }
            r.record("Gamma", rhs - lhs, wit);
        }
        ++r.samples;
    }
    return r;
}

CheckReport check_lqic(const LQICProblemData& lq, const TimeGrid* grid, const CheckOptions& opt)
{
    CheckReport r;
    r.name = "lqic-assumptions";
    r.tolerance = opt.tol;
    const auto& d = lq.dyn;
    auto min_eig = [](const Mat& m) {
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        return es.eigenvalues()(0);
    };
    auto asym = [](const Mat& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); };
    std::vector<double> nodes;
    if (grid)
        nodes = grid->nodes;
    else
        for (int i = 0; i <= 16; ++i)
            nodes.push_back(d.T * i / 16.0);

    for (int i = 0; i < 2; ++i) {
        const std::string tag = idx(i);
        const Eigen::Index m = lq.M[i].rows();
        r.record("M" + tag + " symmetric", -asym(lq.M[i]), {}, "(M" + tag + ")");
        r.record("M" + tag + " - delta I psd", min_eig(lq.M[i] - lq.delta * Mat::Identity(m, m)), {},
                 "(M" + tag + ")");
        const Mat G = lq.G[i](0);
        r.record("G" + tag + " psd", min_eig(G), {}, "(G" + tag + ")");
        for (std::size_t q = 0; q < nodes.size(); ++q) {
            const double t = nodes[q];
            const std::string at = "(node " + std::to_string(q) + ", t=" + std::to_string(t) + ")";
            const Mat R = lq.R[i](t), Q = lq.Q[i](t);
            r.record("R" + tag + " symmetric", -asym(R), {t}, "R" + tag + " " + at);
            r.record("R" + tag + " - delta I psd", min_eig(R - lq.delta * Mat::Identity(R.rows(), R.cols())), {t},
                     "R" + tag + " " + at);
            r.record("Q" + tag + " psd", min_eig(Q), {t}, "Q" + tag + " " + at);
        }
    }

    Sampler smp(opt.seed, opt.box);
    auto set_checks = [&](const ConvexSet& K, const std::string& tag, double t) {
        const Vec a = K.feasible_point();
        r.record(tag + " nonempty", K.contains(a, 1e-9) ? 0.0 : -(a - project(K, a)).norm(), {t});
        for (int s = 0; s < 32; ++s) {
            const Vec x = project(K, smp.point(static_cast<Eigen::Index>(K.dim)));
            const Vec y = project(K, smp.point(static_cast<Eigen::Index>(K.dim)));
            const Vec mid = 0.5 * (x + y);
            r.record(tag + " midpoint convex", -(mid - project(K, mid)).norm(), to_std({&x, &y}));
        }
    };
    set_checks(lq.U0, "U0", 0.0);
    for (double t : nodes)
        set_checks(lq.U(t), "U(t)", t);
    r.samples = nodes.size();
    return r;
}

CheckReport check_convexity(const ConvexFunction& f, std::size_t samples, const CheckOptions& opt)
{
    CheckReport r;
    r.name = "convexity" + (f.name.empty() ? std::string() : " of " + f.name);
    r.tolerance = opt.tol;
    Sampler smp(opt.seed, opt.box);
    const auto n = static_cast<Eigen::Index>(f.dim);
    const double delta = f.delta;
    for (std::size_t it = 0; it < samples; ++it) {
        const Vec x = smp.point(n), y = smp.partner(x);
        const Vec gx = f.grad(x), gy = f.grad(y);
        const Vec dx = y - x;
        const auto wit = to_std({&x, &y});
        r.record("strong monotone gradient", (gy - gx).dot(dx) - delta * dx.squaredNorm(), wit);
        r.record("strong supporting hyperplane", f.eval(y) - f.eval(x) - gx.dot(dx) - 0.5 * delta * dx.squaredNorm(),
                 wit);
        Vec fd(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double h = 1e-5 * std::max(1.0, std::abs(x(j)));
            Vec xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            fd(j) = (f.eval(xp) - f.eval(xm)) / (2.0 * h);
        }
        const double err = (fd - gx).norm();
        r.record("finite-difference gradient", 1e-5 * std::max(1.0, gx.norm()) - err, to_std(x));
        ++r.samples;
    }
    return r;
}

}  // namespace mfb
