#include "mfb/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mfb {

SolverConfig example_solver_config(std::size_t particles, std::size_t steps, std::uint64_t seed)
{
    SolverConfig cfg;
    cfg.particles = particles;
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.basis.kind = BasisKind::hat_noise;
    cfg.basis.cells = 8;
    cfg.basis.state_degree = 1;
    cfg.damping = 0.5;
    cfg.picard_tol = 1e-6;
    cfg.picard_max = 200;
    cfg.alpha_schedule = {0.0, 1.0};
    return cfg;
}

double ComponentErrors::max() const
{
    return std::max({x, y, z, u});
}

ComponentErrors oracle_errors(const PairProcess& V, const ControlQuartet& q, const OracleSolution& ref,
                              std::size_t steps)
{
    ComponentErrors e;
    for (std::size_t i = 0; i < 2; ++i) {
        e.x = std::max(e.x, relative_l2(V[i].X, ref.V[i].X, steps + 1));
        e.y = std::max(e.y, relative_l2(V[i].Y, ref.V[i].Y, steps + 1));
        e.z = std::max(e.z, relative_l2(V[i].Z, ref.V[i].Z, steps));
        e.u = std::max(e.u, relative_l2(q.u[i], ref.u[i], steps));
    }
    return e;
}

ExampleRun run_example(const SolverConfig& cfg)
{
    validate(cfg);
    const LCProblemData lc = paper_example_lc();
    const CoefficientSet c = lc_hamiltonian(lc);
    const CoefficientSet c0 = base_coefficients(*c.structural);
    ExampleRun r;
    r.noise = sample_brownian(make_grid(lc.dyn.T, cfg.steps), cfg.particles, lc.dyn.d, cfg.seed);
    r.sol = continuation_solve(c, c0, r.noise, cfg);
    r.q = extract_lc_controls(r.sol.V, lc, r.noise.grid);
    r.ref = example_reference(r.noise);
    r.err = oracle_errors(r.sol.V, r.q, r.ref, cfg.steps);
    return r;
}

LQICProblemData lqic_crosscheck_problem()
{
    LQICProblemData lq;
    auto& d = lq.dyn;
    d.n = d.m = d.k = d.d = 1;
    d.T = 1.0;
    auto c = [](double v) { return Mat(Mat::Constant(1, 1, v)); };
    auto field = [](double v) -> ProcessField {
        return [v](const NodeContext&, Eigen::Index batch) -> Mat { return Mat::Constant(1, batch, v); };
    };
    for (int i = 0; i < 2; ++i) {
        d.A[i] = c(0.1);
        d.Abar[i] = c(0.005);
        d.B[i] = c(1.0);
        d.Bbar[i] = c(1.0);
        d.C[i] = c(0.2);
        d.D[i] = c(0.5);
        d.rho[i] = field(0.1);
        d.kappa[i] = field(0.2);
        lq.Q[i] = c(1.0);
        lq.R[i] = c(1.0);
    }
    d.H = c(1.0);
    d.x0 = Vec::Constant(1, 0.5);
    d.tau = 0.1;
    lq.M = {c(1.0), c(2.0)};
    lq.G = {ParticleMatrix(c(1.0)), ParticleMatrix(c(0.5))};
    lq.delta = 1.0;
    lq.U0 = ConvexSet::box(Vec::Constant(1, -0.2), Vec::Constant(1, 1.0));
    lq.U = TimeSet(ConvexSet::box(Vec::Constant(1, -0.5), Vec::Constant(1, 0.5)));
    return lq;
}

SolverConfig lqic_crosscheck_config(std::uint64_t seed)
{
    SolverConfig cfg;
    cfg.particles = 512;
    cfg.steps = 4;
    cfg.seed = seed;
    cfg.basis.kind = BasisKind::joint;
    cfg.basis.degree = 1;
    cfg.damping = 0.2;
    cfg.picard_tol = 1e-10;
    cfg.picard_max = 1000;
    return cfg;
}

BruteForceOptions lqic_crosscheck_brute_force()
{
    BruteForceOptions o;
    o.degree = 1;
    o.step = 0.1;
    o.tol = 1e-7;
    o.max_iter = 5000;
    return o;
}

LQICComparison compare_lqic(const LQICProblemData& lq, const SolverConfig& cfg, const BruteForceOptions& bf)
{
    validate(cfg);
    const BrownianEnsemble noise = sample_brownian(make_grid(lq.dyn.T, cfg.steps), cfg.particles, lq.dyn.d, cfg.seed);
    validate(lq, &noise.grid);
    LQICComparison r;
    const CoefficientSet c = lqic_hamiltonian(lq);
    if (cfg.alpha_schedule.size() > 1)
        r.sol = continuation_solve(c, base_coefficients(*c.structural), noise, cfg);
    else
        r.sol = picard_solve(c, noise, cfg);
    r.q_ham = extract_lqic_controls(r.sol.V, lq, noise.grid);
    r.cost_ham = cost_lqic(lq, r.q_ham, simulate_state(lq.dyn, r.q_ham, noise), noise.grid);
    r.bf = brute_force_lqic(lq, noise, bf);
    r.cost_gap = std::abs(r.cost_ham.total - r.bf.cost.total) / std::max(1.0, std::abs(r.cost_ham.total));
    for (std::size_t i = 0; i < 2; ++i)
        r.control_gap[i] = relative_l2(r.bf.q.u[i], r.q_ham.u[i], noise.grid.N);
    return r;
}

std::vector<ControlQuartet> random_perturbations(const ControlQuartet& q_opt, const BrownianEnsemble& noise,
                                                 std::size_t count, double scale, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    auto draw = [&] { return scale * (2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0); };
    std::vector<ControlQuartet> out;
    out.reserve(count);
    const std::size_t N = noise.grid.N;
    for (std::size_t p = 0; p < count; ++p) {
        ControlQuartet q = q_opt;
        for (std::size_t i = 0; i < 2; ++i) {
            q.xi[i].array() += draw();
            const double b = draw(), c = draw(), e = draw(), g = draw();
            for (std::size_t k = 0; k < N; ++k) {
                const double t = noise.grid.t(k);
                const auto W = noise.path.at(k);
                auto u = q.u[i].at(k);
                for (Eigen::Index m = 0; m < u.cols(); ++m) {
                    const double w = W(0, m);
                    u.col(m).array() += b + c * std::sin(w) + e * t + g * w;
                }
            }
        }
        out.push_back(std::move(q));
    }
    return out;
}

PerturbationData unit_drift_forcing(std::size_t n)
{
    PerturbationData p;
    const auto rows = static_cast<Eigen::Index>(n);
    for (int i = 0; i < 2; ++i)
        p.psi[i] = [rows](const NodeContext&, Eigen::Index batch) -> Mat { return Mat::Ones(rows, batch); };
    return p;
}

std::vector<BrokenVariant> broken_example_variants(std::size_t samples, const CheckOptions& opt)
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    std::vector<BrokenVariant> out;

    {
        CoefficientSet b = c;
        b.structural->constants.Lsigma = 0.1;
        out.push_back({"lipschitz: diffusion constant declared 0.1", check_lipschitz(b, samples, opt)});
    }
    {
        StructuralData s = *c.structural;
        for (int i = 0; i < 2; ++i) {
            const AdjointMap h = s.h[i];
            s.h[i] = [h](double t, const Vec& u) -> Vec { return -h(t, u); };
        }
        out.push_back({"adjoint: h with flipped sign", check_adjoint(s, samples, opt)});
    }
    {
        CoefficientSet b = c;
        for (int i = 0; i < 2; ++i) {
            const TerminalMap phi = c.phi[i];
            b.phi[i] = [phi](const NodeContext& ctx, const Mat& x1, const Mat& x2) -> Mat {
                return -phi(ctx, x1, x2);
            };
        }
        out.push_back({"monotonicity: negated terminal map", check_monotonicity(b, samples, opt)});
    }
    {
        StructuralData s = *c.structural;
        for (int i = 0; i < 2; ++i)
            s.h[i] = [](double, const Vec& u) -> Vec { return -u; };
        out.push_back({"no-linear-domination: linear h(u) = -u",
                       check_no_linear_domination(s, {0.0, 1.0, 10.0, 100.0, 1000.0})});
    }
    return out;
}

namespace {

class Draw {
public:
    explicit Draw(std::uint64_t seed) : rng_(seed) {}
    double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    int integer(int lo, int hi) { return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1)); }
    Vec vec(Eigen::Index n, double a)
    {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(i) = uniform(-a, a);
        return v;
    }

private:
    std::mt19937_64 rng_;
};

ConvexSet random_set(Draw& r, Eigen::Index n, int kind)
{
    switch (kind) {
    case 0: {
        const Vec a = r.vec(n, 2.0), b = r.vec(n, 2.0);
        return ConvexSet::box(a.cwiseMin(b), a.cwiseMax(b));
    }
    case 1:
        return ConvexSet::ball(r.vec(n, 1.0), r.uniform(0.1, 2.0));
    case 2: {
        Vec a = r.vec(n, 1.0);
        a(0) += a(0) >= 0.0 ? 0.5 : -0.5;
        return ConvexSet::halfspace(a, r.uniform(-1.0, 1.0));
    }
    case 3:
        return ConvexSet::singleton(r.vec(n, 1.0));
    case 4:
        return ConvexSet::full_space(static_cast<std::size_t>(n));
    default: {
        const Eigen::Index h = n / 2 > 0 ? n / 2 : 1;
        if (h == n)
            return random_set(r, n, 0);
        const Vec a = r.vec(h, 2.0), b = r.vec(h, 2.0);
        return ConvexSet::product(
            {ConvexSet::box(a.cwiseMin(b), a.cwiseMax(b)), ConvexSet::ball(r.vec(n - h, 1.0), r.uniform(0.1, 2.0))});
    }
    }
}

Mat random_spd(Draw& r, Eigen::Index n, double floor)
{
    Mat A(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            A(i, j) = r.uniform(-1.0, 1.0);
    return A * A.transpose() + floor * Mat::Identity(n, n);
}

struct Tracker {
    SuiteResult& res;
    double tol;
    std::vector<double> worst;
    bool failed = false;

    // slack >= -tol * scale passes
    void record(std::size_t prop, double slack, double scale, const std::string& what)
    {
        const double v = -slack / std::max(1.0, scale);
        worst[prop] = std::max(worst[prop], v);
        if (!(v <= tol) && !failed) {
            failed = true;
            if (res.witness.empty())
                res.witness = what;
        }
    }
};

}  // namespace

SuiteResult projection_suite(std::size_t cases, std::uint64_t seed, double tol)
{
    Draw r(seed);
    SuiteResult res;
    Tracker tr{res, tol, {0.0, 0.0, 0.0}};
    for (std::size_t c = 0; c < cases; ++c) {
        tr.failed = false;
        const Eigen::Index n = r.integer(1, 4);
        const int kind = r.integer(0, 5);
        const ConvexSet K = random_set(r, n, kind);
        const Mat Wm = r.integer(0, 3) == 0 ? Mat(r.vec(n, 1.0).cwiseAbs().array() + 0.2).matrix().asDiagonal()
                                            : random_spd(r, n, 0.2);
        const WeightedNorm W = make_weighted_norm(Wm);
        const Vec x = r.vec(n, 5.0), y = r.vec(n, 5.0);
        const Vec px = project(K, W, x), py = project(K, W, y);
        const std::string tag = "case " + std::to_string(c) + " (" + K.kind_name() + ", n=" + std::to_string(n) + ")";

        // <x - Pi x, W (k - Pi x)> <= 0 for points k of K
        for (int s = 0; s < 8; ++s) {
            const Vec k = s == 0 ? K.feasible_point() : project(K, W, r.vec(n, 6.0));
            const double v = weighted_inner(W, x - px, k - px);
            const double scale = Wm.norm() * (x - px).norm() * (k - px).norm();
            tr.record(0, -v, scale, tag + ": variational inequality");
        }
        const Vec dp = px - py, d = x - y;
        const double firm = weighted_inner(W, dp, d) - weighted_inner(W, dp, dp);
        tr.record(1, firm, Wm.norm() * d.squaredNorm(), tag + ": firm nonexpansiveness");
        const double w_op = Eigen::SelfAdjointEigenSolver<Mat>(Wm, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
        const double lip = w_op / W.delta * d.squaredNorm() - dp.squaredNorm();
        tr.record(2, lip, d.squaredNorm(), tag + ": Lipschitz bound");
        ++res.cases;
        if (tr.failed)
            ++res.failures;
    }
    res.worst = {{"variational", tr.worst[0]}, {"firm nonexpansive", tr.worst[1]}, {"lipschitz", tr.worst[2]}};
    return res;
}

SuiteResult grad_inverse_suite(std::size_t cases, std::uint64_t seed, double tol)
{
    Draw r(seed);
    SuiteResult res;
    Tracker tr{res, tol, {0.0, 0.0}};
    const ConvexFunction example = example_family();
    for (std::size_t c = 0; c < cases; ++c) {
        tr.failed = false;
        const bool use_example = c % 2 == 0;
        ConvexFunction f;
        if (use_example) {
            f = example;
        } else {
            const Eigen::Index n = r.integer(1, 4);
            f = quadratic_function(random_spd(r, n, r.uniform(0.05, 1.0)), r.vec(n, 1.0));
        }
        const auto n = static_cast<Eigen::Index>(f.dim);
        const double span = use_example ? 20.0 : 5.0;
        const Vec v = r.vec(n, span), w = r.vec(n, span);
        const Vec a = grad_inverse(f, v), b = grad_inverse(f, w);
        const std::string tag = "case " + std::to_string(c) + " (" + f.name + ", n=" + std::to_string(n) + ")";
        tr.record(0, -(f.grad(a) - v).norm(), v.norm(), tag + ": round trip");
        tr.record(0, -(f.grad(b) - w).norm(), w.norm(), tag + ": round trip");
        tr.record(1, (v - w).norm() / f.delta - (a - b).norm(), (v - w).norm() / f.delta, tag + ": 1/delta bound");
        ++res.cases;
        if (tr.failed)
            ++res.failures;
    }
    res.worst = {{"round trip", tr.worst[0]}, {"lipschitz", tr.worst[1]}};
    return res;
}

}  // namespace mfb
