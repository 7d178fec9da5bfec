#include "mfb/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace mfb;

namespace {

// Tolerances; a criterion passes only if every listed bound holds.
constexpr double kOracleBound = 0.10;
constexpr double kOracleSeconds = 120.0;
constexpr double kCostRel = 0.01;
constexpr double kCostSeconds = 60.0;
constexpr std::size_t kGapCases = 20;
constexpr double kGapScale = 0.5;
constexpr double kLqicCost = 1e-3;
constexpr double kLqicControl = 0.05;
constexpr std::size_t kSuiteCases = 1000;
constexpr double kProjectionTol = 1e-10;
constexpr double kInverseTol = 1e-8;
constexpr std::size_t kCheckSamples = 10000;
constexpr double kDominationRatio = 0.01;
constexpr double kStabilityFactor = 2.0;

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Line {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Line> lines;

void report(int id, bool pass, const std::string& detail)
{
    lines.push_back({id, pass, detail});
    std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args)
{
    char buf[1024];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void guarded(int id, const std::function<void()>& body)
{
    try {
        body();
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Filled by criterion 1 and reused by criterion 3.
std::optional<ExampleRun> example_level;

void criterion_1()
{
    const std::size_t levels[3][2] = {{1024, 16}, {4096, 64}, {16384, 256}};
    ComponentErrors e[3];
    double stated_seconds = 0.0;
    for (int l = 0; l < 3; ++l) {
        const auto t0 = std::chrono::steady_clock::now();
        ExampleRun r = run_example(example_solver_config(levels[l][0], levels[l][1], 42));
        if (l == 1)
            stated_seconds = seconds_since(t0);
        e[l] = r.err;
        std::printf("    level M=%zu N=%zu: X %.4f Y %.4f Z %.4f u %.4f (%zu iterations)\n", levels[l][0], levels[l][1],
                    r.err.x, r.err.y, r.err.z, r.err.u, r.sol.report.iterations);
        if (l == 1)
            example_level = std::move(r);
    }
    auto below = [](const ComponentErrors& a, const ComponentErrors& b) {
        return a.x < b.x && a.y < b.y && a.z < b.z && a.u < b.u;
    };
    const bool within = e[1].max() <= kOracleBound;
    const bool refine = below(e[1], e[0]) && below(e[2], e[1]);
    const bool fast = stated_seconds <= kOracleSeconds;
    report(1, within && refine && fast,
           fmt("max error %.4f <= %.2f at M=4096 N=64; reduced at both refinements: %s; %.1fs <= %.0fs", e[1].max(),
               kOracleBound, refine ? "yes" : "no", stated_seconds, kOracleSeconds));
}

void criterion_2()
{
    const auto t0 = std::chrono::steady_clock::now();
    const LCProblemData lc = paper_example_lc();
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, 256), 100000, 1, 42);
    const ControlQuartet q = zero_controls(lc.dyn, noise);
    const CostBreakdown c = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid);
    const double secs = seconds_since(t0);
    const double ref = ito_isometry_cost();
    const double rel = std::abs(c.total - ref) / ref;
    report(2, rel <= kCostRel && secs <= kCostSeconds,
           fmt("cost %.6f vs %.6f, relative %.2e <= %.2f; %.1fs <= %.0fs", c.total, ref, rel, kCostRel, secs,
               kCostSeconds));
}

void criterion_3()
{
    if (!example_level)
        example_level = run_example(example_solver_config(4096, 64, 42));
    const ExampleRun& r = *example_level;
    const auto perts = random_perturbations(r.q, r.noise, kGapCases, kGapScale, 7);
    const GapReport g = optimality_gap_check(paper_example_lc(), r.q, perts, r.noise);
    double worst_bound = INFINITY, worst_pos = INFINITY;
    for (const auto& e : g.entries) {
        worst_bound = std::min(worst_bound, e.margin_bound);
        worst_pos = std::min(worst_pos, e.margin_positive);
    }
    report(3, g.passed() && g.entries.size() == kGapCases,
           fmt("%zu perturbations; min(gap - delta/2 dev + 3 sigma) %.4f, min(gap + 3 sigma) %.4f", g.entries.size(),
               worst_bound, worst_pos));
}

void criterion_4()
{
    const LQICComparison c =
        compare_lqic(lqic_crosscheck_problem(), lqic_crosscheck_config(42), lqic_crosscheck_brute_force());
    const double ctrl = std::max(c.control_gap[0], c.control_gap[1]);
    report(4, c.cost_gap <= kLqicCost && ctrl <= kLqicControl,
           fmt("J %.6f vs %.6f, gap %.2e <= %.0e; control L2 gap %.4f <= %.2f", c.cost_ham.total, c.bf.cost.total,
               c.cost_gap, kLqicCost, ctrl, kLqicControl));
}

std::string worst_of(const SuiteResult& s)
{
    std::string out;
    for (const auto& [name, v] : s.worst)
        out += fmt("%s%s %.1e", out.empty() ? "" : ", ", name.c_str(), v);
    return out;
}

void criterion_5()
{
    const SuiteResult s = projection_suite(kSuiteCases, 5, kProjectionTol);
    report(5, s.passed() && s.cases == kSuiteCases,
           fmt("%zu cases, %zu failures; worst relative violation: %s (tol %.0e)%s%s", s.cases, s.failures,
               worst_of(s).c_str(), kProjectionTol, s.witness.empty() ? "" : "; ", s.witness.c_str()));
}

void criterion_6()
{
    const SuiteResult s = grad_inverse_suite(kSuiteCases, 6, kInverseTol);
    report(6, s.passed() && s.cases == kSuiteCases,
           fmt("%zu pairs, %zu failures; worst relative violation: %s (tol %.0e)%s%s", s.cases, s.failures,
               worst_of(s).c_str(), kInverseTol, s.witness.empty() ? "" : "; ", s.witness.c_str()));
}

void criterion_7()
{
    const CoefficientSet c = lc_hamiltonian(paper_example_lc());
    const CheckReport adj = check_adjoint(*c.structural, kCheckSamples);
    const CheckReport mono = check_monotonicity(c, kCheckSamples);
    const CheckReport lip = check_lipschitz(c, kCheckSamples);
    const auto probes = linear_domination_ratios(*c.structural, {100.0, 1000.0});
    double worst_ratio = 0.0;
    for (const auto& p : probes)
        worst_ratio = std::max(worst_ratio, p.ratio);
    bool broken_ok = true;
    std::string broken;
    for (const auto& b : broken_example_variants(kCheckSamples)) {
        const bool caught = !b.report.passed() && !b.report.witness.empty();
        broken_ok = broken_ok && caught;
        if (!caught)
            broken += " [missed: " + b.name + "]";
    }
    const bool ok = adj.passed() && mono.passed() && lip.passed() && adj.samples == kCheckSamples &&
                    worst_ratio < kDominationRatio && broken_ok;
    report(7, ok,
           fmt("violations adjoint %zu, monotonicity %zu, lipschitz %zu over %zu samples; ratio %.2e < %.2f at |u| >= "
               "100; broken variants caught: %s%s",
               adj.violations, mono.violations, lip.violations, kCheckSamples, worst_ratio, kDominationRatio,
               broken_ok ? "all" : "no", broken.c_str()));
}

void criterion_8()
{
    const LCProblemData lc = paper_example_lc();
    const CoefficientSet c = lc_hamiltonian(lc);
    const CoefficientSet c0 = base_coefficients(*c.structural);
    SolverConfig cfg = example_solver_config(4096, 64, 42);
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, cfg.steps), cfg.particles, 1, cfg.seed);
    const Solution direct = picard_solve(c, noise, cfg);
    cfg.alpha_schedule = {0.0, 0.5, 1.0};
    const Solution cont = continuation_solve(c, c0, noise, cfg);

    double worst = 0.0;
    auto scan = [&](const std::vector<double>& res) {
        for (std::size_t k = 2; k < res.size(); ++k)
            worst = std::max(worst, res[k] / res[k - 1]);
    };
    scan(direct.report.residuals);
    for (const auto& st : cont.report.stage_residuals)
        scan(st);
    const double dt = noise.grid.dt;
    const double gap = pair_distance(cont.V, direct.V, dt) / pair_norm(direct.V, dt);
    report(8, worst < 1.0 && gap <= 2.0 * cfg.picard_tol,
           fmt("max contraction ratio after iteration 1: %.3f < 1; continuation {0, 0.5, 1} vs direct %.2e <= %.0e",
               worst, gap, 2.0 * cfg.picard_tol));
}

void criterion_9()
{
    SolverConfig cfg = example_solver_config(4096, 64, 42);
    cfg.picard_tol = 1e-9;
    cfg.picard_max = 500;
    const BrownianEnsemble noise = sample_brownian(make_grid(1.0, cfg.steps), cfg.particles, 1, cfg.seed);
    const auto r = stability_probe(lc_hamiltonian(paper_example_lc()), unit_drift_forcing(1), {1e-2, 1e-3}, noise, cfg);
    const double factor = std::max(r[0], r[1]) / std::min(r[0], r[1]);
    report(9, std::isfinite(factor) && factor <= kStabilityFactor,
           fmt("ratios %.5f (s=1e-2), %.5f (s=1e-3); factor %.4f <= %.1f", r[0], r[1], factor, kStabilityFactor));
}

void criterion_10()
{
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / fs::path("mfb-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(root);
    struct Job {
        const char* mode;
        std::size_t particles, steps;
    };
    const Job jobs[] = {{"example-lc", 1024, 16}, {"lqic-compare", 512, 4}, {"stability", 1024, 16}};
    std::ostringstream sink;
    std::size_t files = 0, differing = 0;
    std::string which;
    for (const auto& j : jobs) {
        fs::path dirs[2];
        for (int rep = 0; rep < 2; ++rep) {
            dirs[rep] = root / (std::string(j.mode) + "-" + std::to_string(rep));
            cli::RunOptions opt;
            opt.mode = j.mode;
            opt.particles = j.particles;
            opt.steps = j.steps;
            opt.seed = 42;
            opt.out = dirs[rep].string();
            cli::run(opt, sink);
        }
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            ++files;
            const fs::path other = dirs[1] / entry.path().filename();
            if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
                ++differing;
                which += " " + entry.path().filename().string();
            }
        }
    }
    fs::remove_all(root);
    report(10, files > 0 && differing == 0,
           fmt("%zu output files from 3 subcommands run twice; %zu differ%s", files, differing, which.c_str()));
}

}  // namespace

int main()
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::function<void()> criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                              criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};
    for (int i = 0; i < 10; ++i)
        guarded(i + 1, criteria[i]);
    int failed = 0;
    for (const auto& l : lines)
        failed += l.pass ? 0 : 1;
    std::printf("%d of %zu criteria passed (%.0fs)\n", static_cast<int>(lines.size()) - failed, lines.size(),
                seconds_since(t0));
    return failed == 0 ? 0 : cli::acceptance_failure;
}
