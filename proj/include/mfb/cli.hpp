#pragma once

#include "mfb/scenarios.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mfb::cli {

using Json = nlohmann::ordered_json;

enum ExitCode : int { ok = 0, config_error = 2, non_convergence = 3, admissibility = 4, acceptance_failure = 5 };

// Convex function by family name: quadratic {Q, c}, linear {c}, zero, exponential (scalar only).
struct FunctionSpec {
    std::string family = "zero";
    Mat Q;
    Vec c;
};

// Plain-data problem description; time-invariant matrices only. A builtin tag replaces the data.
struct ProblemSpec {
    std::string type = "lc";  // lc | lqic
    std::string builtin;      // paper-example-lc | lqic-crosscheck
    std::size_t n = 1, m = 1, k = 1, d = 1;
    double T = 1.0;
    std::array<Mat, 2> A, Abar, B, Bbar, C, D;
    Mat H;
    Vec x0;
    std::array<Vec, 2> rho, kappa;
    double tau = 0.0;
    double tau1 = 1e-2;
    std::array<std::optional<Mat>, 2> mean_feedback;
    AssumptionConstants constants;

    FunctionSpec f11, f12, f21, f22;
    std::array<FunctionSpec, 2> f3, f4;

    std::array<Mat, 2> M, G, Q, R;
    double delta = 1.0;
    ConvexSet U0, U;
};

struct SolverOverrides {
    std::optional<std::size_t> particles, steps, picard_max;
    std::optional<std::uint64_t> seed;
    std::optional<double> picard_tol, damping, alpha_floor;
    std::optional<std::vector<double>> alpha_schedule;
    std::optional<RegressionBasis> basis;
};

struct ProblemFile {
    ProblemSpec problem;
    SolverOverrides solver;
    std::size_t check_samples = 10000;
};

// Schema errors carry the field path; invariant errors name the failing matrix.
ProblemFile parse_problem(const Json& j);
ProblemFile parse_problem_file(const std::string& path);
Json serialize(const ProblemFile& f);

LCProblemData build_lc(const ProblemSpec& s);
LQICProblemData build_lqic(const ProblemSpec& s);
ProblemSpec builtin_problem(const std::string& tag);

struct RunOptions {
    std::string mode;  // solve | check | example-lc | lqic-compare | stability
    std::optional<std::string> config;
    std::optional<std::size_t> particles, steps;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<std::vector<double>> alpha_steps;
    std::string out = "out";
};

// Runs one subcommand, writes its artifacts under opt.out and returns the exit code.
int run(const RunOptions& opt, std::ostream& log);

// Writes through a temporary file in the same directory and renames it into place.
void write_atomic(const std::string& path, const std::string& content);

std::vector<double> parse_list(const std::string& text);

Json to_json(const CheckReport& r);
Json to_json(const SolveReport& r);
Json to_json(const CostBreakdown& c);
Json to_json(const GapReport& g);

}  // namespace mfb::cli
