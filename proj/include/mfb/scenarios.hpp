#pragma once

#include "mfb/checks.hpp"
#include "mfb/oracle.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mfb {

// Hat basis with 8 cells, damping 0.5, relative tolerance 1e-6, schedule {0, 1}.
SolverConfig example_solver_config(std::size_t particles, std::size_t steps, std::uint64_t seed);

struct ComponentErrors {
    double x = 0.0, y = 0.0, z = 0.0, u = 0.0;
    double max() const;
};

struct ExampleRun {
    BrownianEnsemble noise;
    Solution sol;
    OracleSolution ref;
    ControlQuartet q;
    ComponentErrors err;  // worse of the two equations per component
};

// Continuation solve of the example Hamiltonian from its base system, compared against the closed form.
ExampleRun run_example(const SolverConfig& cfg);

ComponentErrors oracle_errors(const PairProcess& V, const ControlQuartet& q, const OracleSolution& ref,
                              std::size_t steps);

// Scalar coupled instance with box constraints used to cross-check the Hamiltonian route.
LQICProblemData lqic_crosscheck_problem();
// Joint degree-1 basis, damping 0.2, relative tolerance 1e-10, 4 steps, 512 particles.
SolverConfig lqic_crosscheck_config(std::uint64_t seed);
BruteForceOptions lqic_crosscheck_brute_force();

struct LQICComparison {
    Solution sol;
    ControlQuartet q_ham;
    CostBreakdown cost_ham;
    BruteForceResult bf;
    double cost_gap = 0.0;                  // |J_ham - J_bf| / max(1, J_ham)
    std::array<double, 2> control_gap{};    // relative L2 of u_bf against u_ham
};

LQICComparison compare_lqic(const LQICProblemData& lq, const SolverConfig& cfg, const BruteForceOptions& bf);

// Adapted perturbations q_opt + (a, b + c sin W + e t + g W) with random coefficients of size up to `scale`.
std::vector<ControlQuartet> random_perturbations(const ControlQuartet& q_opt, const BrownianEnsemble& noise,
                                                 std::size_t count, double scale, std::uint64_t seed);

// Unit drift forcing in both forward equations.
PerturbationData unit_drift_forcing(std::size_t n);

struct BrokenVariant {
    std::string name;
    CheckReport report;
};

// Example coefficients with one deliberate defect each, paired with the checker that must catch it.
std::vector<BrokenVariant> broken_example_variants(std::size_t samples, const CheckOptions& opt = {});

struct SuiteResult {
    std::size_t cases = 0;
    std::size_t failures = 0;
    std::vector<std::pair<std::string, double>> worst;  // per property: largest violation relative to its scale
    std::string witness;                                // first failing case
    bool passed() const { return cases > 0 && failures == 0; }
};

// Random (set, weight, point) cases: variational inequality, firm nonexpansiveness in the weight, and the
// Euclidean Lipschitz bound |W|/delta, each to `tol` relative to the size of the terms.
SuiteResult projection_suite(std::size_t cases, std::uint64_t seed, double tol = 1e-10);

// Random pairs for the example family and random strongly convex quadratics: grad f(inverse(v)) = v to `tol`
// and the 1/delta Lipschitz bound of the inverse.
SuiteResult grad_inverse_suite(std::size_t cases, std::uint64_t seed, double tol = 1e-8);

}  // namespace mfb
