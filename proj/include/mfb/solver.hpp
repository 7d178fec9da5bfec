#pragma once

#include "mfb/coefficients.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mfb {

enum class BasisKind { polynomial_noise, polynomial_state, joint, hat_noise };

std::string to_string(BasisKind k);
BasisKind basis_kind_from(const std::string& name);

struct RegressionBasis {
    BasisKind kind = BasisKind::joint;
    int degree = 3;          // total degree of the polynomial part
    int cells = 8;           // hat_noise: cells on [-4, 4] in normalized noise
    int state_degree = 1;    // hat_noise: polynomial degree in the frozen state
    double rank_tol = 1e-10; // relative pivot below which a column is dropped
};

// Features at one node: cumulative noise w (d x M, normalized by sqrt(t) inside) and frozen state (s x M).
// Returns M x p, constant column first.
Mat basis_features(const RegressionBasis& b, const Eigen::Ref<const Mat>& w, double t, const Eigen::Ref<const Mat>& state);

// All monomials of total degree <= degree in the rows of vars (v x M), graded; M x p, constant column first.
Mat polynomial_features(const Eigen::Ref<const Mat>& vars, int degree);

struct RegressionResult {
    Mat coefficients;  // p x r, zero rows for dropped columns
    Mat fitted;        // M x r
    std::vector<Eigen::Index> kept;
    Eigen::Index dropped = 0;
};

// Least squares of each column of `values` (M x r) on `features` (M x p); dependent columns are dropped in order.
RegressionResult regress_conditional(const Mat& values, const Mat& features, double rank_tol = 1e-10);

struct SolverConfig {
    std::size_t particles = 4096;
    std::size_t steps = 64;
    RegressionBasis basis;
    double picard_tol = 1e-6;
    std::size_t picard_max = 200;
    double damping = 1.0;
    std::vector<double> alpha_schedule{0.0, 1.0};
    double alpha_floor = 1.0 / 64.0;
    double divergence_bound = 1e6;
    std::uint64_t seed = 42;
};

void validate(const SolverConfig& cfg);

struct SolveReport {
    std::vector<double> residuals;  // final alpha stage
    std::vector<double> ratios;     // residuals[k+1] / residuals[k]
    double final_residual = 0.0;
    std::vector<double> alpha_trace;  // accepted alpha values in order
    std::vector<std::size_t> stage_iterations;
    std::vector<std::vector<double>> stage_residuals;
    std::array<double, 2> lambda_norms{0.0, 0.0};
    std::size_t iterations = 0;  // all stages
    std::size_t reduced_regressions = 0;  // last sweep: regressions that dropped columns
    std::size_t dropped_columns = 0;
    bool converged = false;
    double wall_time_s = 0.0;
};

using PairProcess = std::array<TripleProcess, 2>;

struct Solution {
    PairProcess V;
    SolveReport report;
};

struct SweepStats {
    std::size_t reduced_regressions = 0;
    std::size_t dropped_columns = 0;
};

// Y = Z = 0 and X from one forward pass.
PairProcess initial_iterate(const CoefficientSet& c, const BrownianEnsemble& noise);

// Forward Euler for equation `eq` against frozen (Yhat, Z) and the other equation's X; own means on the fly.
EnsembleProcess forward_solve(const CoefficientSet& c, const PairProcess& frozen, const BrownianEnsemble& noise, int eq);
// Backward regression for equation `eq` against frozen X and the other equation's Y. Returns {Y, Z}.
std::array<EnsembleProcess, 2> backward_solve(const CoefficientSet& c, const PairProcess& frozen,
                                              const BrownianEnsemble& noise, const RegressionBasis& basis, int eq);

// Both equations in place: backward overwrites Y, Z; forward overwrites X.
void backward_sweep(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise,
                    const RegressionBasis& basis, SweepStats* stats = nullptr);
void forward_sweep(const CoefficientSet& c, PairProcess& V, const BrownianEnsemble& noise);

Solution picard_solve(const CoefficientSet& c, const BrownianEnsemble& noise, const SolverConfig& cfg,
                      const PairProcess* warm = nullptr);
Solution continuation_solve(const CoefficientSet& c, const CoefficientSet& c0, const BrownianEnsemble& noise,
                            const SolverConfig& cfg, const PerturbationData& forcing = {});

// |V(s) - V(0)| / s in the pair norm, coefficient forcing beta scaled by s; s = 0 gives 0.
std::vector<double> stability_probe(const CoefficientSet& c, const PerturbationData& beta,
                                    const std::vector<double>& sizes, const BrownianEnsemble& noise,
                                    const SolverConfig& cfg);

double pair_distance(const PairProcess& a, const PairProcess& b, double dt);
double pair_norm(const PairProcess& v, double dt);

// Columns: t, then mean, q05, q50, q95 of each component of X1, Y1, Z1, X2, Y2, Z2.
std::string trajectory_csv(const PairProcess& V, const TimeGrid& grid);

}  // namespace mfb
