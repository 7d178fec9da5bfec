#pragma once

#include "mfb/solver.hpp"

#include <array>
#include <string>
#include <vector>

namespace mfb {

struct ControlQuartet {
    std::array<Vec, 2> xi;
    std::array<EnsembleProcess, 2> u;  // width k, N nodes (left endpoints)
};

struct CostBreakdown {
    double initial = 0.0;
    double terminal = 0.0;
    double running_state = 0.0;
    double running_control = 0.0;
    double total = 0.0;
    // Per-particle random part (terminal + running), used for Monte Carlo error bars.
    std::vector<double> per_particle;

    double std_error() const;
};

ControlQuartet extract_lc_controls(const PairProcess& V, const LCProblemData& lc, const TimeGrid& grid,
                                   double tol = 1e-12);
ControlQuartet extract_lqic_controls(const PairProcess& V, const LQICProblemData& lq, const TimeGrid& grid);

// Zero controls on the noise ensemble.
ControlQuartet zero_controls(const LinearDynamics& dyn, const BrownianEnsemble& noise);

std::array<EnsembleProcess, 2> simulate_state(const LinearDynamics& dyn, const ControlQuartet& q,
                                              const BrownianEnsemble& noise);

CostBreakdown cost_lc(const LCProblemData& lc, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                      const TimeGrid& grid);
CostBreakdown cost_lqic(const LQICProblemData& lq, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                        const TimeGrid& grid);

// Throws AdmissibilityViolation when a control leaves its constraint set.
void require_admissible(const LQICProblemData& lq, const ControlQuartet& q, const TimeGrid& grid, double tol = 1e-9);

struct GapEntry {
    double gap = 0.0;        // J(q) - J(q_opt)
    double deviation = 0.0;  // quadratic deviation measure
    double bound = 0.0;      // (delta/2) * deviation
    double mc_tol = 0.0;     // 3 standard errors of the paired difference
    double margin_bound = 0.0;     // gap - bound + mc_tol
    double margin_positive = 0.0;  // gap + mc_tol
};

struct GapReport {
    double delta = 0.0;
    double optimal_cost = 0.0;
    std::vector<GapEntry> entries;
    bool passed() const;
};

GapReport optimality_gap_check(const LCProblemData& lc, const ControlQuartet& q_opt,
                               const std::vector<ControlQuartet>& perturbations, const BrownianEnsemble& noise);
GapReport optimality_gap_check(const LQICProblemData& lq, const ControlQuartet& q_opt,
                               const std::vector<ControlQuartet>& perturbations, const BrownianEnsemble& noise);

struct DualityReport {
    double lhs = 0.0;  // terminal and running-state gradient pairings
    double rhs = 0.0;  // initial and control pairings
    double residual = 0.0;
    double scale = 0.0;  // max(|lhs|, |rhs|)
};

// Both sides of the duality identity for the variation q - q_opt on a common ensemble.
DualityReport duality_residual(const PairProcess& V, const LCProblemData& lc, const ControlQuartet& q_opt,
                               const ControlQuartet& q, const BrownianEnsemble& noise);

// Relative L2 distance sqrt(sum|a-b|^2 / sum|b|^2) over particles and nodes [0, nodes).
double relative_l2(const EnsembleProcess& a, const EnsembleProcess& b, std::size_t nodes);

std::string controls_csv(const ControlQuartet& q, const TimeGrid& grid);

}  // namespace mfb
