#pragma once

#include "mfb/control.hpp"

#include <array>
#include <vector>

namespace mfb {

// Root of sign(u)(e^{|u|} - 1) + u + w = 0.
double implicit_u(double w, double tol = 1e-14);

struct OracleSolution {
    PairProcess V;                      // X = Y for both equations, Z = u + sin W
    std::array<EnsembleProcess, 2> u;   // N nodes
    std::array<Vec, 2> xi;
    double max_residual = 0.0;          // worst |grad f(u) + u + sin W| over particles and nodes
    double tol = 1e-14;
};

// Closed-form solution of the worked example on the given noise, X by the zero-drift Euler recursion.
OracleSolution example_reference(const BrownianEnsemble& noise, double tol = 1e-14);

// 1/2 - (1 - e^{-2})/4: the example's cost at zero controls.
double ito_isometry_cost();

struct BruteForceOptions {
    std::size_t max_iter = 5000;
    double step = 0.1;          // first trial step; large first steps can clamp every particle
    double tol = 1e-8;          // projected-gradient residual in (xi, theta)
    int degree = 1;             // polynomial degree in the normalized increment history
    double budget = 1e7;        // bound on n k N M
};

struct BruteForceResult {
    ControlQuartet q;
    CostBreakdown cost;
    std::vector<double> cost_history;
    std::size_t iterations = 0;
    double step = 0.0;            // step of the last accepted update
    double stationarity = 0.0;    // |x - Pi(x - grad J(x))| over (xi, theta)
    bool converged = false;
};

// Minimizes the discretized cost over xi in U0 and controls u(n) = clamp_U(phi(n) theta(n)), phi(n) polynomial
// in the increments before t(n). Exact gradients from the pathwise adjoint; monotone backtracking with
// Barzilai-Borwein trial steps. Process constraints must be boxes or the full space.
BruteForceResult brute_force_lqic(const LQICProblemData& lq, const BrownianEnsemble& noise,
                                  const BruteForceOptions& opt = {});

// Pathwise gradient of the discretized cost: dJ = sum_i <xi_i, dxi_i> + sum_{i,n,m} (dt/M) <u_i(m,n), du_i(m,n)>.
struct CostGradient {
    std::array<Vec, 2> xi;
    std::array<EnsembleProcess, 2> u;
};
CostGradient lqic_gradient(const LQICProblemData& lq, const ControlQuartet& q, const std::array<EnsembleProcess, 2>& X,
                           const BrownianEnsemble& noise);

// Monomials up to `degree` in the increments dW(0..node-1) / sqrt(dt); constant only at node 0.
Mat history_features(const BrownianEnsemble& noise, std::size_t node, int degree);

}  // namespace mfb
