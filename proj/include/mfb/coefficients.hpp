#pragma once

#include "mfb/convex.hpp"
#include "mfb/core.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>

namespace mfb {

// Evaluation context for a batch of consecutive particles at one grid node.
struct NodeContext {
    double t = 0.0;
    std::size_t node = 0;
    std::size_t first_particle = 0;
    const double* w_data = nullptr;  // cumulative noise, d x batch, column-major
    Eigen::Index w_rows = 0;
    Eigen::Index w_cols = 0;

    Eigen::Map<const Mat> w() const { return {w_data, w_rows, w_cols}; }
    bool has_noise() const { return w_data != nullptr; }
};

NodeContext node_context(const BrownianEnsemble& noise, std::size_t node);

// theta_i for a batch: shared mean blocks plus per-particle own blocks (one column each).
struct ExtendedStateView {
    Vec mean_x1, mean_y1, mean_x2, mean_y2;
    Mat x;  // n x batch
    Mat y;  // n x batch
    Mat z;  // (n d) x batch, z = (z_1; ...; z_d)

    Eigen::Index batch() const { return x.cols(); }
    const Vec& mean_y_own(int eq) const { return eq == 0 ? mean_y1 : mean_y2; }
};

struct GammaBatch {
    Mat f;      // n x batch
    Mat b;      // n x batch
    Mat sigma;  // (n d) x batch
};

enum class Part { backward, forward, all };

inline bool wants_f(Part p) { return p != Part::forward; }
inline bool wants_bs(Part p) { return p != Part::backward; }

using InitialMap = std::function<Vec(const Vec& y1, const Vec& y2)>;
using TerminalMap = std::function<Mat(const NodeContext&, const Mat& x1, const Mat& x2)>;
using Generator = std::function<void(const NodeContext&, const ExtendedStateView&, Part, GammaBatch&)>;
using VecMap = std::function<Vec(const Vec&)>;
using AdjointMap = std::function<Vec(double, const Vec&)>;
// Per-particle field of given width over a batch; empty means identically zero.
using ProcessField = std::function<Mat(const NodeContext&, Eigen::Index batch)>;

struct TimeMatrix {
    Mat value;
    std::function<Mat(double)> fn;

    TimeMatrix() = default;
    TimeMatrix(Mat m) : value(std::move(m)) {}
    static TimeMatrix of(std::function<Mat(double)> f, Mat shape_hint);

    Mat operator()(double t) const { return fn ? fn(t) : value; }
    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    bool is_zero() const { return !fn && (value.size() == 0 || value.isZero(0.0)); }
};

struct AssumptionConstants {
    double L = 1.0;
    double Lb = 1.0, Lsigma = 1.0, Lf = 1.0, LPhi = 1.0, LPsi = 1.0;
    double L1 = 1.0, L2 = 1.0, L3 = 1.0;
    double eps = 0.1;        // mean-block Lipschitz constant
    double eps_cross = 0.1;  // cross-argument constant for Phi, Psi
};

struct StructuralData {
    std::size_t n = 1, m = 1, k = 1, d = 1;
    Mat H;
    std::array<TimeMatrix, 2> B, Bbar, D;
    double tau = 0.0;
    // Optional k x n gain on the own mean E[Y_i] inside h_i; defaults to tau * Bbar_i^T.
    std::array<std::optional<TimeMatrix>, 2> mean_gain;
    std::array<std::array<VecMap, 2>, 2> hbar;
    std::array<AdjointMap, 2> h;
    AssumptionConstants constants;

    Mat feedback_mean_gain(int eq, double t) const;
    // B_i^T y + gain * y' + D_i^T z, column by column.
    Mat feedback_argument(int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z) const;
    Vec psi_argument(int eq, int slot, const Vec& y1, const Vec& y2) const;
};

void validate(const StructuralData& s);

struct CoefficientSet {
    std::size_t n = 1, d = 1;
    std::array<InitialMap, 2> psi;
    std::array<TerminalMap, 2> phi;
    std::array<Generator, 2> gamma;
    std::optional<StructuralData> structural;
    std::string label;
};

// Single-point evaluation helpers used by checks and tests.
struct GammaPoint {
    Vec f, b, sigma;
};
struct PointState {
    Vec mean_x1, mean_y1, mean_x2, mean_y2;
    Vec x, y, z;
};
GammaPoint eval_gamma(const CoefficientSet& c, int eq, const NodeContext& ctx, const PointState& s);
Vec eval_phi(const CoefficientSet& c, int eq, const NodeContext& ctx, const Vec& x1, const Vec& x2);
// Context carrying a single noise value w (d entries) at time t.
struct PointContext {
    Vec w;
    NodeContext ctx;
    PointContext(double t, Vec noise);
    PointContext(const PointContext& o);
    PointContext& operator=(const PointContext&) = delete;
};

struct PerturbationData {
    std::array<Vec, 2> xi;
    std::array<ProcessField, 2> zeta;   // n x batch at the terminal node
    std::array<ProcessField, 2> phi;    // added to f
    std::array<ProcessField, 2> psi;    // added to b
    std::array<ProcessField, 2> gamma;  // added to sigma

    bool is_zero() const;
};

PerturbationData scaled(const PerturbationData& p, double s);

CoefficientSet base_coefficients(const StructuralData& s);
CoefficientSet interpolate(const CoefficientSet& c, const CoefficientSet& c0, double alpha,
                           const PerturbationData& p = {});

struct ParticleMatrix {
    Mat value;
    std::function<Mat(std::size_t particle)> fn;

    ParticleMatrix() = default;
    ParticleMatrix(Mat m) : value(std::move(m)) {}
    Mat operator()(std::size_t particle) const { return fn ? fn(particle) : value; }
};

struct TimeSet {
    ConvexSet value;
    std::function<ConvexSet(double)> fn;

    TimeSet() = default;
    TimeSet(ConvexSet K) : value(std::move(K)) {}
    ConvexSet operator()(double t) const { return fn ? fn(t) : value; }
};

// Linear controlled dynamics shared by both control problems.
struct LinearDynamics {
    std::size_t n = 1, m = 1, k = 1, d = 1;
    double T = 1.0;
    std::array<TimeMatrix, 2> A, Abar, B, Bbar;
    std::array<TimeMatrix, 2> C;  // (n d) x n stacked
    std::array<TimeMatrix, 2> D;  // (n d) x k stacked
    Mat H;
    Vec x0;
    std::array<ProcessField, 2> rho, kappa;
    double tau = 0.0;
    std::array<std::optional<TimeMatrix>, 2> mean_feedback;  // k x n, overrides tau * Bbar^T in the feedback
    double tau1 = 1e-2;  // bound on |Abar_i(t)|

    Mat feedback_mean_gain(int eq, double t) const;
};

struct LCProblemData {
    LinearDynamics dyn;
    ConvexFunction f11, f12;                  // on R^m
    ConvexFunction f21, f22;                  // on R^n
    std::array<TimedConvexFunction, 2> f3;    // on R^n
    std::array<TimedConvexFunction, 2> f4;    // on R^k
    AssumptionConstants constants;
};

struct LQICProblemData {
    LinearDynamics dyn;
    std::array<Mat, 2> M;
    std::array<ParticleMatrix, 2> G;
    std::array<TimeMatrix, 2> Q, R;
    double delta = 1.0;
    ConvexSet U0;
    TimeSet U;
    AssumptionConstants constants;
};

void validate(const LinearDynamics& dyn, const TimeGrid* grid = nullptr);
void validate(const LCProblemData& lc, const TimeGrid* grid = nullptr);
void validate(const LQICProblemData& lq, const TimeGrid* grid = nullptr);

// Optimal-control maps: initial controls from Y(0) and the process-control feedback, column by column.
std::array<Vec, 2> lc_initial_controls(const LCProblemData& lc, const Vec& y1_0, const Vec& y2_0, double tol = 1e-12);
Mat lc_feedback(const LCProblemData& lc, int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z,
                double tol = 1e-12);
std::array<Vec, 2> lqic_initial_controls(const LQICProblemData& lq, const Vec& y1_0, const Vec& y2_0);
Mat lqic_feedback(const LQICProblemData& lq, int eq, double t, const Mat& y, const Vec& mean_y, const Mat& z);

CoefficientSet lc_hamiltonian(const LCProblemData& lc);
CoefficientSet lqic_hamiltonian(const LQICProblemData& lq);

// The worked example: n = d = m = k = T = 1, exponential cost family, sin(W) noise loading.
LCProblemData paper_example_lc();

Mat field_or_zero(const ProcessField& f, const NodeContext& ctx, Eigen::Index rows, Eigen::Index batch);

}  // namespace mfb
