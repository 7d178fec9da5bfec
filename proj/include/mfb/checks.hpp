#pragma once

#include "mfb/coefficients.hpp"

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mfb {

struct CheckReport {
    std::string name;
    std::size_t samples = 0;
    std::size_t violations = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    std::string worst_inequality;
    std::string witness;                // empty when no violation
    std::vector<double> witness_values;
    std::vector<std::pair<std::string, double>> details;  // per-inequality worst margin or probe values
    std::vector<std::string> warnings;
    double tolerance = 1e-9;

    bool passed() const { return violations == 0; }
    // Fold slack `margin` of inequality `label` into the report.
    void record(const std::string& label, double margin, const std::vector<double>& inputs = {},
                const std::string& note = {});
};

struct CheckOptions {
    std::uint64_t seed = 20240917;
    double box = 10.0;   // sampling box [-box, box] per coordinate
    double tol = 1e-9;   // absolute slack
    double horizon = 1.0;
};

// Uniform draws in the box mixed with clipped Gaussian draws; deterministic under the seed.
class Sampler {
public:
    Sampler(std::uint64_t seed, double box) : rng_(seed), box_(box) {}
    double uniform(double lo, double hi);
    double normal();
    Vec point(Eigen::Index dim);
    // Second point of a pair: independent, nearby, or very close, in rotation.
    Vec partner(const Vec& x);

private:
    std::mt19937_64 rng_;
    double box_;
    std::uint64_t count_ = 0;
};

CheckReport check_lipschitz(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt = {});
CheckReport check_adjoint(const StructuralData& s, std::size_t samples, const CheckOptions& opt = {});

struct LinearDominationProbe {
    double u = 0.0, ubar = 0.0, ratio = 0.0;
    int eq = 0;
};
// Ratio |h(u)-h(ubar)|^2 / |u-ubar|^2 at pairs (r, r+1) for each probe magnitude r.
std::vector<LinearDominationProbe> linear_domination_ratios(const StructuralData& s, const std::vector<double>& probes,
                                                            double t = 0.0);
// Passes when the ratio falls below `threshold` at every probe with |u| >= `large`.
CheckReport check_no_linear_domination(const StructuralData& s, const std::vector<double>& probes,
                                       double threshold = 0.01, double large = 100.0);

enum class DominationForm { literal, linear };
CheckReport check_domination(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt = {},
                             DominationForm form = DominationForm::literal);

CheckReport check_monotonicity(const CoefficientSet& c, std::size_t samples, const CheckOptions& opt = {});
CheckReport check_lqic(const LQICProblemData& lq, const TimeGrid* grid = nullptr, const CheckOptions& opt = {});
CheckReport check_convexity(const ConvexFunction& f, std::size_t samples, const CheckOptions& opt = {});

}  // namespace mfb
