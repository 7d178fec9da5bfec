#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonConvergence : std::runtime_error {
    NonConvergence(const std::string& what, std::vector<double> residuals)
        : std::runtime_error(what), trace(std::move(residuals)) {}
    std::vector<double> trace;
};

struct AdmissibilityViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TimeGrid {
    double T = 0.0;
    std::size_t N = 0;
    double dt = 0.0;
    std::vector<double> nodes;

    double t(std::size_t n) const { return nodes[n]; }
};

TimeGrid make_grid(double T, std::size_t N);

// Values stored node-major: node n holds a width x particles block, one column per particle.
class EnsembleProcess {
public:
    EnsembleProcess() = default;
    EnsembleProcess(std::size_t particles, std::size_t nodes, std::size_t width);

    std::size_t particles() const { return particles_; }
    std::size_t nodes() const { return nodes_; }
    std::size_t width() const { return width_; }

    Eigen::Map<Mat> at(std::size_t node);
    Eigen::Map<const Mat> at(std::size_t node) const;

    Eigen::Map<Vec> operator()(std::size_t m, std::size_t node);
    Eigen::Map<const Vec> operator()(std::size_t m, std::size_t node) const;

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const EnsembleProcess& o) const;
    void set_zero();

    EnsembleProcess& operator+=(const EnsembleProcess& o);
    EnsembleProcess& operator-=(const EnsembleProcess& o);
    EnsembleProcess& operator*=(double s);

private:
    std::size_t particles_ = 0;
    std::size_t nodes_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

EnsembleProcess operator+(EnsembleProcess a, const EnsembleProcess& b);
EnsembleProcess operator-(EnsembleProcess a, const EnsembleProcess& b);
EnsembleProcess operator*(double s, EnsembleProcess a);

struct BrownianEnsemble {
    TimeGrid grid;
    std::size_t M = 0;
    std::size_t d = 0;
    std::uint64_t seed = 0;
    EnsembleProcess increments;  // N nodes: increment over [t_n, t_{n+1}]
    EnsembleProcess path;        // N+1 nodes: W(t_n), W(0) = 0
};

// Standard normal draw keyed on (seed, particle, node, dim); independent of call order.
double keyed_normal(std::uint64_t seed, std::uint64_t particle, std::uint64_t node, std::uint64_t dim);

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t M, std::size_t d, std::uint64_t seed);

Vec empirical_mean(const EnsembleProcess& p, std::size_t node);

struct TripleProcess {
    EnsembleProcess X;
    EnsembleProcess Y;
    EnsembleProcess Z;
    // regression estimate of E[Y(n+1) | F(n)], the Y read by the coefficients at node n; Y itself at the last node
    EnsembleProcess Yhat;

    TripleProcess() = default;
    TripleProcess(std::size_t particles, std::size_t nodes, std::size_t n, std::size_t d);

    TripleProcess& operator+=(const TripleProcess& o);
    TripleProcess& operator-=(const TripleProcess& o);
    TripleProcess& operator*=(double s);
};

TripleProcess operator-(TripleProcess a, const TripleProcess& b);
TripleProcess operator+(TripleProcess a, const TripleProcess& b);
TripleProcess operator*(double s, TripleProcess a);

// sqrt(mean_m [ max_n |X|^2 + max_n |Y|^2 + sum_{n<N} |Z|^2 dt ])
double m_norm(const TripleProcess& v, double dt);

// sqrt(mean_m sum_{n<N} (|a1|^2 + |a2|^2 + |a3|^2) dt)
double script_m_norm(const TripleProcess& a, double dt);

// Joint norm of a pair (V1, V2).
double pair_norm(const TripleProcess& v1, const TripleProcess& v2, double dt);

// Shortest round-trip decimal form; identical bytes for identical doubles.
std::string format_number(double v);

}  // namespace mfb
