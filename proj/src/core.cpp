#include "mfb/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

namespace mfb {

namespace {

std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_open(std::uint64_t bits)
{
    // (0, 1]
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

TimeGrid make_grid(double T, std::size_t N)
{
    if (!(T > 0.0) || !std::isfinite(T))
        throw InvalidArgument("make_grid: horizon must be positive");
    if (N < 1)
        throw InvalidArgument("make_grid: need at least one step");
    TimeGrid g;
    g.T = T;
    g.N = N;
    g.dt = T / static_cast<double>(N);
    g.nodes.resize(N + 1);
    for (std::size_t n = 0; n <= N; ++n)
        g.nodes[n] = T * static_cast<double>(n) / static_cast<double>(N);
    g.nodes[N] = T;
    return g;
}

EnsembleProcess::EnsembleProcess(std::size_t particles, std::size_t nodes, std::size_t width)
    : particles_(particles), nodes_(nodes), width_(width), data_(particles * nodes * width, 0.0)
{
}

Eigen::Map<Mat> EnsembleProcess::at(std::size_t node)
{
    return {data_.data() + node * particles_ * width_, static_cast<Eigen::Index>(width_),
            static_cast<Eigen::Index>(particles_)};
}

Eigen::Map<const Mat> EnsembleProcess::at(std::size_t node) const
{
    return {data_.data() + node * particles_ * width_, static_cast<Eigen::Index>(width_),
            static_cast<Eigen::Index>(particles_)};
}

Eigen::Map<Vec> EnsembleProcess::operator()(std::size_t m, std::size_t node)
{
    return {data_.data() + (node * particles_ + m) * width_, static_cast<Eigen::Index>(width_)};
}

Eigen::Map<const Vec> EnsembleProcess::operator()(std::size_t m, std::size_t node) const
{
    return {data_.data() + (node * particles_ + m) * width_, static_cast<Eigen::Index>(width_)};
}

bool EnsembleProcess::same_shape(const EnsembleProcess& o) const
{
    return particles_ == o.particles_ && nodes_ == o.nodes_ && width_ == o.width_;
}

void EnsembleProcess::set_zero()
{
    std::fill(data_.begin(), data_.end(), 0.0);
}

EnsembleProcess& EnsembleProcess::operator+=(const EnsembleProcess& o)
{
    if (!same_shape(o))
        throw InvalidArgument("EnsembleProcess: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] += o.data_[i];
    return *this;
}

EnsembleProcess& EnsembleProcess::operator-=(const EnsembleProcess& o)
{
    if (!same_shape(o))
        throw InvalidArgument("EnsembleProcess: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] -= o.data_[i];
    return *this;
}

EnsembleProcess& EnsembleProcess::operator*=(double s)
{
    for (double& v : data_)
        v *= s;
    return *this;
}

EnsembleProcess operator+(EnsembleProcess a, const EnsembleProcess& b) { return a += b; }
EnsembleProcess operator-(EnsembleProcess a, const EnsembleProcess& b) { return a -= b; }
EnsembleProcess operator*(double s, EnsembleProcess a) { return a *= s; }

double keyed_normal(std::uint64_t seed, std::uint64_t particle, std::uint64_t node, std::uint64_t dim)
{
    std::uint64_t k = mix64(seed);
    k = mix64(k ^ mix64(particle + 0x632be59bd9b4e019ULL));
    k = mix64(k ^ mix64(node + 0x85157af5ULL));
    k = mix64(k ^ mix64(dim + 0x2545f4914f6cdd1dULL));
    const double u1 = unit_open(mix64(k));
    const double u2 = unit_open(mix64(k ^ 0xd1b54a32d192ed03ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t M, std::size_t d, std::uint64_t seed)
{
    if (M < 1 || d < 1)
        throw InvalidArgument("sample_brownian: need M >= 1 and d >= 1");
    if (grid.N < 1 || grid.nodes.size() != grid.N + 1)
        throw InvalidArgument("sample_brownian: malformed grid");
    BrownianEnsemble w;
    w.grid = grid;
    w.M = M;
    w.d = d;
    w.seed = seed;
    w.increments = EnsembleProcess(M, grid.N, d);
    w.path = EnsembleProcess(M, grid.N + 1, d);
    const double sd = std::sqrt(grid.dt);
    for (std::size_t n = 0; n < grid.N; ++n) {
        auto inc = w.increments.at(n);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t j = 0; j < d; ++j)
                inc(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(m)) = sd * keyed_normal(seed, m, n, j);
        w.path.at(n + 1) = w.path.at(n) + inc;
    }
    return w;
}

Vec empirical_mean(const EnsembleProcess& p, std::size_t node)
{
    if (p.particles() == 0)
        throw InvalidArgument("empirical_mean: empty ensemble");
    if (node >= p.nodes())
        throw InvalidArgument("empirical_mean: node out of range");
    const auto block = p.at(node);
    Vec s = Vec::Zero(static_cast<Eigen::Index>(p.width()));
    for (Eigen::Index m = 0; m < block.cols(); ++m)
        s += block.col(m);
    return s / static_cast<double>(p.particles());
}

TripleProcess::TripleProcess(std::size_t particles, std::size_t nodes, std::size_t n, std::size_t d)
    : X(particles, nodes, n), Y(particles, nodes, n), Z(particles, nodes, n * d), Yhat(particles, nodes, n)
{
}

TripleProcess& TripleProcess::operator+=(const TripleProcess& o)
{
    X += o.X;
    Y += o.Y;
    Z += o.Z;
    Yhat += o.Yhat;
    return *this;
}

TripleProcess& TripleProcess::operator-=(const TripleProcess& o)
{
    X -= o.X;
    Y -= o.Y;
    Z -= o.Z;
    Yhat -= o.Yhat;
    return *this;
}

TripleProcess& TripleProcess::operator*=(double s)
{
    X *= s;
    Y *= s;
    Z *= s;
    Yhat *= s;
    return *this;
}

TripleProcess operator-(TripleProcess a, const TripleProcess& b) { return a -= b; }
TripleProcess operator+(TripleProcess a, const TripleProcess& b) { return a += b; }
TripleProcess operator*(double s, TripleProcess a) { return a *= s; }

double m_norm(const TripleProcess& v, double dt)
{
    const std::size_t M = v.X.particles();
    if (M == 0)
        return 0.0;
    const std::size_t nodes = v.X.nodes();
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        double supx = 0.0, supy = 0.0, iz = 0.0;
        for (std::size_t n = 0; n < nodes; ++n) {
            supx = std::max(supx, v.X(m, n).squaredNorm());
            supy = std::max(supy, v.Y(m, n).squaredNorm());
            if (n + 1 < nodes)
                iz += v.Z(m, n).squaredNorm() * dt;
        }
        total += supx + supy + iz;
    }
    return std::sqrt(total / static_cast<double>(M));
}

double script_m_norm(const TripleProcess& a, double dt)
{
    const std::size_t M = a.X.particles();
    if (M == 0)
        return 0.0;
    const std::size_t nodes = a.X.nodes();
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::size_t n = 0; n + 1 < nodes; ++n)
            s += (a.X(m, n).squaredNorm() + a.Y(m, n).squaredNorm() + a.Z(m, n).squaredNorm()) * dt;
        total += s;
    }
    return std::sqrt(total / static_cast<double>(M));
}

double pair_norm(const TripleProcess& v1, const TripleProcess& v2, double dt)
{
    return std::hypot(m_norm(v1, dt), m_norm(v2, dt));
}

std::string format_number(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (v == 0.0)
        return "0";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace mfb
