#include "mfb/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace mfb::cli {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what)
{
    throw InvalidArgument(path + ": " + what);
}

void allow_keys(const Json& obj, std::initializer_list<const char*> keys, const std::string& path)
{
    if (!obj.is_object())
        fail(path, "expected an object");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [key, value] : obj.items())
        if (!ok.count(key))
            fail(path + "." + key, "unknown field");
}

double read_number(const Json& v, const std::string& path)
{
    if (!v.is_number())
        fail(path, "expected a number");
    return v.get<double>();
}

std::size_t read_count(const Json& v, const std::string& path)
{
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        fail(path, "expected a nonnegative integer");
    return v.get<std::size_t>();
}

Mat read_matrix(const Json& v, const std::string& path)
{
    if (v.is_number())
        return Mat::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty())
        fail(path, "expected a number, a vector or a matrix");
    if (v[0].is_number()) {
        Mat m(static_cast<Eigen::Index>(v.size()), 1);
        for (std::size_t i = 0; i < v.size(); ++i)
            m(static_cast<Eigen::Index>(i), 0) = read_number(v[i], path + "[" + std::to_string(i) + "]");
        return m;
    }
    const std::size_t rows = v.size();
    if (!v[0].is_array() || v[0].empty())
        fail(path + "[0]", "expected a row of numbers");
    const std::size_t cols = v[0].size();
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        const std::string rp = path + "[" + std::to_string(i) + "]";
        if (!v[i].is_array() || v[i].size() != cols)
            fail(rp, "rows must have equal length " + std::to_string(cols));
        for (std::size_t j = 0; j < cols; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                read_number(v[i][j], rp + "[" + std::to_string(j) + "]");
    }
    return m;
}

Vec read_vector(const Json& v, const std::string& path)
{
    const Mat m = read_matrix(v, path);
    if (m.cols() != 1)
        fail(path, "expected a vector");
    return m.col(0);
}

Vec read_vector(const Json& v, const std::string& path, std::size_t size)
{
    if (v.is_number())
        return Vec::Constant(static_cast<Eigen::Index>(size), v.get<double>());
    const Vec x = read_vector(v, path);
    if (static_cast<std::size_t>(x.size()) != size)
        fail(path, "expected length " + std::to_string(size));
    return x;
}

Json write_matrix(const Mat& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Json write_vector(const Vec& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v(i));
    return a;
}

// Per-equation field: {"1": a, "2": b} or one value shared by both.
template <class T, class Read>
std::array<T, 2> read_pair(const Json& obj, const char* key, const std::string& path, Read read, std::array<T, 2> dflt)
{
    if (!obj.contains(key))
        return dflt;
    const Json& v = obj.at(key);
    const std::string p = path + "." + key;
    if (v.is_object() && (v.contains("1") || v.contains("2"))) {
        allow_keys(v, {"1", "2"}, p);
        if (!v.contains("1") || !v.contains("2"))
            fail(p, "needs both \"1\" and \"2\"");
        return {read(v.at("1"), p + ".1"), read(v.at("2"), p + ".2")};
    }
    const T shared = read(v, p);
    return {shared, shared};
}

template <class T, class Write>
Json write_pair(const std::array<T, 2>& a, Write write)
{
    Json o = Json::object();
    o["1"] = write(a[0]);
    o["2"] = write(a[1]);
    return o;
}

void require_shape(const Mat& m, std::size_t r, std::size_t c, const std::string& path)
{
    if (static_cast<std::size_t>(m.rows()) != r || static_cast<std::size_t>(m.cols()) != c)
        fail(path, "expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " + std::to_string(m.rows()) +
                       "x" + std::to_string(m.cols()));
}

void require_symmetric(const Mat& m, const std::string& path)
{
    if (m.rows() != m.cols() || !(m - m.transpose()).isZero(0.0))
        fail(path, "matrix is not symmetric");
}

FunctionSpec read_function(const Json& v, const std::string& path, std::size_t dim)
{
    FunctionSpec f;
    if (v.is_string()) {
        f.family = v.get<std::string>();
    } else {
        allow_keys(v, {"family", "Q", "c"}, path);
        if (!v.contains("family") || !v.at("family").is_string())
            fail(path + ".family", "expected a family name");
        f.family = v.at("family").get<std::string>();
        if (v.contains("Q"))
            f.Q = read_matrix(v.at("Q"), path + ".Q");
        if (v.contains("c"))
            f.c = read_vector(v.at("c"), path + ".c", dim);
    }
    if (f.family == "quadratic") {
        if (f.Q.size() == 0)
            fail(path + ".Q", "required for the quadratic family");
        require_shape(f.Q, dim, dim, path + ".Q");
        require_symmetric(f.Q, path + ".Q");
    } else if (f.family == "linear") {
        if (f.c.size() == 0)
            fail(path + ".c", "required for the linear family");
    } else if (f.family == "exponential") {
        if (dim != 1)
            fail(path, "the exponential family is scalar");
    } else if (f.family != "zero") {
        fail(path + ".family", "unknown family \"" + f.family + "\" (quadratic, linear, zero, exponential)");
    }
    if (f.family != "quadratic" && f.Q.size() > 0)
        fail(path + ".Q", "only the quadratic family takes Q");
    if (f.family != "quadratic" && f.family != "linear" && f.c.size() > 0)
        fail(path + ".c", "family \"" + f.family + "\" takes no c");
    return f;
}

Json write_function(const FunctionSpec& f)
{
    Json o = Json::object();
    o["family"] = f.family;
    if (f.Q.size() > 0)
        o["Q"] = write_matrix(f.Q);
    if (f.c.size() > 0)
        o["c"] = write_vector(f.c);
    return o;
}

ConvexFunction build_function(const FunctionSpec& f, std::size_t dim)
{
    ConvexFunction out;
    if (f.family == "quadratic")
        out = quadratic_function(f.Q, f.c);
    else if (f.family == "linear")
        out = quadratic_function(Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)), f.c);
    else if (f.family == "exponential")
        out = example_family();
    else
        out = zero_function(dim);
    out.name = f.family;
    return out;
}

ConvexSet read_set(const Json& v, const std::string& path, std::size_t dim)
{
    if (!v.is_object())
        fail(path, "expected an object");
    std::string kind = v.contains("kind") ? v.at("kind").get<std::string>() : "";
    if (kind.empty() && (v.contains("lo") || v.contains("hi")))
        kind = "box";
    if (kind == "full") {
        allow_keys(v, {"kind"}, path);
        return ConvexSet::full_space(dim);
    }
    if (kind == "box") {
        allow_keys(v, {"kind", "lo", "hi"}, path);
        if (!v.contains("lo") || !v.contains("hi"))
            fail(path, "a box needs lo and hi");
        const Vec lo = read_vector(v.at("lo"), path + ".lo", dim), hi = read_vector(v.at("hi"), path + ".hi", dim);
        if ((lo.array() > hi.array()).any())
            fail(path, "lo exceeds hi");
        return ConvexSet::box(lo, hi);
    }
    if (kind == "ball") {
        allow_keys(v, {"kind", "center", "radius"}, path);
        if (!v.contains("center") || !v.contains("radius"))
            fail(path, "a ball needs center and radius");
        const double r = read_number(v.at("radius"), path + ".radius");
        if (!(r >= 0.0))
            fail(path + ".radius", "must be nonnegative");
        return ConvexSet::ball(read_vector(v.at("center"), path + ".center", dim), r);
    }
    if (kind == "singleton") {
        allow_keys(v, {"kind", "point"}, path);
        if (!v.contains("point"))
            fail(path, "a singleton needs point");
        return ConvexSet::singleton(read_vector(v.at("point"), path + ".point", dim));
    }
    if (kind == "halfspace") {
        allow_keys(v, {"kind", "normal", "offset"}, path);
        if (!v.contains("normal") || !v.contains("offset"))
            fail(path, "a halfspace needs normal and offset");
        const Vec a = read_vector(v.at("normal"), path + ".normal", dim);
        if (a.isZero(0.0))
            fail(path + ".normal", "must be nonzero");
        return ConvexSet::halfspace(a, read_number(v.at("offset"), path + ".offset"));
    }
    fail(path + ".kind", "unknown set kind \"" + kind + "\" (full, box, ball, singleton, halfspace)");
}

Json write_set(const ConvexSet& K)
{
    Json o = Json::object();
    o["kind"] = K.kind_name();
    switch (K.kind) {
    case ConvexSet::Kind::box:
        o["lo"] = write_vector(K.lo);
        o["hi"] = write_vector(K.hi);
        break;
    case ConvexSet::Kind::ball:
        o["center"] = write_vector(K.center);
        o["radius"] = K.radius;
        break;
    case ConvexSet::Kind::singleton:
        o["point"] = write_vector(K.center);
        break;
    case ConvexSet::Kind::halfspace:
        o["normal"] = write_vector(K.normal);
        o["offset"] = K.offset;
        break;
    case ConvexSet::Kind::product:
        throw InvalidArgument("product sets have no file form");
    case ConvexSet::Kind::full:
        break;
    }
    return o;
}

AssumptionConstants read_constants(const Json& v, const std::string& path)
{
    allow_keys(v, {"L", "Lb", "Lsigma", "Lf", "LPhi", "LPsi", "L1", "L2", "L3", "eps", "eps_cross"}, path);
    AssumptionConstants k;
    auto get = [&](const char* key, double& dst) {
        if (v.contains(key))
            dst = read_number(v.at(key), path + "." + key);
        if (!(dst >= 0.0))
            fail(path + "." + key, "must be nonnegative");
    };
    get("L", k.L);
    get("Lb", k.Lb);
    get("Lsigma", k.Lsigma);
    get("Lf", k.Lf);
    get("LPhi", k.LPhi);
    get("LPsi", k.LPsi);
    get("L1", k.L1);
    get("L2", k.L2);
    get("L3", k.L3);
    get("eps", k.eps);
    get("eps_cross", k.eps_cross);
    return k;
}

Json write_constants(const AssumptionConstants& k)
{
    return Json{{"L", k.L},   {"Lb", k.Lb}, {"Lsigma", k.Lsigma}, {"Lf", k.Lf},   {"LPhi", k.LPhi},
                {"LPsi", k.LPsi}, {"L1", k.L1}, {"L2", k.L2},         {"L3", k.L3},   {"eps", k.eps},
                {"eps_cross", k.eps_cross}};
}

ProblemSpec read_spec(const Json& p, const std::string& path)
{
    if (!p.is_object())
        fail(path, "expected an object");
    if (p.contains("builtin")) {
        allow_keys(p, {"builtin"}, path);
        if (!p.at("builtin").is_string())
            fail(path + ".builtin", "expected a name");
        try {
            return builtin_problem(p.at("builtin").get<std::string>());
        } catch (const InvalidArgument& e) {
            fail(path + ".builtin", e.what());
        }
    }
    allow_keys(p,
               {"type", "n", "m", "k", "d", "T", "A", "Abar", "B", "Bbar", "C", "D", "H", "x0", "rho", "kappa", "tau",
                "tau1", "mean_feedback", "constants", "f11", "f12", "f21", "f22", "f3", "f4", "M", "G", "Q", "R",
                "delta", "U0", "U"},
               path);
    ProblemSpec s;
    if (!p.contains("type") || !p.at("type").is_string())
        fail(path + ".type", "expected \"lc\" or \"lqic\"");
    s.type = p.at("type").get<std::string>();
    if (s.type != "lc" && s.type != "lqic")
        fail(path + ".type", "expected \"lc\" or \"lqic\"");
    auto dim = [&](const char* key, std::size_t& dst) {
        if (p.contains(key))
            dst = read_count(p.at(key), path + "." + key);
        if (dst < 1)
            fail(path + "." + key, "must be positive");
    };
    dim("n", s.n);
    dim("m", s.m);
    dim("k", s.k);
    dim("d", s.d);
    if (p.contains("T"))
        s.T = read_number(p.at("T"), path + ".T");
    if (!(s.T > 0.0))
        fail(path + ".T", "must be positive");

    const std::size_t n = s.n, m = s.m, k = s.k, nd = s.n * s.d;
    auto zeros = [](std::size_t r, std::size_t c) {
        const Mat z = Mat::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        return std::array<Mat, 2>{z, z};
    };
    auto mats = [&](const char* key, std::size_t r, std::size_t c) {
        auto a = read_pair<Mat>(p, key, path, read_matrix, zeros(r, c));
        for (int i = 0; i < 2; ++i)
            require_shape(a[i], r, c, path + "." + key + (p.contains(key) ? "." + std::to_string(i + 1) : ""));
        return a;
    };
    s.A = mats("A", n, n);
    s.Abar = mats("Abar", n, n);
    s.B = mats("B", n, k);
    s.Bbar = mats("Bbar", n, k);
    s.C = mats("C", nd, n);
    s.D = mats("D", nd, k);
    if (p.contains("H")) {
        s.H = read_matrix(p.at("H"), path + ".H");
        require_shape(s.H, n, m, path + ".H");
    } else if (n == m) {
        s.H = Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    } else {
        fail(path + ".H", "required when n != m");
    }
    s.x0 = p.contains("x0") ? read_vector(p.at("x0"), path + ".x0", n) : Vec(Vec::Zero(static_cast<Eigen::Index>(n)));
    auto vec_of = [](std::size_t size) {
        return [size](const Json& v, const std::string& q) { return read_vector(v, q, size); };
    };
    const Vec zn = Vec::Zero(static_cast<Eigen::Index>(n)), znd = Vec::Zero(static_cast<Eigen::Index>(nd));
    s.rho = read_pair<Vec>(p, "rho", path, vec_of(n), {zn, zn});
    s.kappa = read_pair<Vec>(p, "kappa", path, vec_of(nd), {znd, znd});
    if (p.contains("tau"))
        s.tau = read_number(p.at("tau"), path + ".tau");
    if (p.contains("tau1"))
        s.tau1 = read_number(p.at("tau1"), path + ".tau1");
    if (p.contains("mean_feedback")) {
        const auto g = read_pair<Mat>(p, "mean_feedback", path, read_matrix, {});
        for (int i = 0; i < 2; ++i) {
            require_shape(g[i], k, n, path + ".mean_feedback." + std::to_string(i + 1));
            s.mean_feedback[i] = g[i];
        }
    }
    if (p.contains("constants"))
        s.constants = read_constants(p.at("constants"), path + ".constants");

    if (s.type == "lc") {
        for (const char* key : {"M", "G", "Q", "R", "delta", "U0", "U"})
            if (p.contains(key))
                fail(path + "." + key, "not a field of an lc problem");
        auto fn = [&](const char* key, std::size_t dimension, bool required) {
            if (!p.contains(key)) {
                if (required)
                    fail(path + "." + key, "required");
                return FunctionSpec{};
            }
            return read_function(p.at(key), path + "." + key, dimension);
        };
        s.f11 = fn("f11", m, true);
        s.f12 = fn("f12", m, true);
        s.f21 = fn("f21", n, false);
        s.f22 = fn("f22", n, false);
        auto fn_of = [](std::size_t size) {
            return [size](const Json& v, const std::string& q) { return read_function(v, q, size); };
        };
        if (!p.contains("f4"))
            fail(path + ".f4", "required");
        s.f3 = read_pair<FunctionSpec>(p, "f3", path, fn_of(n), {});
        s.f4 = read_pair<FunctionSpec>(p, "f4", path, fn_of(k), {});
    } else {
        for (const char* key : {"f11", "f12", "f21", "f22", "f3", "f4"})
            if (p.contains(key))
                fail(path + "." + key, "not a field of an lqic problem");
        auto sym = [&](const char* key, std::size_t size, bool required) {
            if (!p.contains(key) && required)
                fail(path + "." + key, "required");
            auto a = read_pair<Mat>(p, key, path, read_matrix, zeros(size, size));
            for (int i = 0; i < 2; ++i) {
                const std::string q = path + "." + key + std::to_string(i + 1);
                require_shape(a[i], size, size, q);
                require_symmetric(a[i], q);
            }
            return a;
        };
        s.M = sym("M", m, true);
        s.G = sym("G", n, false);
        s.Q = sym("Q", n, false);
        s.R = sym("R", k, true);
        if (p.contains("delta"))
            s.delta = read_number(p.at("delta"), path + ".delta");
        if (!(s.delta > 0.0))
            fail(path + ".delta", "must be positive");
        s.U0 = p.contains("U0") ? read_set(p.at("U0"), path + ".U0", m) : ConvexSet::full_space(m);
        s.U = p.contains("U") ? read_set(p.at("U"), path + ".U", k) : ConvexSet::full_space(k);
    }
    return s;
}

Json write_spec(const ProblemSpec& s)
{
    if (!s.builtin.empty())
        return Json{{"builtin", s.builtin}};
    Json p = Json::object();
    p["type"] = s.type;
    p["n"] = s.n;
    p["m"] = s.m;
    p["k"] = s.k;
    p["d"] = s.d;
    p["T"] = s.T;
    p["A"] = write_pair(s.A, write_matrix);
    p["Abar"] = write_pair(s.Abar, write_matrix);
    p["B"] = write_pair(s.B, write_matrix);
    p["Bbar"] = write_pair(s.Bbar, write_matrix);
    p["C"] = write_pair(s.C, write_matrix);
    p["D"] = write_pair(s.D, write_matrix);
    p["H"] = write_matrix(s.H);
    p["x0"] = write_vector(s.x0);
    p["rho"] = write_pair(s.rho, write_vector);
    p["kappa"] = write_pair(s.kappa, write_vector);
    p["tau"] = s.tau;
    p["tau1"] = s.tau1;
    if (s.mean_feedback[0] && s.mean_feedback[1])
        p["mean_feedback"] = write_pair(std::array<Mat, 2>{*s.mean_feedback[0], *s.mean_feedback[1]}, write_matrix);
    p["constants"] = write_constants(s.constants);
    if (s.type == "lc") {
        p["f11"] = write_function(s.f11);
        p["f12"] = write_function(s.f12);
        p["f21"] = write_function(s.f21);
        p["f22"] = write_function(s.f22);
        p["f3"] = write_pair(s.f3, write_function);
        p["f4"] = write_pair(s.f4, write_function);
    } else {
        p["M"] = write_pair(s.M, write_matrix);
        p["G"] = write_pair(s.G, write_matrix);
        p["Q"] = write_pair(s.Q, write_matrix);
        p["R"] = write_pair(s.R, write_matrix);
        p["delta"] = s.delta;
        p["U0"] = write_set(s.U0);
        p["U"] = write_set(s.U);
    }
    return p;
}

RegressionBasis read_basis(const Json& v, const std::string& path)
{
    allow_keys(v, {"kind", "degree", "cells", "state_degree", "rank_tol"}, path);
    RegressionBasis b;
    if (v.contains("kind")) {
        if (!v.at("kind").is_string())
            fail(path + ".kind", "expected a basis name");
        try {
            b.kind = basis_kind_from(v.at("kind").get<std::string>());
        } catch (const InvalidArgument& e) {
            fail(path + ".kind", e.what());
        }
    }
    if (v.contains("degree"))
        b.degree = static_cast<int>(read_count(v.at("degree"), path + ".degree"));
    if (v.contains("cells"))
        b.cells = static_cast<int>(read_count(v.at("cells"), path + ".cells"));
    if (v.contains("state_degree"))
        b.state_degree = static_cast<int>(read_count(v.at("state_degree"), path + ".state_degree"));
    if (v.contains("rank_tol"))
        b.rank_tol = read_number(v.at("rank_tol"), path + ".rank_tol");
    return b;
}

SolverOverrides read_solver(const Json& v, const std::string& path)
{
    allow_keys(v, {"particles", "steps", "seed", "picard_tol", "picard_max", "damping", "alpha_schedule", "alpha_floor",
                   "basis"},
               path);
    SolverOverrides o;
    if (v.contains("particles"))
        o.particles = read_count(v.at("particles"), path + ".particles");
    if (v.contains("steps"))
        o.steps = read_count(v.at("steps"), path + ".steps");
    if (v.contains("seed"))
        o.seed = read_count(v.at("seed"), path + ".seed");
    if (v.contains("picard_tol"))
        o.picard_tol = read_number(v.at("picard_tol"), path + ".picard_tol");
    if (v.contains("picard_max"))
        o.picard_max = read_count(v.at("picard_max"), path + ".picard_max");
    if (v.contains("damping"))
        o.damping = read_number(v.at("damping"), path + ".damping");
    if (v.contains("alpha_floor"))
        o.alpha_floor = read_number(v.at("alpha_floor"), path + ".alpha_floor");
    if (v.contains("alpha_schedule")) {
        const Json& a = v.at("alpha_schedule");
        if (!a.is_array())
            fail(path + ".alpha_schedule", "expected an array");
        std::vector<double> s;
        for (std::size_t i = 0; i < a.size(); ++i)
            s.push_back(read_number(a[i], path + ".alpha_schedule[" + std::to_string(i) + "]"));
        o.alpha_schedule = std::move(s);
    }
    if (v.contains("basis"))
        o.basis = read_basis(v.at("basis"), path + ".basis");
    return o;
}

Json write_solver(const SolverOverrides& o)
{
    Json v = Json::object();
    if (o.particles)
        v["particles"] = *o.particles;
    if (o.steps)
        v["steps"] = *o.steps;
    if (o.seed)
        v["seed"] = *o.seed;
    if (o.picard_tol)
        v["picard_tol"] = *o.picard_tol;
    if (o.picard_max)
        v["picard_max"] = *o.picard_max;
    if (o.damping)
        v["damping"] = *o.damping;
    if (o.alpha_floor)
        v["alpha_floor"] = *o.alpha_floor;
    if (o.alpha_schedule)
        v["alpha_schedule"] = *o.alpha_schedule;
    if (o.basis) {
        const RegressionBasis& b = *o.basis;
        v["basis"] = Json{{"kind", to_string(b.kind)},
                          {"degree", b.degree},
                          {"cells", b.cells},
                          {"state_degree", b.state_degree},
                          {"rank_tol", b.rank_tol}};
    }
    return v;
}

void apply(SolverConfig& cfg, const SolverOverrides& o)
{
    if (o.particles)
        cfg.particles = *o.particles;
    if (o.steps)
        cfg.steps = *o.steps;
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.picard_tol)
        cfg.picard_tol = *o.picard_tol;
    if (o.picard_max)
        cfg.picard_max = *o.picard_max;
    if (o.damping)
        cfg.damping = *o.damping;
    if (o.alpha_floor)
        cfg.alpha_floor = *o.alpha_floor;
    if (o.alpha_schedule)
        cfg.alpha_schedule = *o.alpha_schedule;
    if (o.basis)
        cfg.basis = *o.basis;
}

void apply(SolverConfig& cfg, const RunOptions& opt)
{
    if (opt.particles)
        cfg.particles = *opt.particles;
    if (opt.steps)
        cfg.steps = *opt.steps;
    if (opt.seed)
        cfg.seed = *opt.seed;
    if (opt.tol)
        cfg.picard_tol = *opt.tol;
    if (opt.alpha_steps)
        cfg.alpha_schedule = *opt.alpha_steps;
}

LinearDynamics build_dynamics(const ProblemSpec& s)
{
    LinearDynamics d;
    d.n = s.n;
    d.m = s.m;
    d.k = s.k;
    d.d = s.d;
    d.T = s.T;
    for (int i = 0; i < 2; ++i) {
        d.A[i] = s.A[i];
        d.Abar[i] = s.Abar[i];
        d.B[i] = s.B[i];
        d.Bbar[i] = s.Bbar[i];
        d.C[i] = s.C[i];
        d.D[i] = s.D[i];
        if (s.mean_feedback[i])
            d.mean_feedback[i] = TimeMatrix(*s.mean_feedback[i]);
        auto constant = [](const Vec& v) -> ProcessField {
            if (v.isZero(0.0))
                return {};
            return [v](const NodeContext&, Eigen::Index batch) -> Mat { return v.replicate(1, batch); };
        };
        d.rho[i] = constant(s.rho[i]);
        d.kappa[i] = constant(s.kappa[i]);
    }
    d.H = s.H;
    d.x0 = s.x0;
    d.tau = s.tau;
    d.tau1 = s.tau1;
    return d;
}

Json json_vectors(const std::array<Vec, 2>& xi)
{
    return Json::array({write_vector(xi[0]), write_vector(xi[1])});
}

struct Context {
    const RunOptions& opt;
    std::ostream& log;
    ProblemFile file;
    bool has_config = false;
};

std::string out_path(const RunOptions& opt, const std::string& name)
{
    return (std::filesystem::path(opt.out) / name).string();
}

void write_json(const RunOptions& opt, const std::string& name, const Json& j)
{
    write_atomic(out_path(opt, name), j.dump(2) + "\n");
}

SolverConfig resolve(const Context& cx, SolverConfig base)
{
    apply(base, cx.file.solver);
    apply(base, cx.opt);
    validate(base);
    return base;
}

SolverConfig default_config(const ProblemSpec& s)
{
    if (s.builtin == "lqic-crosscheck")
        return lqic_crosscheck_config(42);
    return example_solver_config(4096, 64, 42);
}

Json run_header(const std::string& mode, const ProblemSpec& s, const SolverConfig& cfg)
{
    return Json{{"mode", mode},
                {"problem", s.builtin.empty() ? s.type : s.builtin},
                {"particles", cfg.particles},
                {"steps", cfg.steps},
                {"seed", cfg.seed},
                {"picard_tol", cfg.picard_tol},
                {"damping", cfg.damping},
                {"basis", to_string(cfg.basis.kind)},
                {"alpha_schedule", cfg.alpha_schedule}};
}

int mode_solve(Context& cx)
{
    const ProblemSpec& s = cx.file.problem;
    const SolverConfig cfg = resolve(cx, default_config(s));
    const BrownianEnsemble noise = sample_brownian(make_grid(s.T, cfg.steps), cfg.particles, s.d, cfg.seed);
    Json j = run_header("solve", s, cfg);
    Solution sol;
    ControlQuartet q;
    CostBreakdown cost;
    if (s.type == "lc") {
        const LCProblemData lc = build_lc(s);
        validate(lc, &noise.grid);
        const CoefficientSet c = lc_hamiltonian(lc);
        sol = continuation_solve(c, base_coefficients(*c.structural), noise, cfg);
        q = extract_lc_controls(sol.V, lc, noise.grid);
        cost = cost_lc(lc, q, simulate_state(lc.dyn, q, noise), noise.grid);
    } else {
        const LQICProblemData lq = build_lqic(s);
        validate(lq, &noise.grid);
        const CoefficientSet c = lqic_hamiltonian(lq);
        sol = continuation_solve(c, base_coefficients(*c.structural), noise, cfg);
        q = extract_lqic_controls(sol.V, lq, noise.grid);
        require_admissible(lq, q, noise.grid);
        cost = cost_lqic(lq, q, simulate_state(lq.dyn, q, noise), noise.grid);
    }
    j["report"] = to_json(sol.report);
    j["cost"] = to_json(cost);
    j["xi"] = json_vectors(q.xi);
    write_json(cx.opt, "solve_report.json", j);
    write_atomic(out_path(cx.opt, "trajectory.csv"), trajectory_csv(sol.V, noise.grid));
    write_atomic(out_path(cx.opt, "controls.csv"), controls_csv(q, noise.grid));
    cx.log << "solve: converged in " << sol.report.iterations << " iterations, cost " << format_number(cost.total)
           << '\n';
    return ok;
}

int mode_check(Context& cx)
{
    const ProblemSpec& s = cx.file.problem;
    CheckOptions co;
    if (cx.opt.seed)
        co.seed = *cx.opt.seed;
    const std::size_t samples = cx.file.check_samples;
    Json required = Json::array(), info = Json::array();
    bool passed = true;
    auto add = [&](const CheckReport& r, bool counts) {
        (counts ? required : info).push_back(to_json(r));
        if (counts && !r.passed()) {
            passed = false;
            cx.log << "check " << r.name << ": " << r.violations << " violations; " << r.witness << '\n';
        }
    };
    if (s.type == "lc") {
        const LCProblemData lc = build_lc(s);
        validate(lc);
        const CoefficientSet c = lc_hamiltonian(lc);
        add(check_adjoint(*c.structural, samples, co), true);
        add(check_lipschitz(c, samples, co), true);
        add(check_monotonicity(c, samples, co), true);
        for (const auto* f : {&lc.f11, &lc.f12, &lc.f21, &lc.f22})
            add(check_convexity(*f, samples, co), true);
        for (int i = 0; i < 2; ++i)
            add(check_convexity(lc.f4[i].at(0.0), samples, co), true);
        add(check_domination(c, samples, co, DominationForm::linear), false);
        add(check_domination(c, samples, co, DominationForm::literal), false);
        add(check_no_linear_domination(*c.structural, {0.0, 1.0, 10.0, 100.0, 1000.0}), false);
    } else {
        const LQICProblemData lq = build_lqic(s);
        validate(lq.dyn);
        add(check_lqic(lq, nullptr, co), true);
    }
    Json j{{"mode", "check"},
           {"problem", s.builtin.empty() ? s.type : s.builtin},
           {"samples", samples},
           {"seed", co.seed},
           {"passed", passed},
           {"reports", required},
           {"informational", info}};
    write_json(cx.opt, "check_report.json", j);
    cx.log << "check: " << (passed ? "all assumptions hold on the samples" : "assumption violated") << '\n';
    return passed ? ok : admissibility;
}

Json errors_json(const ComponentErrors& e)
{
    return Json{{"X", e.x}, {"Y", e.y}, {"Z", e.z}, {"u", e.u}};
}

int mode_example(Context& cx)
{
    if (cx.has_config && cx.file.problem.builtin != "paper-example-lc")
        throw InvalidArgument("example-lc: the config problem must be the builtin paper-example-lc");
    const SolverConfig cfg = resolve(cx, example_solver_config(4096, 64, 42));
    const double bound = 0.10;

    Json table = Json::array();
    std::optional<ComponentErrors> coarse;
    if (cfg.steps % 4 == 0 && cfg.steps / 4 >= 4 && cfg.particles / 4 >= 256) {
        SolverConfig c2 = cfg;
        c2.particles /= 4;
        c2.steps /= 4;
        const ExampleRun r = run_example(c2);
        coarse = r.err;
        Json row{{"particles", c2.particles}, {"steps", c2.steps}, {"iterations", r.sol.report.iterations}};
        row["errors"] = errors_json(r.err);
        table.push_back(row);
    }
    const ExampleRun r = run_example(cfg);
    Json row{{"particles", cfg.particles}, {"steps", cfg.steps}, {"iterations", r.sol.report.iterations}};
    row["errors"] = errors_json(r.err);
    table.push_back(row);

    const bool within = r.err.max() <= bound;
    bool decreasing = true;
    if (coarse)
        decreasing = r.err.x < coarse->x && r.err.y < coarse->y && r.err.z < coarse->z && r.err.u < coarse->u;

    Json j = run_header("example-lc", builtin_problem("paper-example-lc"), cfg);
    j["errors"] = errors_json(r.err);
    j["error_bound"] = bound;
    j["within_bound"] = within;
    j["refinement"] = table;
    j["refinement_decreasing"] = decreasing;
    j["oracle_max_residual"] = r.ref.max_residual;
    j["xi"] = json_vectors(r.q.xi);
    j["report"] = to_json(r.sol.report);
    j["passed"] = within && decreasing;
    write_json(cx.opt, "oracle_comparison.json", j);
    write_atomic(out_path(cx.opt, "trajectory.csv"), trajectory_csv(r.sol.V, r.noise.grid));
    write_atomic(out_path(cx.opt, "controls.csv"), controls_csv(r.q, r.noise.grid));
    cx.log << "example-lc: errors X " << format_number(r.err.x) << " Y " << format_number(r.err.y) << " Z "
           << format_number(r.err.z) << " u " << format_number(r.err.u) << '\n';
    return within && decreasing ? ok : acceptance_failure;
}

int mode_lqic(Context& cx)
{
    ProblemSpec s = cx.has_config ? cx.file.problem : builtin_problem("lqic-crosscheck");
    if (s.type != "lqic")
        throw InvalidArgument("lqic-compare: the config problem must be of type lqic");
    const SolverConfig cfg = resolve(cx, lqic_crosscheck_config(42));
    BruteForceOptions bo = lqic_crosscheck_brute_force();
    const LQICProblemData lq = build_lqic(s);
    const LQICComparison c = compare_lqic(lq, cfg, bo);
    const double cost_bound = 1e-3, control_bound = 0.05;
    const bool passed = c.cost_gap <= cost_bound && std::max(c.control_gap[0], c.control_gap[1]) <= control_bound;
    Json j = run_header("lqic-compare", s, cfg);
    j["hamiltonian"] = Json{{"cost", to_json(c.cost_ham)},
                            {"xi", json_vectors(c.q_ham.xi)},
                            {"report", to_json(c.sol.report)}};
    j["brute_force"] = Json{{"cost", to_json(c.bf.cost)},
                            {"xi", json_vectors(c.bf.q.xi)},
                            {"iterations", c.bf.iterations},
                            {"stationarity", c.bf.stationarity},
                            {"converged", c.bf.converged},
                            {"degree", bo.degree}};
    j["cost_gap"] = c.cost_gap;
    j["cost_gap_bound"] = cost_bound;
    j["control_gap"] = c.control_gap;
    j["control_gap_bound"] = control_bound;
    j["passed"] = passed;
    const TimeGrid grid = make_grid(s.T, cfg.steps);
    write_json(cx.opt, "lqic_comparison.json", j);
    write_atomic(out_path(cx.opt, "controls_hamiltonian.csv"), controls_csv(c.q_ham, grid));
    write_atomic(out_path(cx.opt, "controls_brute_force.csv"), controls_csv(c.bf.q, grid));
    cx.log << "lqic-compare: cost gap " << format_number(c.cost_gap) << ", control gaps "
           << format_number(c.control_gap[0]) << ' ' << format_number(c.control_gap[1]) << '\n';
    return passed ? ok : acceptance_failure;
}

int mode_stability(Context& cx)
{
    ProblemSpec s = cx.has_config ? cx.file.problem : builtin_problem("paper-example-lc");
    if (s.type != "lc")
        throw InvalidArgument("stability: the config problem must be of type lc");
    SolverConfig base = example_solver_config(4096, 64, 42);
    base.picard_tol = 1e-9;
    base.picard_max = 500;
    const SolverConfig cfg = resolve(cx, base);
    const LCProblemData lc = build_lc(s);
    const BrownianEnsemble noise = sample_brownian(make_grid(s.T, cfg.steps), cfg.particles, s.d, cfg.seed);
    validate(lc, &noise.grid);
    const std::vector<double> sizes{1e-2, 1e-3};
    const std::vector<double> ratios =
        stability_probe(lc_hamiltonian(lc), unit_drift_forcing(s.n), sizes, noise, cfg);
    const double factor = std::max(ratios[0], ratios[1]) / std::min(ratios[0], ratios[1]);
    const bool passed = std::isfinite(factor) && factor <= 2.0;
    Json j = run_header("stability", s, cfg);
    j["forcing"] = "unit drift in both forward equations";
    j["sizes"] = sizes;
    j["ratios"] = ratios;
    j["factor"] = factor;
    j["factor_bound"] = 2.0;
    j["passed"] = passed;
    write_json(cx.opt, "stability.json", j);
    cx.log << "stability: ratios " << format_number(ratios[0]) << ' ' << format_number(ratios[1]) << '\n';
    return passed ? ok : acceptance_failure;
}

}  // namespace

ProblemSpec builtin_problem(const std::string& tag)
{
    ProblemSpec s;
    s.builtin = tag;
    if (tag == "paper-example-lc") {
        s.type = "lc";
    } else if (tag == "lqic-crosscheck") {
        s.type = "lqic";
    } else {
        throw InvalidArgument("unknown builtin \"" + tag + "\" (paper-example-lc, lqic-crosscheck)");
    }
    return s;
}

LCProblemData build_lc(const ProblemSpec& s)
{
    if (s.type != "lc")
        throw InvalidArgument("problem is not of type lc");
    if (s.builtin == "paper-example-lc")
        return paper_example_lc();
    LCProblemData lc;
    lc.dyn = build_dynamics(s);
    lc.f11 = build_function(s.f11, s.m);
    lc.f12 = build_function(s.f12, s.m);
    lc.f21 = build_function(s.f21, s.n);
    lc.f22 = build_function(s.f22, s.n);
    for (int i = 0; i < 2; ++i) {
        lc.f3[i] = constant_in_time(build_function(s.f3[i], s.n));
        lc.f4[i] = constant_in_time(build_function(s.f4[i], s.k));
    }
    lc.constants = s.constants;
    return lc;
}

LQICProblemData build_lqic(const ProblemSpec& s)
{
    if (s.type != "lqic")
        throw InvalidArgument("problem is not of type lqic");
    if (s.builtin == "lqic-crosscheck")
        return lqic_crosscheck_problem();
    LQICProblemData lq;
    lq.dyn = build_dynamics(s);
    for (int i = 0; i < 2; ++i) {
        lq.M[i] = s.M[i];
        lq.G[i] = ParticleMatrix(s.G[i]);
        lq.Q[i] = s.Q[i];
        lq.R[i] = s.R[i];
    }
    lq.delta = s.delta;
    lq.U0 = s.U0;
    lq.U = TimeSet(s.U);
    lq.constants = s.constants;
    return lq;
}

ProblemFile parse_problem(const Json& j)
{
    allow_keys(j, {"problem", "solver", "checks"}, "config");
    if (!j.contains("problem"))
        fail("config.problem", "required");
    ProblemFile f;
    f.problem = read_spec(j.at("problem"), "config.problem");
    if (j.contains("solver"))
        f.solver = read_solver(j.at("solver"), "config.solver");
    if (j.contains("checks")) {
        allow_keys(j.at("checks"), {"samples"}, "config.checks");
        if (j.at("checks").contains("samples"))
            f.check_samples = read_count(j.at("checks").at("samples"), "config.checks.samples");
    }
    return f;
}

ProblemFile parse_problem_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InvalidArgument(path + ": cannot open");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
    return parse_problem(j);
}

Json serialize(const ProblemFile& f)
{
    Json j = Json::object();
    j["problem"] = write_spec(f.problem);
    const Json s = write_solver(f.solver);
    if (!s.empty())
        j["solver"] = s;
    j["checks"] = Json{{"samples", f.check_samples}};
    return j;
}

void write_atomic(const std::string& path, const std::string& content)
{
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path())
        fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out)
            throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw InvalidArgument("alpha steps: \"" + item + "\" is not a number");
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
            ++used;
        if (used != item.size())
            throw InvalidArgument("alpha steps: \"" + item + "\" is not a number");
        out.push_back(v);
    }
    if (out.empty())
        throw InvalidArgument("alpha steps: empty list");
    return out;
}

Json to_json(const CheckReport& r)
{
    Json details = Json::array();
    for (const auto& [label, value] : r.details)
        details.push_back(Json{{"label", label}, {"value", value}});
    return Json{{"name", r.name},
                {"samples", r.samples},
                {"violations", r.violations},
                {"passed", r.passed()},
                {"worst_margin", std::isfinite(r.worst_margin) ? Json(r.worst_margin) : Json(nullptr)},
                {"worst_inequality", r.worst_inequality},
                {"witness", r.witness},
                {"witness_values", r.witness_values},
                {"details", details},
                {"warnings", r.warnings},
                {"tolerance", r.tolerance}};
}

Json to_json(const SolveReport& r)
{
    return Json{{"converged", r.converged},
                {"iterations", r.iterations},
                {"final_residual", r.final_residual},
                {"residuals", r.residuals},
                {"ratios", r.ratios},
                {"alpha_trace", r.alpha_trace},
                {"stage_iterations", r.stage_iterations},
                {"lambda_norms", r.lambda_norms},
                {"reduced_regressions", r.reduced_regressions},
                {"dropped_columns", r.dropped_columns}};
}

Json to_json(const CostBreakdown& c)
{
    return Json{{"total", c.total},
                {"initial", c.initial},
                {"terminal", c.terminal},
                {"running_state", c.running_state},
                {"running_control", c.running_control},
                {"std_error", c.std_error()}};
}

Json to_json(const GapReport& g)
{
    Json entries = Json::array();
    for (const auto& e : g.entries)
        entries.push_back(Json{{"gap", e.gap},
                               {"deviation", e.deviation},
                               {"bound", e.bound},
                               {"mc_tol", e.mc_tol},
                               {"margin_bound", e.margin_bound},
                               {"margin_positive", e.margin_positive}});
    return Json{{"delta", g.delta}, {"optimal_cost", g.optimal_cost}, {"passed", g.passed()}, {"entries", entries}};
}

int run(const RunOptions& opt, std::ostream& log)
{
    try {
        Context cx{opt, log, {}, false};
        if (opt.config) {
            cx.file = parse_problem_file(*opt.config);
            cx.has_config = true;
        } else {
            cx.file.problem = builtin_problem("paper-example-lc");
        }
        if (opt.mode == "solve")
            return mode_solve(cx);
        if (opt.mode == "check")
            return mode_check(cx);
        if (opt.mode == "example-lc")
            return mode_example(cx);
        if (opt.mode == "lqic-compare")
            return mode_lqic(cx);
        if (opt.mode == "stability")
            return mode_stability(cx);
        throw InvalidArgument("unknown subcommand \"" + opt.mode + "\"");
    } catch (const InvalidArgument& e) {
        log << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const nlohmann::json::exception& e) {
        log << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NonConvergence& e) {
        log << "non-convergence: " << e.what() << '\n';
        return non_convergence;
    } catch (const NumericFailure& e) {
        log << "non-convergence: " << e.what() << '\n';
        return non_convergence;
    } catch (const AdmissibilityViolation& e) {
        log << "admissibility: " << e.what() << '\n';
        return admissibility;
    }
}

}  // namespace mfb::cli
