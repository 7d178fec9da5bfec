#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfb/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace mfb;
using namespace mfb::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("mfb_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Json small_lqic()
{
    return Json::parse(R"({
      "problem": {
        "type": "lqic", "n": 1, "m": 1, "k": 1, "d": 1, "T": 1.0,
        "A": 0.1, "Abar": 0.005, "B": 1.0, "Bbar": 1.0, "C": 0.2, "D": 0.5, "tau": 0.1,
        "H": 1.0, "x0": 0.5, "rho": 0.1, "kappa": 0.2,
        "M": {"1": 1.0, "2": 2.0}, "G": {"1": 1.0, "2": 0.5}, "Q": 1.0, "R": 1.0, "delta": 1.0,
        "U0": {"lo": -0.2, "hi": 1.0}, "U": {"kind": "box", "lo": -0.5, "hi": 0.5}
      },
      "solver": {"particles": 128, "steps": 4, "seed": 3, "damping": 0.2, "picard_tol": 1e-8, "picard_max": 1000,
                 "basis": {"kind": "joint", "degree": 1}},
      "checks": {"samples": 100}
    })");
}

std::string write_config(const fs::path& dir, const Json& j)
{
    const std::string path = (dir / "config.json").string();
    write_atomic(path, j.dump(2));
    return path;
}

int run_mode(const std::string& mode, const fs::path& out, std::optional<std::string> config = {},
             std::optional<std::size_t> particles = {}, std::optional<std::size_t> steps = {})
{
    RunOptions o;
    o.mode = mode;
    o.config = std::move(config);
    o.out = out.string();
    o.particles = particles;
    o.steps = steps;
    std::ostringstream log;
    return run(o, log);
}

std::string error_of(const Json& j)
{
    try {
        parse_problem(j);
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("builtin problems parse")
{
    const ProblemFile f = parse_problem(Json::parse(R"({"problem": {"builtin": "paper-example-lc"}})"));
    CHECK(f.problem.builtin == "paper-example-lc");
    CHECK(f.problem.type == "lc");
    CHECK(parse_problem(Json::parse(R"({"problem": {"builtin": "lqic-crosscheck"}})")).problem.type == "lqic");
    CHECK_FALSE(error_of(Json::parse(R"({"problem": {"builtin": "nope"}})")).empty());
}

TEST_CASE("box without a kind and per-equation fields")
{
    const ProblemFile f = parse_problem(small_lqic());
    CHECK(f.problem.U0.kind == ConvexSet::Kind::box);
    CHECK(f.problem.U0.lo(0) == -0.2);
    CHECK(f.problem.M[0](0, 0) == 1.0);
    CHECK(f.problem.M[1](0, 0) == 2.0);
    CHECK(f.problem.R[1](0, 0) == 1.0);
    CHECK(f.solver.particles == 128u);
    CHECK(f.check_samples == 100u);
}

TEST_CASE("schema errors name the field")
{
    Json j = small_lqic();
    j["problem"]["R"] = Json::parse("[[2.0, 1.0], [0.0, 2.0]]");
    j["problem"]["k"] = 2;
    j["problem"]["B"] = Json::parse("[[1.0, 0.0]]");
    j["problem"]["Bbar"] = Json::parse("[[1.0, 0.0]]");
    j["problem"]["D"] = Json::parse("[[0.5, 0.0]]");
    j["problem"]["U"] = Json::parse(R"({"kind": "full"})");
    const std::string e = error_of(j);
    INFO(e);
    CHECK(e.find("config.problem.R") != std::string::npos);
    CHECK(e.find("symmetric") != std::string::npos);

    Json k = small_lqic();
    k["problem"]["Rr"] = 1.0;
    CHECK(error_of(k).find("Rr") != std::string::npos);

    Json m = small_lqic();
    m["problem"]["U"]["kind"] = "tube";
    CHECK(error_of(m).find("config.problem.U.kind") != std::string::npos);

    Json s = small_lqic();
    s["solver"]["particles"] = -3;
    CHECK(error_of(s).find("config.solver.particles") != std::string::npos);

    Json h = small_lqic();
    h["problem"]["M"] = Json::parse(R"({"1": 1.0})");
    CHECK(error_of(h).find("config.problem.M") != std::string::npos);
}

TEST_CASE("serialization round-trips")
{
    const Json once = serialize(parse_problem(small_lqic()));
    const Json twice = serialize(parse_problem(once));
    CHECK(once.dump() == twice.dump());

    const Json lc = serialize(parse_problem(Json::parse(R"({"problem": {"builtin": "paper-example-lc"}})")));
    CHECK(serialize(parse_problem(lc)).dump() == lc.dump());
}

TEST_CASE("explicit linear-convex problem round-trips and solves")
{
    const Json j = Json::parse(R"({
      "problem": {
        "type": "lc", "n": 1, "m": 1, "k": 1, "d": 1, "T": 1.0,
        "A": 0.0, "Abar": {"1": 0.0, "2": 0.001}, "B": 0.0, "Bbar": 0.0, "C": 0.0, "D": 1.0,
        "H": 1.0, "kappa": 0.3, "mean_feedback": 0.001,
        "f11": {"family": "exponential"}, "f12": {"family": "quadratic", "Q": 2.0, "c": 0.1},
        "f21": {"family": "quadratic", "Q": 0.25}, "f22": {"family": "quadratic", "Q": 0.25},
        "f3": {"family": "zero"}, "f4": {"family": "exponential"},
        "constants": {"L": 2.0, "LPhi": 0.5, "eps": 0.001, "eps_cross": 0.5}
      },
      "solver": {"particles": 256, "steps": 8, "seed": 1, "basis": {"kind": "polynomial-in-noise", "degree": 3}}
    })");
    const ProblemFile f = parse_problem(j);
    CHECK(f.problem.f12.family == "quadratic");
    CHECK(f.problem.constants.LPhi == 0.5);
    CHECK(f.problem.Abar[1](0, 0) == 0.001);
    const Json once = serialize(f);
    CHECK(serialize(parse_problem(once)).dump() == once.dump());

    const fs::path d = scratch("lc");
    CHECK(run_mode("solve", d, write_config(d, j)) == ok);
    CHECK(fs::exists(d / "controls.csv"));
}

TEST_CASE("list parsing")
{
    CHECK(parse_list("0,0.5,1") == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(parse_list("0") == std::vector<double>{0.0});
    CHECK_THROWS(parse_list("0,,1"));
    CHECK_THROWS(parse_list("a"));
}

TEST_CASE("atomic writes leave no temporary file")
{
    const fs::path d = scratch("atomic");
    const std::string p = (d / "nested" / "x.json").string();
    write_atomic(p, "first\n");
    write_atomic(p, "second\n");
    CHECK(slurp(p) == "second\n");
    CHECK_FALSE(fs::exists(p + ".tmp"));
}

TEST_CASE("solve writes its artifacts, byte-identical on repeat")
{
    const fs::path d = scratch("solve");
    const std::string cfg = write_config(d, small_lqic());
    REQUIRE(run_mode("solve", d / "a", cfg) == ok);
    REQUIRE(run_mode("solve", d / "b", cfg) == ok);
    for (const char* f : {"solve_report.json", "trajectory.csv", "controls.csv"}) {
        INFO(f);
        CHECK(fs::exists(d / "a" / f));
        CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));
    }
    const Json r = Json::parse(slurp(d / "a" / "solve_report.json"));
    CHECK(r["mode"] == "solve");
    CHECK(r["report"]["converged"] == true);
    CHECK_FALSE(r["report"].contains("wall_time_s"));
}

TEST_CASE("check mode passes on a valid problem")
{
    const fs::path d = scratch("check_ok");
    CHECK(run_mode("check", d, write_config(d, small_lqic())) == ok);
    CHECK(Json::parse(slurp(d / "check_report.json"))["passed"] == true);
}

TEST_CASE("check mode reports a violated control weight")
{
    const fs::path d = scratch("check_bad");
    Json j = small_lqic();
    j["problem"]["R"] = Json::parse(R"({"1": 0.5, "2": 1.0})");
    CHECK(run_mode("check", d, write_config(d, j)) == admissibility);
    const std::string report = slurp(d / "check_report.json");
    CHECK(Json::parse(report)["passed"] == false);
    CHECK(report.find("R1 (node 0") != std::string::npos);
}

TEST_CASE("exit codes")
{
    const fs::path d = scratch("codes");
    CHECK(run_mode("solve", d, (d / "missing.json").string()) == config_error);

    Json bad_json_path = small_lqic();
    bad_json_path["solver"]["damping"] = 2.0;
    CHECK(run_mode("solve", d, write_config(d, bad_json_path)) == config_error);

    write_atomic((d / "broken.json").string(), "{ not json");
    CHECK(run_mode("solve", d, (d / "broken.json").string()) == config_error);

    CHECK(run_mode("bogus", d) == config_error);

    Json slow = small_lqic();
    slow["solver"]["picard_max"] = 1;
    slow["solver"]["picard_tol"] = 1e-14;
    CHECK(run_mode("solve", d, write_config(d, slow)) == non_convergence);

    // a coarse ensemble cannot meet the oracle bound
    CHECK(run_mode("example-lc", d / "coarse", {}, 64, 4) == acceptance_failure);
}

TEST_CASE("command-line front end")
{
    const char* bin = std::getenv("MFB_BIN");
    if (!bin) {
        MESSAGE("MFB_BIN not set; skipping");
        return;
    }
    const fs::path d = scratch("bin");
    auto status = [](const std::string& cmd) {
        const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    const std::string b = bin;
    CHECK(status(b + " --help") == 0);
    CHECK(status(b + " solve --particles nope") == 2);
    CHECK(status(b + " frobnicate") == 2);
    CHECK(status(b + " check --config " + write_config(d, small_lqic()) + " --out " + (d / "o").string()) == 0);
    CHECK(status(b + " example-lc --particles 64 --steps 4 --out " + (d / "e").string()) == 5);
}
