#include "mfb/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Coupled mean-field FBSDE solver and optimal-control cross-checks"};
    app.require_subcommand(1, 1);

    mfb::cli::RunOptions opt;
    std::string config, alpha;
    std::size_t particles = 0, steps = 0;
    std::uint64_t seed = 0;
    double tol = 0.0;

    auto add_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config, "problem file (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--particles", particles, "ensemble size M")->check(CLI::PositiveNumber);
        sub->add_option("--steps", steps, "time steps N")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "noise seed");
        sub->add_option("--tol", tol, "relative Picard tolerance")->check(CLI::PositiveNumber);
        sub->add_option("--alpha-steps", alpha, "continuation schedule, comma separated, starting at 0");
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    };
    const std::pair<const char*, const char*> modes[] = {
        {"solve", "solve the Hamiltonian system of a problem file"},
        {"check", "sample the standing assumptions and write a check report"},
        {"example-lc", "solve the worked example and compare against its closed form"},
        {"lqic-compare", "Hamiltonian route against direct minimization on a constrained LQ problem"},
        {"stability", "perturbation response ratios of the worked example"},
    };
    for (const auto& [name, help] : modes)
        add_flags(app.add_subcommand(name, help));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mfb::cli::config_error;
    }

    CLI::App* sub = app.get_subcommands().front();
    opt.mode = sub->get_name();
    if (sub->count("--config"))
        opt.config = config;
    if (sub->count("--particles"))
        opt.particles = particles;
    if (sub->count("--steps"))
        opt.steps = steps;
    if (sub->count("--seed"))
        opt.seed = seed;
    if (sub->count("--tol"))
        opt.tol = tol;
    if (sub->count("--alpha-steps")) {
        try {
            opt.alpha_steps = mfb::cli::parse_list(alpha);
        } catch (const mfb::InvalidArgument& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return mfb::cli::config_error;
        }
    }
    return mfb::cli::run(opt, std::cout);
}
