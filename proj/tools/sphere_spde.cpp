// Command-line front end: one subcommand per experiment family.
//
//   sphere-spde <spectral|em|bounds|snapshot|moments> --config <file>
//               [--out <dir>] [--seed <u64>] [--threads <n>] [--allow-expensive]
//
// Exit status: 0 success, 1 internal error, 2 usage or configuration error,
// 3 stability violation, 4 resource limit.

#include <clocale>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "sphere_spde/experiments.hpp"

namespace {

enum Exit : int { ok = 0, internal = 1, usage = 2, unstable = 3, resource = 4 };

struct Arguments {
    std::string config;
    std::string out = ".";
    std::uint64_t seed = 0;
    int threads = 0;
    bool allow_expensive = false;
};

void add_common(CLI::App& sub, Arguments& a)
{
    sub.add_option("--config", a.config, "experiment configuration file")->required()->check(CLI::ExistingFile);
    sub.add_option("--out", a.out, "output directory (created if missing)");
    sub.add_option("--seed", a.seed, "overrides the configuration's seed");
    sub.add_option("--threads", a.threads, "worker threads (0 = hardware concurrency)")
        ->check(CLI::Range(0, 1024));
    sub.add_flag("--allow-expensive", a.allow_expensive, "permit long Monte Carlo runs");
}

} // namespace

int main(int argc, char** argv)
{
    std::setlocale(LC_ALL, "C");

    CLI::App app{"Spectral and Euler-Maruyama experiments for stochastic heat equations on the sphere",
                 "sphere-spde"};
    app.require_subcommand(1);
    Arguments args;
    const char* names[] = {"spectral", "em", "bounds", "snapshot", "moments"};
    const char* help[] = {"spectral truncation error sweeps", "Euler-Maruyama error sweeps",
                          "ratio sweeps of the exponential-approximation estimates", "field images on the sphere",
                          "mean norms and second moments over time"};
    for (int i = 0; i < 5; ++i) {
        add_common(*app.add_subcommand(names[i], help[i]), args);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    sphere_spde::RunOptions opt;
    opt.out_dir = args.out;
    if (app.get_subcommands().front()->count("--seed") > 0) {
        opt.seed = args.seed;
    }
    opt.threads = args.threads > 0 ? args.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    opt.allow_expensive = args.allow_expensive;
    opt.log = &std::cerr;

    try {
        sphere_spde::Config cfg = sphere_spde::Config::load(args.config);
        sphere_spde::RunReport report;
        if (command == "spectral") {
            report = sphere_spde::run_spectral(cfg, opt);
        } else if (command == "em") {
            report = sphere_spde::run_em(cfg, opt);
        } else if (command == "bounds") {
            report = sphere_spde::run_bounds(cfg, opt);
        } else if (command == "snapshot") {
            report = sphere_spde::run_snapshot(cfg, opt);
        } else {
            report = sphere_spde::run_moments(cfg, opt);
        }
        for (const auto& f : report.files) {
            std::cout << f.string() << '\n';
        }
        std::cerr << "config hash " << report.config_hash << '\n';
        return ok;
    } catch (const sphere_spde::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return usage;
    } catch (const sphere_spde::DomainError& e) {
        std::cerr << "invalid parameter: " << e.what() << '\n';
        return usage;
    } catch (const sphere_spde::StabilityError& e) {
        std::cerr << "stability error: " << e.what() << '\n';
        return unstable;
    } catch (const sphere_spde::ResourceError& e) {
        std::cerr << "resource error: " << e.what() << '\n';
        return resource;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return internal;
    }
}
