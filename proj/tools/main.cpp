#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <esde/errors.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
    using namespace esde::cli;

    CLI::App app{"Event SDE simulation, exact gradients and signature-kernel training"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::string x_path;
    std::string y_path;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
        cmd->add_option("--seed", seed, "Overrides [run] seed");
    };
    CLI::App* simulate = app.add_subcommand("simulate", "Simulate spike trains");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Compare forward sensitivities with finite differences");
    CLI::App* kernel = app.add_subcommand("kernel", "Signature-kernel MMD between two path sets");
    CLI::App* train = app.add_subcommand("train", "Run a training experiment");
    for (CLI::App* cmd : {simulate, gradcheck, kernel, train}) {
        common(cmd);
    }
    kernel->add_option("x", x_path, "First path set (CSV)")->required();
    kernel->add_option("y", y_path, "Second path set (CSV)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_usage;
    }

    Config cfg;
    std::string run_seed = "0";
    try {
        cfg = Config::load(config_path);
        if (seed) {
            cfg.set("run.seed", std::to_string(*seed));
        }
        if (cfg.has("run.seed")) {
            run_seed = cfg.get_string("run.seed", run_seed);
        }
        if (simulate->parsed()) {
            return cmd_simulate(cfg, out_dir);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(cfg, out_dir);
        }
        if (kernel->parsed()) {
            return cmd_kernel(cfg, out_dir, x_path, y_path);
        }
        return cmd_train(cfg, out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_usage;
    } catch (const esde::ArgumentError& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return exit_usage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error (seed %s): %s\n", run_seed.c_str(), e.what());
        return exit_failure;
    }
}
