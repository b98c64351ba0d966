#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <esde/ssnn.hpp>

#include "config.hpp"

namespace esde::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_usage = 2,
};

/// `[model]` section.
NetworkParams read_model(Config& cfg);
/// `[solver]` section.
SimulationOptions read_solver(Config& cfg);
/// Parses names such as `i0[0]`, `v0[1]` and `w[0,2]`.
TrainableParam parse_trainable(const std::string& name);

/// Each command resolves the whole configuration, writes `config.ini` into
/// `out`, then runs; it returns the exit code of a completed run.
int cmd_simulate(Config& cfg, const std::filesystem::path& out);
int cmd_gradcheck(Config& cfg, const std::filesystem::path& out);
int cmd_kernel(Config& cfg, const std::filesystem::path& out, const std::filesystem::path& x,
               const std::filesystem::path& y);
int cmd_train(Config& cfg, const std::filesystem::path& out);

} // namespace esde::cli
