#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <esde/signature.hpp>
#include <esde/ssnn.hpp>
#include <esde/training.hpp>

namespace esde::cli {

/// Header `sample_id,neuron_id,spike_time`, one row per spike in sample,
/// neuron and time order.
void write_spike_csv(const std::filesystem::path& path, const std::vector<SpikeTrains>& batch);

/// Samples and neurons are sized to the largest ids seen, or to the given
/// counts when these are nonzero.
std::vector<SpikeTrains> read_spike_csv(const std::filesystem::path& path, std::size_t samples = 0,
                                        int neurons = 0);

/// Header `path_id,time,v_1,...,v_d,is_jump`; rows of one path are
/// consecutive and time-ordered.
std::vector<CadlagPath> read_node_csv(const std::filesystem::path& path);

/// `train.csv` (step, loss, test_metric, param_error) and `params.csv`
/// (step and one column per parameter).
void write_train_csv(const std::filesystem::path& dir, const TrainRun& run);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace esde::cli
