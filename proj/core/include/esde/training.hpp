#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "esde/signature.hpp"
#include "esde/ssnn.hpp"

namespace esde {

/// Piecewise-constant learning rate: `rates[i]` applies from step `starts[i]`.
struct LearningRateSchedule {
    std::vector<std::size_t> starts{0};
    std::vector<double> rates{1e-3};

    double at(std::size_t step) const;

    static LearningRateSchedule constant(double lr);
    /// lr0 for the first `switch_step` steps, lr1 afterwards.
    static LearningRateSchedule two_phase(double lr0, double lr1, std::size_t switch_step);
};

struct OptimizerState {
    LearningRateSchedule schedule;
    double rho = 0.7;
    double momentum = 0.3;
    double eps = 1e-8;
    Vector second_moment;
    Vector buffer;
    std::size_t step = 0;
};

OptimizerState make_rmsprop(std::size_t n, LearningRateSchedule schedule, double rho = 0.7,
                            double momentum = 0.3, double eps = 1e-8);

/// v <- rho v + (1 - rho) g^2; buf <- m buf + lr g / sqrt(v + eps); theta <- theta - buf.
void rmsprop_step(OptimizerState& state, Vector& params, const Vector& grad);

/// Copies trainable values into the matching fields of `params`.
NetworkParams with_parameters(NetworkParams params, std::span<const TrainableParam> trainable,
                              const Vector& values);

/// How generated paths are paired with data paths before the MMD.
enum class CountMatching {
    off,        ///< Compare against the data batch as is.
    total,      ///< Nearest total spike count.
    per_neuron, ///< Nearest per-neuron count vector (L1).
    /// Generated sample j runs until every observed neuron fired as often as
    /// in data path j; later spikes are dropped and the path ends at
    /// max(T, last kept spike).
    exact,
};

const char* to_string(CountMatching m) noexcept;
CountMatching count_matching_from_string(const std::string& name);

/// Which neurons share a signature path.
enum class PathGrouping {
    joint,      ///< One multi-dimensional counting path of all observed neurons.
    per_neuron, ///< One path per neuron; the kernel is the sum over neurons.
};

const char* to_string(PathGrouping g) noexcept;
PathGrouping path_grouping_from_string(const std::string& name);

struct LossConfig {
    KernelConfig kernel;
    double T = 1.0;
    SimulationOptions sim;
    /// Neurons entering the spike-train paths (all when empty).
    std::vector<int> observed;
    /// Pairing of generated and data paths; nearest-count ties are spread by
    /// the generated index.
    CountMatching matching = CountMatching::off;
    /// Simulation horizon for exact matching, as a multiple of T.
    double horizon_factor = 4.0;
    PathGrouping grouping = PathGrouping::joint;
    /// Treat reaching sim.max_events as the intended stopping rule rather than
    /// an event-count blow-up.
    bool stop_at_max_events = false;
};

struct LossGradient {
    double loss = 0.0;
    Vector gradient;
    std::size_t events = 0;
};

/// Restricts trains to the observed neurons.
SpikeTrains observe(const SpikeTrains& trains, const std::vector<int>& observed);

/// Simulates `batch` generated samples with forward sensitivities, evaluates
/// the unbiased signature-kernel MMD against `data` and chains the kernel
/// gradient with respect to spike times into the trainable parameters.
LossGradient loss_and_gradient(const NetworkParams& params,
                               std::span<const TrainableParam> trainable,
                               std::span<const SpikeTrains> data, std::size_t batch,
                               std::uint64_t seed, const LossConfig& cfg);

/// Loss only (no sensitivities), same random inputs as loss_and_gradient.
double loss_value(const NetworkParams& params, std::span<const SpikeTrains> data,
                  std::size_t batch, std::uint64_t seed, const LossConfig& cfg);

/// Average time of spike n (n = 1..count) of `neuron` over a batch; samples
/// with fewer spikes contribute T.
std::vector<double> mean_spike_times(std::span<const SpikeTrains> batch, int neuron,
                                     std::size_t count, double T);

/// Mean absolute difference of the first `count` average spike times.
double spike_time_mae(std::span<const SpikeTrains> a, std::span<const SpikeTrains> b, int neuron,
                      std::size_t count, double T);

struct TrainRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double test_metric = 0.0;
    double param_error = 0.0;
    Vector params;
};

struct TrainRun {
    std::string experiment;
    std::vector<std::string> param_names;
    std::vector<TrainRecord> records;
    Vector true_params;
    std::uint64_t seed = 0;

    const Vector& initial_params() const { return records.front().params; }
    const Vector& final_params() const { return records.back().params; }
};

struct InputCurrentConfig {
    std::size_t sample_size = 64;
    std::size_t steps = 400;
    double sigma = 0.1;
    double true_c = 1.5;
    double init_low = 0.5;
    double init_high = 2.5;
    double mu = 15.0;
    double v_reset = 1.4;
    double alpha = 0.03;
    double psi = 1.0;
    double beta = 0.2;
    double T = 3.0;
    double dt = 0.01;
    Scheme scheme = Scheme::euler_maruyama;
    std::size_t max_spikes = 3;
    int depth = 3;
    double lr0 = 0.003;
    double lr1 = 0.001;
    double switch_fraction = 2.0 / 3.0;
    double rho = 0.7;
    double momentum = 0.3;
    /// Learning rate override for all steps (negative keeps the schedule).
    double lr = -1.0;
    std::uint64_t seed = 0;
};

TrainRun experiment_input_current(const InputCurrentConfig& cfg);

struct WeightsConfig {
    std::vector<int> layers{2, 4, 2};
    std::size_t sample_size = 256;
    std::size_t batch = 128;
    std::size_t test_size = 128;
    std::size_t steps = 600;
    double mu1 = 6.0;
    double mu2 = 5.0;
    double sigma1 = 0.25;
    double sigma2 = 0.25;
    double v_reset = 1.2;
    double alpha = 0.03;
    double psi = 1.0;
    double beta = 0.2;
    double input_drive = 7.5;
    double input_current = 1.5;
    double T = 1.0;
    double dt = 0.01;
    Scheme scheme = Scheme::euler_maruyama;
    std::size_t max_events = 10000;
    /// Step halvings per repeated spike; negative picks dt / 2^r < alpha / C.
    int max_refinements = -1;
    int depth = 3;
    CountMatching matching = CountMatching::exact;
    PathGrouping grouping = PathGrouping::joint;
    /// Observed neurons (all when empty).
    std::vector<int> observed;
    double lr0 = 0.003;
    double lr1 = 0.001;
    double switch_fraction = 2.0 / 3.0;
    double rho = 0.7;
    double momentum = 0.3;
    /// Learning rate override for all steps (negative keeps the schedule).
    double lr = -1.0;
    /// Test MMD is evaluated every `eval_every` steps (NaN in between).
    std::size_t eval_every = 10;
    std::uint64_t seed = 0;
};

/// Feed-forward network with all-to-all connections between consecutive
/// layers; weights are U[0.5, 1.5] * 3 / K_l.
NetworkParams feedforward_network(const WeightsConfig& cfg, const Matrix& w);
Matrix feedforward_mask(const std::vector<int>& layers);
Matrix sample_feedforward_weights(const std::vector<int>& layers, std::uint64_t seed);

TrainRun experiment_weights(const WeightsConfig& cfg);

} // namespace esde
