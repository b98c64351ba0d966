#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "esde/events.hpp"
#include "esde/sensitivity.hpp"

namespace esde {

enum class FiringMode {
    stochastic, ///< Spike when the integrated-intensity clock s reaches 0.
    threshold,  ///< Deterministic LIF: spike when v reaches psi.
};

enum class ResetMode {
    subtract, ///< v -> v - v_reset
    to_zero,  ///< v -> 0 (breaks the diffusion/transition commutation)
};

/// Stochastic leaky integrate-and-fire network. Neuron k carries
/// (v, i, s); between spikes
///   dv = mu1 (i - v) dt + sigma1 dB1,  di = (-mu2 i + drive) dt + sigma2 dB2,
///   ds = lambda(v) dt,  lambda(v) = min(exp((v - psi) / beta), C).
/// A spike of k resets v^k, redraws s^k = log u - alpha and adds w(k, j) to
/// the input current of every neuron j.
struct NetworkParams {
    int K = 1;
    Matrix w;    ///< w(k, j): increment of i^j when k spikes.
    Matrix mask; ///< 1 where a synapse exists; empty means the nonzero pattern of w.
    double mu1 = 15.0;
    double mu2 = 0.0;
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double v_reset = 1.4;
    double alpha = 0.03;
    double psi = 1.0;
    double beta = 0.2;
    /// Intensity cap C; non-positive selects lambda(psi + 5 beta).
    double lambda_cap = 0.0;
    Vector v0; ///< Initial potentials (zero when empty).
    Vector i0; ///< Initial currents (zero when empty).
    Vector input_drive; ///< Constant additive drift on i (zero when empty).
    FiringMode firing = FiringMode::stochastic;
    ResetMode reset = ResetMode::subtract;
};

void validate_params(const NetworkParams& params);
Matrix synapse_mask(const NetworkParams& params);
double lambda_cap(const NetworkParams& params);
double intensity(const NetworkParams& params, double v);
/// d lambda / dv, zero where the cap is active.
double intensity_derivative(const NetworkParams& params, double v);
/// alpha / C.
double refractory_bound(const NetworkParams& params);

struct TrainableParam {
    enum class Kind { initial_current, initial_potential, weight };
    Kind kind = Kind::initial_current;
    int neuron = 0; ///< Neuron for initial conditions, presynaptic neuron for weights.
    int target = 0; ///< Postsynaptic neuron for weights.

    static TrainableParam current(int k) { return {Kind::initial_current, k, 0}; }
    static TrainableParam potential(int k) { return {Kind::initial_potential, k, 0}; }
    static TrainableParam weight(int from, int to) { return {Kind::weight, from, to}; }

    std::string name() const;
};

/// The network as an event system. Trainable weights are appended to the
/// state as constant coordinates so that their sensitivities ride along with
/// the state Jacobian.
struct SlifSystem {
    NetworkParams params;
    std::vector<TrainableParam> trainable;
    VectorFields fields;
    std::vector<EventSpec> specs;
    int state_dim = 0;

    static Eigen::Index v_index(int k) { return 3 * k; }
    static Eigen::Index i_index(int k) { return 3 * k + 1; }
    static Eigen::Index s_index(int k) { return 3 * k + 2; }
    /// State coordinate whose initial value is trainable parameter p.
    std::vector<Eigen::Index> seed_index;

    /// e x p matrix of seed directions, one column per trainable parameter.
    Matrix seed() const;
    /// Current trainable values in `trainable` order.
    Vector parameter_values() const;
};

SlifSystem build_slif_network(const NetworkParams& params,
                              std::vector<TrainableParam> trainable = {});

/// Initial state with s^k = log u_k - alpha (stochastic firing) so that the
/// first spike obeys the same survival law as later ones.
Vector initial_state(const SlifSystem& system, std::span<const double> initial_uniforms);
Vector initial_state(const SlifSystem& system, std::uint64_t seed);

/// Per-neuron spike times of one sample.
using SpikeTrains = std::vector<std::vector<double>>;

SpikeTrains spike_trains_from(const EventSolution& solution, int K);

struct SimulationOptions {
    double dt = 0.01;
    Scheme scheme = Scheme::euler_maruyama;
    std::size_t max_events = 100000;
    double t0 = 0.0;
    bool enforce_refractory = true;
    bool record_segments = false;
    /// Step halvings tried before a repeated spike within one step is an error.
    /// Negative selects the fewest halvings with dt / 2^r below alpha / C for
    /// stochastic firing (2 otherwise).
    int max_refinements = -1;
};

/// Random inputs of sample `index` of a batch keyed by `seed`.
struct SampleRandomness {
    std::uint64_t driver_seed = 0;
    std::uint64_t transition_seed = 0;
    std::uint64_t initial_seed = 0;
};

SampleRandomness sample_randomness(std::uint64_t seed, std::uint64_t index);

BrownianDriver make_driver(const SlifSystem& system, double T, const SimulationOptions& options,
                           std::uint64_t driver_seed);

SolverOptions solver_options(const SlifSystem& system, const SimulationOptions& options);

EventSolution simulate_sample(const SlifSystem& system, double T, const SimulationOptions& options,
                              const SampleRandomness& rnd);

std::vector<SpikeTrains> simulate_spike_trains(const NetworkParams& params, double T,
                                               const SimulationOptions& options,
                                               std::uint64_t seed, std::size_t batch);

/// Online sensitivities of every spike time with respect to one weight
/// w(from, to), propagated with the closed-form 2 x 2 flow between spikes.
struct OnlineSensitivity {
    std::vector<double> spike_time_grads; ///< One per event of the solution.
    Matrix G;                             ///< 2 x K gradient of (v^k, i^k) at the final time.
};

/// exp(Gamma t) for Gamma = [[-mu1, mu1], [0, -mu2]].
Eigen::Matrix2d ou_flow(double mu1, double mu2, double t);

/// Threshold firing uses the closed-form event-time formula; stochastic
/// firing integrates lambda'(v) G_v over the recorded segments (trapezoid).
OnlineSensitivity online_sensitivity(const NetworkParams& params, const EventSolution& solution,
                                     int from, int to, double t0 = 0.0);

struct EligibilityResult {
    Matrix gradient; ///< K x K, entry (j, k) estimates dL / dw(j, k).
    Matrix a;        ///< Eligibility traces at the final time.
    Matrix b;        ///< Presynaptic filters at the final time.
    bool exact = true;
    std::vector<std::string> warnings;
};

/// Three-factor estimate sum over spikes n of neuron k of
/// modulator(n) * a^{jk} / (mu1 (v^k - i^k)) evaluated just before the spike.
/// Exact for threshold firing on acyclic synapse graphs; otherwise flagged as
/// an approximation.
EligibilityResult eligibility_traces(const NetworkParams& params, const EventSolution& solution,
                                     const std::function<double(std::size_t)>& modulator,
                                     double t0 = 0.0);

bool is_acyclic(const Matrix& mask);

} // namespace esde
