#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "esde/errors.hpp"
#include "esde/random.hpp"
#include "esde/training.hpp"
#include "parallel.hpp"

namespace esde {

double LearningRateSchedule::at(std::size_t step) const {
    if (starts.empty() || starts.size() != rates.size()) {
        throw ArgumentError("LearningRateSchedule: starts and rates must be non-empty and aligned");
    }
    double lr = rates.front();
    for (std::size_t i = 0; i < starts.size(); ++i) {
        if (step >= starts[i]) {
            lr = rates[i];
        }
    }
    return lr;
}

LearningRateSchedule LearningRateSchedule::constant(double lr) {
    return {{0}, {lr}};
}

LearningRateSchedule LearningRateSchedule::two_phase(double lr0, double lr1,
                                                     std::size_t switch_step) {
    return {{0, switch_step}, {lr0, lr1}};
}

OptimizerState make_rmsprop(std::size_t n, LearningRateSchedule schedule, double rho,
                            double momentum, double eps) {
    if (!(rho >= 0.0 && rho < 1.0) || !(momentum >= 0.0 && momentum < 1.0) || !(eps > 0.0)) {
        throw ArgumentError("make_rmsprop: need 0 <= rho < 1, 0 <= momentum < 1, eps > 0");
    }
    for (double r : schedule.rates) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw ArgumentError("make_rmsprop: learning rates must be finite and nonnegative");
        }
    }
    OptimizerState s;
    s.schedule = std::move(schedule);
    s.rho = rho;
    s.momentum = momentum;
    s.eps = eps;
    s.second_moment = Vector::Zero(static_cast<Eigen::Index>(n));
    s.buffer = Vector::Zero(static_cast<Eigen::Index>(n));
    return s;
}

void rmsprop_step(OptimizerState& state, Vector& params, const Vector& grad) {
    if (params.size() != grad.size() || params.size() != state.second_moment.size()) {
        throw ArgumentError("rmsprop_step: shape mismatch");
    }
    if (!grad.allFinite()) {
        throw OptimizerError("rmsprop_step: non-finite gradient");
    }
    const double lr = state.schedule.at(state.step);
    state.second_moment = state.rho * state.second_moment + (1.0 - state.rho) * grad.cwiseAbs2();
    state.buffer = state.momentum * state.buffer +
                   lr * grad.cwiseQuotient((state.second_moment.array() + state.eps).sqrt().matrix());
    params -= state.buffer;
    ++state.step;
}

NetworkParams with_parameters(NetworkParams params, std::span<const TrainableParam> trainable,
                              const Vector& values) {
    if (static_cast<std::size_t>(values.size()) != trainable.size()) {
        throw ArgumentError("with_parameters: one value per trainable parameter required");
    }
    const auto K = static_cast<Eigen::Index>(params.K);
    for (std::size_t p = 0; p < trainable.size(); ++p) {
        const auto& t = trainable[p];
        const double v = values(static_cast<Eigen::Index>(p));
        if (t.neuron < 0 || t.neuron >= params.K) {
            throw ArgumentError("with_parameters: neuron index out of range");
        }
        switch (t.kind) {
        case TrainableParam::Kind::initial_current:
            if (params.i0.size() == 0) {
                params.i0 = Vector::Zero(K);
            }
            params.i0(t.neuron) = v;
            break;
        case TrainableParam::Kind::initial_potential:
            if (params.v0.size() == 0) {
                params.v0 = Vector::Zero(K);
            }
            params.v0(t.neuron) = v;
            break;
        case TrainableParam::Kind::weight:
            if (t.target < 0 || t.target >= params.K) {
                throw ArgumentError("with_parameters: target index out of range");
            }
            if (params.mask.size() == 0) {
                params.mask = synapse_mask(params);
                params.mask(t.neuron, t.target) = 1.0;
            }
            params.w(t.neuron, t.target) = v;
            break;
        }
    }
    return params;
}

const char* to_string(PathGrouping g) noexcept {
    return g == PathGrouping::joint ? "joint" : "per_neuron";
}

PathGrouping path_grouping_from_string(const std::string& name) {
    if (name == "joint") {
        return PathGrouping::joint;
    }
    if (name == "per_neuron") {
        return PathGrouping::per_neuron;
    }
    throw ArgumentError("unknown path grouping '" + name + "' (expected joint or per_neuron)");
}

const char* to_string(CountMatching m) noexcept {
    switch (m) {
    case CountMatching::off:
        return "off";
    case CountMatching::total:
        return "total";
    case CountMatching::per_neuron:
        return "per_neuron";
    case CountMatching::exact:
        return "exact";
    }
    return "off";
}

CountMatching count_matching_from_string(const std::string& name) {
    if (name == "off") {
        return CountMatching::off;
    }
    if (name == "total") {
        return CountMatching::total;
    }
    if (name == "per_neuron") {
        return CountMatching::per_neuron;
    }
    if (name == "exact") {
        return CountMatching::exact;
    }
    throw ArgumentError("unknown count matching '" + name +
                        "' (expected off, total, per_neuron or exact)");
}

SpikeTrains observe(const SpikeTrains& trains, const std::vector<int>& observed) {
    if (observed.empty()) {
        return trains;
    }
    SpikeTrains out;
    out.reserve(observed.size());
    for (int k : observed) {
        if (k < 0 || static_cast<std::size_t>(k) >= trains.size()) {
            throw ArgumentError("observe: neuron index out of range");
        }
        out.push_back(trains[static_cast<std::size_t>(k)]);
    }
    return out;
}

namespace {

std::vector<std::size_t> spike_counts(const SpikeTrains& trains) {
    std::vector<std::size_t> out;
    out.reserve(trains.size());
    for (const auto& t : trains) {
        out.push_back(t.size());
    }
    return out;
}

std::size_t count_distance(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                           CountMatching mode) {
    long long total = 0;
    long long l1 = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const long long d = static_cast<long long>(a[k]) - static_cast<long long>(b[k]);
        total += d;
        l1 += d < 0 ? -d : d;
    }
    return static_cast<std::size_t>(mode == CountMatching::total ? (total < 0 ? -total : total) : l1);
}

void validate_loss_inputs(std::span<const SpikeTrains> data, std::size_t batch,
                          const LossConfig& cfg) {
    validate_kernel_config(cfg.kernel);
    if (batch < 2 || data.size() < 2) {
        throw ArgumentError("loss: data and generated batches need at least two paths");
    }
    if (!(cfg.T > cfg.sim.t0)) {
        throw ArgumentError("loss: horizon must exceed the start time");
    }
    if (cfg.matching == CountMatching::exact && !(cfg.horizon_factor >= 1.0)) {
        throw ArgumentError("loss: horizon_factor must be at least 1");
    }
}

/// Data path paired with each generated path (identity order when matching is off).
std::vector<std::size_t> reference_indices(std::span<const SpikeTrains> data,
                                           const std::vector<SpikeTrains>& generated,
                                           const LossConfig& cfg) {
    std::vector<std::size_t> out;
    if (cfg.matching == CountMatching::off) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            out.push_back(i);
        }
        return out;
    }
    if (cfg.matching == CountMatching::exact) {
        for (std::size_t j = 0; j < generated.size(); ++j) {
            out.push_back(j % data.size());
        }
        return out;
    }
    std::vector<std::vector<std::size_t>> dc;
    for (const auto& d : data) {
        dc.push_back(spike_counts(observe(d, cfg.observed)));
    }
    std::vector<std::size_t> ties;
    for (std::size_t j = 0; j < generated.size(); ++j) {
        const auto gc = spike_counts(generated[j]);
        std::size_t best = std::numeric_limits<std::size_t>::max();
        ties.clear();
        for (std::size_t i = 0; i < dc.size(); ++i) {
            const std::size_t diff = count_distance(dc[i], gc, cfg.matching);
            if (diff < best) {
                best = diff;
                ties.clear();
            }
            if (diff == best) {
                ties.push_back(i);
            }
        }
        out.push_back(ties[j % ties.size()]);
    }
    return out;
}

/// Positions (within the observed trains) forming each signature path.
std::vector<std::vector<std::size_t>> path_groups(const LossConfig& cfg, std::size_t observed) {
    std::vector<std::vector<std::size_t>> groups;
    if (cfg.grouping == PathGrouping::joint) {
        groups.emplace_back();
        for (std::size_t o = 0; o < observed; ++o) {
            groups.back().push_back(o);
        }
    } else {
        for (std::size_t o = 0; o < observed; ++o) {
            groups.push_back({o});
        }
    }
    return groups;
}

SpikeTrains select(const SpikeTrains& trains, const std::vector<std::size_t>& group) {
    SpikeTrains out;
    out.reserve(group.size());
    for (std::size_t o : group) {
        out.push_back(trains[o]);
    }
    return out;
}

/// Signatures of every group of every batch entry: sigs[g][b].
std::vector<std::vector<TruncatedSignature>>
group_signatures(const std::vector<SpikeTrains>& trains, const std::vector<double>& ends,
                 const std::vector<std::vector<std::size_t>>& groups, const KernelConfig& kernel) {
    std::vector<std::vector<TruncatedSignature>> out(groups.size(),
                                                     std::vector<TruncatedSignature>(trains.size()));
    detail::parallel_for(trains.size(), [&](std::size_t b) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
            out[g][b] = path_signature(spikes_to_path(select(trains[b], groups[g]), ends[b]), kernel);
        }
    });
    return out;
}

/// Reference signatures aligned with the generated batch.
std::vector<std::vector<TruncatedSignature>>
reference_signatures(std::span<const SpikeTrains> data, const std::vector<SpikeTrains>& generated,
                     const std::vector<std::vector<std::size_t>>& groups, const LossConfig& cfg) {
    std::vector<SpikeTrains> observed(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        observed[i] = observe(data[i], cfg.observed);
    }
    const auto sigs =
        group_signatures(observed, std::vector<double>(data.size(), cfg.T), groups, cfg.kernel);
    const auto idx = reference_indices(data, generated, cfg);
    std::vector<std::vector<TruncatedSignature>> out(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t i : idx) {
            out[g].push_back(sigs[g][i]);
        }
    }
    return out;
}

std::vector<int> observed_neurons(const LossConfig& cfg, int K) {
    std::vector<int> observed = cfg.observed;
    if (observed.empty()) {
        for (int k = 0; k < K; ++k) {
            observed.push_back(k);
        }
    }
    return observed;
}

struct GeneratedSample {
    SpikeTrains trains;
    /// Spike-time gradient rows aligned with `trains` (empty without sensitivities).
    std::vector<std::vector<RowVector>> grads;
    double end = 0.0;
    std::size_t events = 0;
};

using TargetCounts = std::optional<std::vector<std::size_t>>;

/// Simulates sample b of the batch keyed by `seed`. With target counts (one
/// per observed neuron) the sample runs on the extended horizon until every
/// observed neuron reached its count.
GeneratedSample generate_sample(const SlifSystem& system, const std::vector<int>& observed,
                                const LossConfig& cfg, std::uint64_t seed, std::size_t b,
                                const TargetCounts& target,
                                const SensitivityOptions* sensitivity) {
    const std::uint64_t sample = sample_seed(seed, b);
    SimulationOptions sim = cfg.sim;
    sim.record_segments = false;
    const double horizon = target ? cfg.sim.t0 + (cfg.T - cfg.sim.t0) * cfg.horizon_factor : cfg.T;

    GeneratedSample out;
    out.trains.resize(observed.size());
    out.end = cfg.T;
    if (sensitivity) {
        out.grads.resize(observed.size());
    }
    std::size_t wanted = 0;
    SolverOptions solver = sensitivity ? sensitivity->solver : solver_options(system, sim);
    if (target) {
        solver.stop_counts.assign(static_cast<std::size_t>(system.params.K), 0);
        for (std::size_t o = 0; o < observed.size(); ++o) {
            solver.stop_counts[static_cast<std::size_t>(observed[o])] = (*target)[o];
            wanted += (*target)[o];
        }
        if (wanted == 0) {
            return out;
        }
    }

    EventSolution sol;
    std::vector<RowVector> time_grads;
    try {
        const SampleRandomness rnd = sample_randomness(seed, b);
        const BrownianDriver driver = make_driver(system, horizon, sim, rnd.driver_seed);
        const Vector y0 = initial_state(system, rnd.initial_seed);
        const UniformStream uniforms(rnd.transition_seed);
        if (sensitivity) {
            SensitivityOptions sopt = *sensitivity;
            sopt.solver = solver;
            SensitivityResult res = forward_sensitivity(y0, system.fields, system.specs, driver,
                                                        sim.max_events, sim.t0, sim.dt, horizon,
                                                        uniforms, sopt);
            sol = std::move(res.solution);
            time_grads = std::move(res.sensitivity.event_time_grads);
        } else {
            sol = event_sde_solve(y0, system.fields, system.specs, driver, sim.max_events, sim.t0,
                                  sim.dt, horizon, uniforms, solver);
        }
    } catch (const Error& e) {
        throw TrainingError(e.what(), sample);
    }
    out.events = sol.event_count();

    std::size_t kept = 0;
    double last = cfg.sim.t0;
    for (std::size_t n = 0; n < sol.event_count(); ++n) {
        const auto it = std::find(observed.begin(), observed.end(), sol.event_labels[n]);
        if (it == observed.end()) {
            continue;
        }
        const auto o = static_cast<std::size_t>(it - observed.begin());
        if (target && out.trains[o].size() >= (*target)[o]) {
            continue;
        }
        out.trains[o].push_back(sol.event_times[n]);
        if (sensitivity) {
            out.grads[o].push_back(time_grads[n]);
        }
        last = sol.event_times[n];
        ++kept;
    }

    const bool capped = out.events >= sim.max_events;
    if (target) {
        if (kept < wanted && capped) {
            throw TrainingError("event count reached the cap of " + std::to_string(sim.max_events) +
                                    " events before the matched spike count",
                                sample);
        }
        out.end = kept == wanted ? std::max(cfg.T, last) : horizon;
    } else if (capped && !cfg.stop_at_max_events) {
        throw TrainingError("event count reached the cap of " + std::to_string(sim.max_events) +
                                " events",
                            sample);
    }
    return out;
}

std::vector<TargetCounts> target_counts(std::span<const SpikeTrains> data, std::size_t batch,
                                        const LossConfig& cfg) {
    std::vector<TargetCounts> out(batch);
    if (cfg.matching != CountMatching::exact) {
        return out;
    }
    for (std::size_t b = 0; b < batch; ++b) {
        out[b] = spike_counts(observe(data[b % data.size()], cfg.observed));
    }
    return out;
}

} // namespace

LossGradient loss_and_gradient(const NetworkParams& params,
                               std::span<const TrainableParam> trainable,
                               std::span<const SpikeTrains> data, std::size_t batch,
                               std::uint64_t seed, const LossConfig& cfg) {
    validate_loss_inputs(data, batch, cfg);
    const SlifSystem system =
        build_slif_network(params, std::vector<TrainableParam>(trainable.begin(), trainable.end()));
    const auto P = static_cast<Eigen::Index>(trainable.size());
    const std::vector<int> observed = observed_neurons(cfg, params.K);
    const auto targets = target_counts(data, batch, cfg);

    SimulationOptions sim = cfg.sim;
    sim.record_segments = false;
    SensitivityOptions sopt;
    sopt.solver = solver_options(system, sim);
    sopt.seed = system.seed();
    sopt.check_assumptions = false;

    std::vector<GeneratedSample> gen(batch);
    detail::parallel_for(batch, [&](std::size_t b) {
        gen[b] = generate_sample(system, observed, cfg, seed, b, targets[b], &sopt);
    });

    std::vector<SpikeTrains> trains(batch);
    std::vector<double> ends(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        trains[b] = gen[b].trains;
        ends[b] = gen[b].end;
    }
    const auto groups = path_groups(cfg, observed.size());
    const auto gen_sigs = group_signatures(trains, ends, groups, cfg.kernel);
    const auto ref = reference_signatures(data, trains, groups, cfg);

    LossGradient out;
    std::vector<std::vector<TruncatedSignature>> Z(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        out.loss += mmd_unbiased(ref[g], gen_sigs[g]);
        Z[g] = mmd_signature_gradients(ref[g], gen_sigs[g]);
    }

    std::vector<Vector> partial(batch, Vector::Zero(P));
    detail::parallel_for(batch, [&](std::size_t b) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const auto dtau =
                spike_time_gradient(select(trains[b], groups[g]), ends[b], Z[g][b], cfg.kernel);
            for (std::size_t i = 0; i < dtau.size(); ++i) {
                const std::size_t o = groups[g][i];
                for (std::size_t s = 0; s < dtau[i].size(); ++s) {
                    partial[b] += dtau[i][s] * gen[b].grads[o][s].transpose();
                }
            }
        }
    });
    out.gradient = Vector::Zero(P);
    for (std::size_t b = 0; b < batch; ++b) {
        out.gradient += partial[b];
        out.events += gen[b].events;
    }
    return out;
}

double loss_value(const NetworkParams& params, std::span<const SpikeTrains> data,
                  std::size_t batch, std::uint64_t seed, const LossConfig& cfg) {
    validate_loss_inputs(data, batch, cfg);
    const SlifSystem system = build_slif_network(params);
    const std::vector<int> observed = observed_neurons(cfg, params.K);
    const auto targets = target_counts(data, batch, cfg);

    std::vector<SpikeTrains> trains(batch);
    std::vector<double> ends(batch);
    detail::parallel_for(batch, [&](std::size_t b) {
        GeneratedSample g = generate_sample(system, observed, cfg, seed, b, targets[b], nullptr);
        trains[b] = std::move(g.trains);
        ends[b] = g.end;
    });
    const auto groups = path_groups(cfg, observed.size());
    const auto gen_sigs = group_signatures(trains, ends, groups, cfg.kernel);
    const auto ref = reference_signatures(data, trains, groups, cfg);
    double loss = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        loss += mmd_unbiased(ref[g], gen_sigs[g]);
    }
    return loss;
}

std::vector<double> mean_spike_times(std::span<const SpikeTrains> batch, int neuron,
                                     std::size_t count, double T) {
    if (batch.empty()) {
        throw ArgumentError("mean_spike_times: empty batch");
    }
    std::vector<double> out(count, 0.0);
    for (const auto& trains : batch) {
        if (neuron < 0 || static_cast<std::size_t>(neuron) >= trains.size()) {
            throw ArgumentError("mean_spike_times: neuron index out of range");
        }
        const auto& t = trains[static_cast<std::size_t>(neuron)];
        for (std::size_t n = 0; n < count; ++n) {
            out[n] += n < t.size() ? t[n] : T;
        }
    }
    for (double& v : out) {
        v /= static_cast<double>(batch.size());
    }
    return out;
}

double spike_time_mae(std::span<const SpikeTrains> a, std::span<const SpikeTrains> b, int neuron,
                      std::size_t count, double T) {
    if (count == 0) {
        throw ArgumentError("spike_time_mae: count must be positive");
    }
    const auto ma = mean_spike_times(a, neuron, count, T);
    const auto mb = mean_spike_times(b, neuron, count, T);
    double sum = 0.0;
    for (std::size_t n = 0; n < count; ++n) {
        sum += std::abs(ma[n] - mb[n]);
    }
    return sum / static_cast<double>(count);
}

} // namespace esde
