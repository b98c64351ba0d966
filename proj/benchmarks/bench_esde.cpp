#include <benchmark/benchmark.h>

#include <esde/random.hpp>
#include <esde/sensitivity.hpp>
#include <esde/signature.hpp>
#include <esde/ssnn.hpp>
#include <esde/training.hpp>

using namespace esde;

namespace {

NetworkParams single_neuron(double sigma) {
    NetworkParams p;
    p.K = 1;
    p.w = Matrix::Zero(1, 1);
    p.sigma1 = sigma;
    p.i0 = Vector::Constant(1, 1.5);
    p.v0 = Vector::Zero(1);
    return p;
}

NetworkParams network() {
    const WeightsConfig cfg;
    return feedforward_network(cfg, sample_feedforward_weights(cfg.layers, 1));
}

std::vector<std::vector<double>> regular_train(int spikes) {
    std::vector<double> t;
    for (int i = 0; i < spikes; ++i) {
        t.push_back((i + 0.5) / spikes);
    }
    return {t, t};
}

} // namespace

static void BM_SimulateNeuron(benchmark::State& state) {
    const SlifSystem sys = build_slif_network(single_neuron(0.1));
    SimulationOptions sim;
    sim.record_segments = false;
    std::uint64_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_sample(sys, 3.0, sim, sample_randomness(1, i++)));
    }
}
BENCHMARK(BM_SimulateNeuron);

static void BM_SimulateNetwork(benchmark::State& state) {
    const SlifSystem sys = build_slif_network(network());
    SimulationOptions sim;
    sim.record_segments = false;
    std::uint64_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_sample(sys, 1.0, sim, sample_randomness(1, i++)));
    }
}
BENCHMARK(BM_SimulateNetwork);

static void BM_ForwardSensitivityNetwork(benchmark::State& state) {
    const NetworkParams p = network();
    std::vector<TrainableParam> trainable;
    const Matrix mask = synapse_mask(p);
    for (int f = 0; f < p.K; ++f) {
        for (int t = 0; t < p.K; ++t) {
            if (mask(f, t) != 0.0) {
                trainable.push_back(TrainableParam::weight(f, t));
            }
        }
    }
    const SlifSystem sys = build_slif_network(p, trainable);
    SimulationOptions sim;
    std::uint64_t i = 0;
    for (auto _ : state) {
        const SampleRandomness rnd = sample_randomness(2, i++);
        SensitivityOptions so;
        so.solver = solver_options(sys, sim);
        so.seed = sys.seed();
        so.check_assumptions = false;
        benchmark::DoNotOptimize(forward_sensitivity(initial_state(sys, rnd.initial_seed), sys.fields, sys.specs,
                                                     make_driver(sys, 1.0, sim, rnd.driver_seed), sim.max_events,
                                                     0.0, sim.dt, 1.0, UniformStream(rnd.transition_seed), so));
    }
}
BENCHMARK(BM_ForwardSensitivityNetwork);

static void BM_PathSignature(benchmark::State& state) {
    KernelConfig cfg;
    cfg.depth = static_cast<int>(state.range(0));
    const CadlagPath path = spikes_to_path(regular_train(static_cast<int>(state.range(1))), 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(path_signature(path, cfg));
    }
}
BENCHMARK(BM_PathSignature)->Args({3, 10})->Args({3, 100})->Args({4, 100});

static void BM_SpikeTimeGradient(benchmark::State& state) {
    KernelConfig cfg;
    const auto trains = regular_train(static_cast<int>(state.range(0)));
    TruncatedSignature Z(3, cfg.depth);
    for (std::size_t i = 0; i < Z.size(); ++i) {
        Z.data()[i] = 1.0 / static_cast<double>(i + 1);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(spike_time_gradient(trains, 1.0, Z, cfg));
    }
}
BENCHMARK(BM_SpikeTimeGradient)->Arg(10)->Arg(100);

static void BM_MmdUnbiased(benchmark::State& state) {
    KernelConfig cfg;
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = simulate_spike_trains(network(), 1.0, {}, 3, n);
    const auto y = simulate_spike_trains(network(), 1.0, {}, 4, n);
    std::vector<TruncatedSignature> sx;
    std::vector<TruncatedSignature> sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.push_back(path_signature(spikes_to_path(observe(x[i], {4, 5}), 1.0), cfg));
        sy.push_back(path_signature(spikes_to_path(observe(y[i], {4, 5}), 1.0), cfg));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(mmd_unbiased(sx, sy));
    }
}
BENCHMARK(BM_MmdUnbiased)->Arg(32)->Arg(128);

static void BM_LossAndGradientInputCurrent(benchmark::State& state) {
    const NetworkParams p = single_neuron(0.1);
    LossConfig lc;
    lc.T = 3.0;
    lc.sim.max_events = 3;
    lc.stop_at_max_events = true;
    const auto data = simulate_spike_trains(p, lc.T, lc.sim, 5, 64);
    const std::vector<TrainableParam> trainable{TrainableParam::current(0)};
    std::uint64_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss_and_gradient(p, trainable, data, 64, i++, lc));
    }
}
BENCHMARK(BM_LossAndGradientInputCurrent)->Unit(benchmark::kMillisecond);

static void BM_OnlineSensitivity(benchmark::State& state) {
    NetworkParams p;
    p.K = 2;
    p.w = Matrix::Zero(2, 2);
    p.w(0, 1) = 1.2;
    p.mu2 = 5.0;
    p.i0 = (Vector(2) << 3.0, 1.0).finished();
    p.input_drive = (Vector(2) << 15.0, 0.0).finished();
    p.firing = FiringMode::threshold;
    const SlifSystem sys = build_slif_network(p);
    SimulationOptions sim;
    sim.record_segments = true;
    const EventSolution sol = simulate_sample(sys, 1.0, sim, sample_randomness(6, 0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(online_sensitivity(p, sol, 0, 1));
    }
}
BENCHMARK(BM_OnlineSensitivity);
BENCHMARK_MAIN();
