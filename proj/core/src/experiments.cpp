#include <cmath>
#include <limits>
#include <numeric>

#include "esde/errors.hpp"
#include "esde/random.hpp"
#include "esde/training.hpp"

namespace esde {

namespace {

LearningRateSchedule schedule_for(double lr, double lr0, double lr1, double switch_fraction,
                                  std::size_t steps) {
    if (lr >= 0.0) {
        return LearningRateSchedule::constant(lr);
    }
    if (!(switch_fraction >= 0.0 && switch_fraction <= 1.0)) {
        throw ArgumentError("switch_fraction must lie in [0, 1]");
    }
    const auto sw = static_cast<std::size_t>(std::llround(switch_fraction * static_cast<double>(steps)));
    return LearningRateSchedule::two_phase(lr0, lr1, sw);
}

std::vector<TruncatedSignature> signatures_of(const std::vector<SpikeTrains>& batch,
                                              const std::vector<int>& observed, double T,
                                              const KernelConfig& kernel) {
    std::vector<TruncatedSignature> out;
    out.reserve(batch.size());
    for (const auto& trains : batch) {
        out.push_back(path_signature(spikes_to_path(observe(trains, observed), T), kernel));
    }
    return out;
}

} // namespace

TrainRun experiment_input_current(const InputCurrentConfig& cfg) {
    if (cfg.sample_size < 2) {
        throw ArgumentError("experiment_input_current: sample_size must be at least 2");
    }
    if (!(cfg.init_high >= cfg.init_low)) {
        throw ArgumentError("experiment_input_current: empty initialisation interval");
    }
    NetworkParams base;
    base.K = 1;
    base.w = Matrix::Zero(1, 1);
    base.mu1 = cfg.mu;
    base.mu2 = 0.0;
    base.sigma1 = cfg.sigma;
    base.sigma2 = 0.0;
    base.v_reset = cfg.v_reset;
    base.alpha = cfg.alpha;
    base.psi = cfg.psi;
    base.beta = cfg.beta;
    base.v0 = Vector::Zero(1);
    base.i0 = Vector::Constant(1, cfg.true_c);

    LossConfig lc;
    lc.kernel.depth = cfg.depth;
    lc.T = cfg.T;
    lc.sim.dt = cfg.dt;
    lc.sim.scheme = cfg.scheme;
    lc.sim.max_events = cfg.max_spikes;
    lc.stop_at_max_events = true;

    const std::vector<TrainableParam> trainable{TrainableParam::current(0)};

    TrainRun run;
    run.experiment = "input_current";
    run.seed = cfg.seed;
    run.param_names = {trainable[0].name()};
    run.true_params = Vector::Constant(1, cfg.true_c);

    const auto data =
        simulate_spike_trains(base, cfg.T, lc.sim, derive_seed(cfg.seed, "data"), cfg.sample_size);
    const auto test =
        simulate_spike_trains(base, cfg.T, lc.sim, derive_seed(cfg.seed, "test"), cfg.sample_size);

    Vector theta(1);
    theta(0) = cfg.init_low + (cfg.init_high - cfg.init_low) *
                                  counter_uniform(derive_seed(cfg.seed, "init"), streams::generic, 0);
    OptimizerState opt =
        make_rmsprop(1, schedule_for(cfg.lr, cfg.lr0, cfg.lr1, cfg.switch_fraction, cfg.steps),
                     cfg.rho, cfg.momentum);
    const std::uint64_t gen_seed = derive_seed(cfg.seed, "generate");
    const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");

    for (std::size_t i = 0; i <= cfg.steps; ++i) {
        const NetworkParams p = with_parameters(base, trainable, theta);
        const LossGradient lg =
            loss_and_gradient(p, trainable, data, cfg.sample_size, sample_seed(gen_seed, i), lc);
        const auto gen = simulate_spike_trains(p, cfg.T, lc.sim, eval_seed, cfg.sample_size);

        TrainRecord rec;
        rec.step = i;
        rec.loss = lg.loss;
        rec.test_metric = spike_time_mae(gen, test, 0, cfg.max_spikes, cfg.T);
        rec.param_error = std::abs(theta(0) - cfg.true_c);
        rec.params = theta;
        run.records.push_back(std::move(rec));

        if (i < cfg.steps) {
            rmsprop_step(opt, theta, lg.gradient);
        }
    }
    return run;
}

Matrix feedforward_mask(const std::vector<int>& layers) {
    if (layers.size() < 2) {
        throw ArgumentError("feedforward_mask: need at least two layers");
    }
    int K = 0;
    for (int n : layers) {
        if (n < 1) {
            throw ArgumentError("feedforward_mask: layer sizes must be positive");
        }
        K += n;
    }
    Matrix mask = Matrix::Zero(K, K);
    int offset = 0;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const int next = offset + layers[l];
        mask.block(offset, next, layers[l], layers[l + 1]).setOnes();
        offset = next;
    }
    return mask;
}

Matrix sample_feedforward_weights(const std::vector<int>& layers, std::uint64_t seed) {
    Matrix w = feedforward_mask(layers);
    int offset = 0;
    std::uint64_t counter = 0;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const int next = offset + layers[l];
        const double scale = 3.0 / static_cast<double>(layers[l]);
        for (int r = 0; r < layers[l]; ++r) {
            for (int c = 0; c < layers[l + 1]; ++c) {
                const double u = counter_uniform(seed, streams::generic, counter++);
                w(offset + r, next + c) = (0.5 + u) * scale;
            }
        }
        offset = next;
    }
    return w;
}

NetworkParams feedforward_network(const WeightsConfig& cfg, const Matrix& w) {
    const Matrix mask = feedforward_mask(cfg.layers);
    if (w.rows() != mask.rows() || w.cols() != mask.cols()) {
        throw ArgumentError("feedforward_network: weight shape does not match the layers");
    }
    const auto K = static_cast<int>(mask.rows());
    NetworkParams p;
    p.K = K;
    p.w = w;
    p.mask = mask;
    p.mu1 = cfg.mu1;
    p.mu2 = cfg.mu2;
    p.sigma1 = cfg.sigma1;
    p.sigma2 = cfg.sigma2;
    p.v_reset = cfg.v_reset;
    p.alpha = cfg.alpha;
    p.psi = cfg.psi;
    p.beta = cfg.beta;
    p.v0 = Vector::Zero(K);
    p.i0 = Vector::Zero(K);
    p.input_drive = Vector::Zero(K);
    for (int k = 0; k < cfg.layers.front(); ++k) {
        p.i0(k) = cfg.input_current;
        p.input_drive(k) = cfg.input_drive;
    }
    return p;
}

TrainRun experiment_weights(const WeightsConfig& cfg) {
    if (cfg.batch < 2 || cfg.sample_size < cfg.batch || cfg.test_size < 2) {
        throw ArgumentError("experiment_weights: need 2 <= batch <= sample_size and test_size >= 2");
    }
    const Matrix mask = feedforward_mask(cfg.layers);
    const auto K = static_cast<int>(mask.rows());
    for (int k : cfg.observed) {
        if (k < 0 || k >= K) {
            throw ArgumentError("experiment_weights: observed neuron out of range");
        }
    }
    const Matrix w_true = sample_feedforward_weights(cfg.layers, derive_seed(cfg.seed, "true-weights"));
    const Matrix w_init = sample_feedforward_weights(cfg.layers, derive_seed(cfg.seed, "init-weights"));

    std::vector<TrainableParam> trainable;
    for (int f = 0; f < K; ++f) {
        for (int t = 0; t < K; ++t) {
            if (mask(f, t) != 0.0) {
                trainable.push_back(TrainableParam::weight(f, t));
            }
        }
    }
    const auto P = static_cast<Eigen::Index>(trainable.size());

    LossConfig lc;
    lc.kernel.depth = cfg.depth;
    lc.T = cfg.T;
    lc.sim.dt = cfg.dt;
    lc.sim.scheme = cfg.scheme;
    lc.sim.max_events = cfg.max_events;
    lc.sim.max_refinements = cfg.max_refinements;
    lc.observed = cfg.observed;
    lc.matching = cfg.matching;
    lc.grouping = cfg.grouping;

    const NetworkParams truth = feedforward_network(cfg, w_true);
    TrainRun run;
    run.experiment = "weights";
    run.seed = cfg.seed;
    run.true_params = build_slif_network(truth, trainable).parameter_values();
    for (const auto& t : trainable) {
        run.param_names.push_back(t.name());
    }

    const auto data =
        simulate_spike_trains(truth, cfg.T, lc.sim, derive_seed(cfg.seed, "data"), cfg.sample_size);
    const auto test =
        simulate_spike_trains(truth, cfg.T, lc.sim, derive_seed(cfg.seed, "test"), cfg.test_size);
    const auto test_sigs = signatures_of(test, cfg.observed, cfg.T, lc.kernel);

    const NetworkParams base = feedforward_network(cfg, w_init);
    Vector theta = build_slif_network(base, trainable).parameter_values();
    OptimizerState opt =
        make_rmsprop(static_cast<std::size_t>(P),
                     schedule_for(cfg.lr, cfg.lr0, cfg.lr1, cfg.switch_fraction, cfg.steps), cfg.rho,
                     cfg.momentum);
    const std::uint64_t gen_seed = derive_seed(cfg.seed, "generate");
    const std::uint64_t eval_seed = derive_seed(cfg.seed, "eval");
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch");

    // Without-replacement batches: position p of the concatenated epoch
    // permutations selects data[perm_{p / D}[p % D]].
    const std::size_t D = cfg.sample_size;
    std::vector<std::size_t> perm(D);
    std::size_t perm_epoch = std::numeric_limits<std::size_t>::max();
    auto data_index = [&](std::size_t pos) {
        const std::size_t epoch = pos / D;
        if (epoch != perm_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            const std::uint64_t s = sample_seed(epoch_seed, epoch);
            for (std::size_t i = D - 1; i > 0; --i) {
                const double u = counter_uniform(s, streams::generic, i);
                const auto j = std::min(static_cast<std::size_t>(u * static_cast<double>(i + 1)), i);
                std::swap(perm[i], perm[j]);
            }
            perm_epoch = epoch;
        }
        return perm[pos % D];
    };

    std::vector<SpikeTrains> batch(cfg.batch);
    for (std::size_t i = 0; i <= cfg.steps; ++i) {
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            batch[b] = data[data_index(i * cfg.batch + b)];
        }
        const NetworkParams p = with_parameters(base, trainable, theta);
        const LossGradient lg =
            loss_and_gradient(p, trainable, batch, cfg.batch, sample_seed(gen_seed, i), lc);

        TrainRecord rec;
        rec.step = i;
        rec.loss = lg.loss;
        rec.test_metric = std::numeric_limits<double>::quiet_NaN();
        if (cfg.eval_every > 0 && (i % cfg.eval_every == 0 || i == cfg.steps)) {
            const auto gen = simulate_spike_trains(p, cfg.T, lc.sim, eval_seed, cfg.test_size);
            rec.test_metric = mmd_unbiased(test_sigs, signatures_of(gen, cfg.observed, cfg.T, lc.kernel));
        }
        rec.param_error = (theta - run.true_params).cwiseAbs().mean();
        rec.params = theta;
        run.records.push_back(std::move(rec));

        if (i < cfg.steps) {
            rmsprop_step(opt, theta, lg.gradient);
        }
    }
    return run;
}

} // namespace esde
