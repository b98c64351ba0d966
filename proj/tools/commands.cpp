#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <esde/errors.hpp>
#include <esde/random.hpp>
#include <esde/sensitivity.hpp>
#include <esde/signature.hpp>
#include <esde/training.hpp>

#include "io.hpp"

namespace esde::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector sized(Config& cfg, const std::string& key, int K) {
    const auto v = cfg.get_doubles(key, {});
    if (!v.empty() && static_cast<int>(v.size()) != K) {
        throw ConfigError(key + ": expected " + std::to_string(K) + " values, got " +
                          std::to_string(v.size()));
    }
    return to_vector(v);
}

Matrix square(Config& cfg, const std::string& key, int K) {
    const auto v = cfg.get_doubles(key, {});
    if (v.empty()) {
        return {};
    }
    if (static_cast<int>(v.size()) != K * K) {
        throw ConfigError(key + ": expected " + std::to_string(K * K) +
                          " row-major values, got " + std::to_string(v.size()));
    }
    Matrix m(K, K);
    for (int r = 0; r < K; ++r) {
        for (int c = 0; c < K; ++c) {
            m(r, c) = v[static_cast<std::size_t>(r * K + c)];
        }
    }
    return m;
}

template <class F>
auto convert(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ArgumentError& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

/// Resolves every key, writes the echo and creates the output directory.
void prepare(const Config& cfg, const fs::path& out) {
    cfg.finish();
    fs::create_directories(out);
    write_text(out / "config.ini", cfg.resolved_text());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json assumptions_json(const AssumptionReport& r) {
    return {{"pass", r.pass()},
            {"commutation_ok", r.commutation_ok},
            {"orthogonality_ok", r.orthogonality_ok},
            {"transversality_ok", r.transversality_ok},
            {"max_commutation", r.max_commutation()},
            {"max_orthogonality", r.max_orthogonality()},
            {"events_checked", r.records.size()}};
}

void merge(AssumptionReport& into, const AssumptionReport& r) {
    into.records.insert(into.records.end(), r.records.begin(), r.records.end());
    into.commutation_ok = into.commutation_ok && r.commutation_ok;
    into.orthogonality_ok = into.orthogonality_ok && r.orthogonality_ok;
    into.transversality_ok = into.transversality_ok && r.transversality_ok;
}

Normalization normalization_from_string(const std::string& name) {
    if (name == "none") {
        return Normalization::none;
    }
    if (name == "robust") {
        return Normalization::robust;
    }
    throw ConfigError("kernel.normalization: expected none or robust, got '" + name + "'");
}

KernelConfig read_kernel(Config& cfg, const std::string& section) {
    KernelConfig k;
    k.depth = static_cast<int>(cfg.get_int(section + ".depth", k.depth));
    k.normalization = normalization_from_string(cfg.get_string(section + ".normalization", "none"));
    k.R = cfg.get_double(section + ".R", k.R);
    k.time_augment = cfg.get_bool(section + ".time_augment", k.time_augment);
    k.marcus_fraction = cfg.get_double(section + ".marcus_fraction", k.marcus_fraction);
    return k;
}

} // namespace

NetworkParams read_model(Config& cfg) {
    NetworkParams p;
    p.K = static_cast<int>(cfg.get_int("model.K", 1));
    if (p.K < 1) {
        throw ConfigError("model.K: must be at least 1");
    }
    p.w = square(cfg, "model.w", p.K);
    if (p.w.size() == 0) {
        p.w = Matrix::Zero(p.K, p.K);
    }
    p.mask = square(cfg, "model.mask", p.K);
    p.mu1 = cfg.get_double("model.mu1", p.mu1);
    p.mu2 = cfg.get_double("model.mu2", p.mu2);
    p.sigma1 = cfg.get_double("model.sigma1", p.sigma1);
    p.sigma2 = cfg.get_double("model.sigma2", p.sigma2);
    p.v_reset = cfg.get_double("model.v_reset", p.v_reset);
    p.alpha = cfg.get_double("model.alpha", p.alpha);
    p.psi = cfg.get_double("model.psi", p.psi);
    p.beta = cfg.get_double("model.beta", p.beta);
    p.lambda_cap = cfg.get_double("model.lambda_cap", p.lambda_cap);
    p.v0 = sized(cfg, "model.v0", p.K);
    p.i0 = sized(cfg, "model.i0", p.K);
    p.input_drive = sized(cfg, "model.input_drive", p.K);
    const std::string firing = cfg.get_string("model.firing", "stochastic");
    if (firing == "stochastic") {
        p.firing = FiringMode::stochastic;
    } else if (firing == "threshold") {
        p.firing = FiringMode::threshold;
    } else {
        throw ConfigError("model.firing: expected stochastic or threshold, got '" + firing + "'");
    }
    const std::string reset = cfg.get_string("model.reset", "subtract");
    if (reset == "subtract") {
        p.reset = ResetMode::subtract;
    } else if (reset == "to_zero") {
        p.reset = ResetMode::to_zero;
    } else {
        throw ConfigError("model.reset: expected subtract or to_zero, got '" + reset + "'");
    }
    convert("model", [&] {
        validate_params(p);
        return 0;
    });
    return p;
}

SimulationOptions read_solver(Config& cfg) {
    SimulationOptions s;
    s.dt = cfg.get_double("solver.dt", s.dt);
    const std::string scheme = cfg.get_string("solver.scheme", to_string(s.scheme));
    s.scheme = convert("solver.scheme", [&] { return scheme_from_string(scheme); });
    s.max_events = cfg.get_uint("solver.max_events", s.max_events);
    s.max_refinements = static_cast<int>(cfg.get_int("solver.max_refinements", s.max_refinements));
    s.enforce_refractory = cfg.get_bool("solver.enforce_refractory", s.enforce_refractory);
    if (!(s.dt > 0.0)) {
        throw ConfigError("solver.dt: must be positive");
    }
    return s;
}

TrainableParam parse_trainable(const std::string& name) {
    static const std::regex pattern(R"(^(i0|v0)\[(\d+)\]$|^w\[(\d+),(\d+)\]$)");
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) {
        throw ConfigError("unknown parameter '" + name + "' (expected i0[k], v0[k] or w[j,k])");
    }
    if (m[1].matched) {
        const int k = std::stoi(m[2]);
        return m[1] == "i0" ? TrainableParam::current(k) : TrainableParam::potential(k);
    }
    return TrainableParam::weight(std::stoi(m[3]), std::stoi(m[4]));
}

int cmd_simulate(Config& cfg, const fs::path& out) {
    const std::uint64_t seed = cfg.get_uint("run.seed", 0);
    const double T = cfg.get_double("run.T", 1.0);
    const std::size_t samples = cfg.get_uint("run.samples", 10);
    const std::size_t checked = cfg.get_uint("simulate.assumption_samples", 1);
    const NetworkParams params = read_model(cfg);
    const SimulationOptions sim = read_solver(cfg);
    prepare(cfg, out);

    const auto batch = simulate_spike_trains(params, T, sim, seed, samples);
    write_spike_csv(out / "spikes.csv", batch);

    std::vector<std::size_t> counts;
    std::size_t total = 0;
    double min_gap = std::numeric_limits<double>::infinity();
    for (const auto& trains : batch) {
        std::size_t n = 0;
        for (const auto& t : trains) {
            n += t.size();
            for (std::size_t i = 1; i < t.size(); ++i) {
                min_gap = std::min(min_gap, t[i] - t[i - 1]);
            }
        }
        counts.push_back(n);
        total += n;
    }
    const double bound = refractory_bound(params);

    const SlifSystem system = build_slif_network(params);
    AssumptionReport report;
    for (std::size_t b = 0; b < std::min(checked, samples); ++b) {
        const EventSolution sol = simulate_sample(system, T, sim, sample_randomness(seed, b));
        merge(report, check_assumptions(sol, system.fields, system.specs));
    }

    json summary{{"seed", seed},
                 {"T", T},
                 {"samples", samples},
                 {"neurons", params.K},
                 {"total_events", total},
                 {"events_per_sample", counts},
                 {"min_gap", std::isfinite(min_gap) ? json(min_gap) : json(nullptr)},
                 {"refractory_bound", bound},
                 {"refractory_ok", params.firing != FiringMode::stochastic || !std::isfinite(min_gap) ||
                                       min_gap >= bound},
                 {"assumptions", assumptions_json(report)}};
    write_json(out / "summary.json", summary);
    return exit_ok;
}

int cmd_gradcheck(Config& cfg, const fs::path& out) {
    const std::uint64_t seed = cfg.get_uint("run.seed", 0);
    const double T = cfg.get_double("run.T", 1.0);
    const std::size_t samples = cfg.get_uint("run.samples", 5);
    const auto names = cfg.get_words("gradcheck.parameters", {"i0[0]", "v0[0]"});
    const std::size_t events = cfg.get_uint("gradcheck.events", 3);
    const bool final_state = cfg.get_bool("gradcheck.final_state", true);
    const double rtol = cfg.get_double("gradcheck.rtol", 1e-3);
    const double atol = cfg.get_double("gradcheck.atol", 1e-8);
    const double h = cfg.get_double("gradcheck.h", 1e-6);
    const double max_fraction = cfg.get_double("gradcheck.max_failure_fraction", 0.0);
    const NetworkParams params = read_model(cfg);
    const SimulationOptions sim = read_solver(cfg);
    std::vector<TrainableParam> trainable;
    for (const auto& n : names) {
        trainable.push_back(parse_trainable(n));
    }
    if (trainable.empty()) {
        throw ConfigError("gradcheck.parameters: name at least one parameter");
    }
    prepare(cfg, out);

    const SlifSystem system = convert("gradcheck.parameters", [&] {
        return build_slif_network(params, trainable);
    });
    SimulationOptions tight = sim;
    tight.record_segments = false;
    const SolverOptions sopt = solver_options(system, tight);

    struct Output {
        std::string name;
        OutputSelector select;
        RowVector grad;
    };
    json entries = json::array();
    std::size_t checked = 0;
    std::size_t failed = 0;
    std::size_t boundaries = 0;
    AssumptionReport assumptions;
    for (std::size_t b = 0; b < samples; ++b) {
        const SampleRandomness rnd = sample_randomness(seed, b);
        const BrownianDriver driver = make_driver(system, T, tight, rnd.driver_seed);
        const Vector y0 = initial_state(system, rnd.initial_seed);
        const UniformStream uniforms(rnd.transition_seed);
        SensitivityOptions so;
        so.solver = sopt;
        so.seed = system.seed();
        const SensitivityResult res = forward_sensitivity(y0, system.fields, system.specs, driver,
                                                          sim.max_events, sim.t0, sim.dt, T,
                                                          uniforms, so);
        if (res.assumptions) {
            merge(assumptions, *res.assumptions);
        }

        std::vector<Output> outputs;
        for (std::size_t n = 0; n < std::min(events, res.solution.event_count()); ++n) {
            outputs.push_back({"tau[" + std::to_string(n + 1) + "]", select_event_time(n),
                               res.sensitivity.event_time_grads[n]});
        }
        if (final_state) {
            for (int k = 0; k < params.K; ++k) {
                const Eigen::Index row = SlifSystem::v_index(k);
                outputs.push_back({"v_T[" + std::to_string(k) + "]", select_final_state(row),
                                   res.sensitivity.jac_state.row(row)});
            }
        }
        for (const auto& o : outputs) {
            RowVector fd;
            bool boundary = false;
            try {
                fd = finite_difference_oracle(y0, system.fields, system.specs, driver, uniforms,
                                              sim.max_events, sim.t0, sim.dt, T, o.select, h, sopt,
                                              system.seed_index);
            } catch (const NonDifferentiableError&) {
                boundary = true;
                ++boundaries;
            }
            for (std::size_t p = 0; p < trainable.size(); ++p) {
                json e{{"sample", b}, {"output", o.name}, {"parameter", names[p]}};
                const double g = o.grad(static_cast<Eigen::Index>(p));
                e["sensitivity"] = g;
                if (boundary) {
                    e["boundary"] = true;
                    entries.push_back(e);
                    continue;
                }
                const double ref = fd(static_cast<Eigen::Index>(p));
                const double err = std::abs(g - ref);
                const double rel = err / std::max(std::abs(ref), std::numeric_limits<double>::min());
                const bool pass = err <= rtol * std::abs(ref) || err <= atol;
                e["finite_difference"] = ref;
                e["rel_error"] = rel;
                e["pass"] = pass;
                entries.push_back(e);
                ++checked;
                failed += pass ? 0 : 1;
            }
        }
    }
    const double fraction = checked > 0 ? static_cast<double>(failed) / static_cast<double>(checked) : 0.0;
    const bool ok = fraction <= max_fraction && assumptions.pass();
    json report{{"seed", seed},
                {"samples", samples},
                {"rtol", rtol},
                {"checked", checked},
                {"failed", failed},
                {"boundaries", boundaries},
                {"failure_fraction", fraction},
                {"assumptions", assumptions_json(assumptions)},
                {"pass", ok},
                {"entries", entries}};
    write_json(out / "report.json", report);
    return ok ? exit_ok : exit_failure;
}

int cmd_kernel(Config& cfg, const fs::path& out, const fs::path& x, const fs::path& y) {
    const std::uint64_t seed = cfg.get_uint("run.seed", 0);
    const KernelConfig kernel = read_kernel(cfg, "kernel");
    const std::string format = cfg.get_string("kernel.format", "spikes");
    const double T = cfg.get_double("kernel.T", 1.0);
    const std::size_t nx = cfg.get_uint("kernel.samples_x", 0);
    const std::size_t ny = cfg.get_uint("kernel.samples_y", 0);
    const int neurons = static_cast<int>(cfg.get_int("kernel.neurons", 0));
    const int permutations = static_cast<int>(cfg.get_int("kernel.permutations", 199));
    if (format != "spikes" && format != "nodes") {
        throw ConfigError("kernel.format: expected spikes or nodes, got '" + format + "'");
    }
    convert("kernel", [&] {
        validate_kernel_config(kernel);
        return 0;
    });
    std::vector<CadlagPath> px;
    std::vector<CadlagPath> py;
    if (format == "spikes") {
        auto sx = read_spike_csv(x, nx, neurons);
        auto sy = read_spike_csv(y, ny, neurons);
        std::size_t K = 0;
        for (const auto* set : {&sx, &sy}) {
            for (const auto& s : *set) {
                K = std::max(K, s.size());
            }
        }
        for (auto* set : {&sx, &sy}) {
            for (auto& s : *set) {
                s.resize(std::max<std::size_t>(K, 1));
            }
        }
        for (const auto& s : sx) {
            px.push_back(spikes_to_path(s, T));
        }
        for (const auto& s : sy) {
            py.push_back(spikes_to_path(s, T));
        }
    } else {
        px = read_node_csv(x);
        py = read_node_csv(y);
    }
    if (px.size() < 2 || py.size() < 2) {
        throw ConfigError("kernel: each path set needs at least two paths (got " +
                          std::to_string(px.size()) + " and " + std::to_string(py.size()) + ")");
    }
    prepare(cfg, out);

    std::vector<TruncatedSignature> sx;
    std::vector<TruncatedSignature> sy;
    std::vector<TruncatedSignature> pooled;
    for (const auto& p : px) {
        sx.push_back(path_signature(p, kernel));
    }
    for (const auto& p : py) {
        if (p.dim() != px.front().dim()) {
            throw ConfigError("kernel: path dimensions differ between the two sets");
        }
        sy.push_back(path_signature(p, kernel));
    }
    pooled.insert(pooled.end(), sx.begin(), sx.end());
    pooled.insert(pooled.end(), sy.begin(), sy.end());
    const Matrix G = gram_matrix(pooled);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(G, Eigen::EigenvaluesOnly)
                               .eigenvalues()
                               .minCoeff();
    const PermutationTest test =
        mmd_permutation_test(sx, sy, permutations, derive_seed(seed, "permutation"));

    json result{{"mmd", test.statistic},
                {"p_value", test.p_value},
                {"permutations", test.permutations},
                {"null_mean", test.null_mean},
                {"null_sd", test.null_sd},
                {"gram_min_eigenvalue", min_eig},
                {"gram_size", G.rows()},
                {"samples_x", px.size()},
                {"samples_y", py.size()}};
    write_json(out / "kernel.json", result);
    return exit_ok;
}

namespace {

InputCurrentConfig read_input_current(Config& cfg, std::uint64_t seed) {
    InputCurrentConfig c;
    const std::string s = "input_current.";
    c.seed = seed;
    c.sample_size = cfg.get_uint(s + "sample_size", c.sample_size);
    c.steps = cfg.get_uint(s + "steps", c.steps);
    c.sigma = cfg.get_double(s + "sigma", c.sigma);
    c.true_c = cfg.get_double(s + "true_c", c.true_c);
    c.init_low = cfg.get_double(s + "init_low", c.init_low);
    c.init_high = cfg.get_double(s + "init_high", c.init_high);
    c.mu = cfg.get_double(s + "mu", c.mu);
    c.v_reset = cfg.get_double(s + "v_reset", c.v_reset);
    c.alpha = cfg.get_double(s + "alpha", c.alpha);
    c.psi = cfg.get_double(s + "psi", c.psi);
    c.beta = cfg.get_double(s + "beta", c.beta);
    c.T = cfg.get_double(s + "T", c.T);
    c.dt = cfg.get_double(s + "dt", c.dt);
    const std::string scheme = cfg.get_string(s + "scheme", to_string(c.scheme));
    c.scheme = convert(s + "scheme", [&] { return scheme_from_string(scheme); });
    c.max_spikes = cfg.get_uint(s + "max_spikes", c.max_spikes);
    c.depth = static_cast<int>(cfg.get_int(s + "depth", c.depth));
    c.lr0 = cfg.get_double(s + "lr0", c.lr0);
    c.lr1 = cfg.get_double(s + "lr1", c.lr1);
    c.switch_fraction = cfg.get_double(s + "switch_fraction", c.switch_fraction);
    c.rho = cfg.get_double(s + "rho", c.rho);
    c.momentum = cfg.get_double(s + "momentum", c.momentum);
    c.lr = cfg.get_double(s + "lr", c.lr);
    return c;
}

WeightsConfig read_weights(Config& cfg, std::uint64_t seed) {
    WeightsConfig c;
    const std::string s = "weights.";
    c.seed = seed;
    c.layers = cfg.get_ints(s + "layers", c.layers);
    c.sample_size = cfg.get_uint(s + "sample_size", c.sample_size);
    c.batch = cfg.get_uint(s + "batch", c.batch);
    c.test_size = cfg.get_uint(s + "test_size", c.test_size);
    c.steps = cfg.get_uint(s + "steps", c.steps);
    c.mu1 = cfg.get_double(s + "mu1", c.mu1);
    c.mu2 = cfg.get_double(s + "mu2", c.mu2);
    c.sigma1 = cfg.get_double(s + "sigma1", c.sigma1);
    c.sigma2 = cfg.get_double(s + "sigma2", c.sigma2);
    c.v_reset = cfg.get_double(s + "v_reset", c.v_reset);
    c.alpha = cfg.get_double(s + "alpha", c.alpha);
    c.psi = cfg.get_double(s + "psi", c.psi);
    c.beta = cfg.get_double(s + "beta", c.beta);
    c.input_drive = cfg.get_double(s + "input_drive", c.input_drive);
    c.input_current = cfg.get_double(s + "input_current", c.input_current);
    c.T = cfg.get_double(s + "T", c.T);
    c.dt = cfg.get_double(s + "dt", c.dt);
    const std::string scheme = cfg.get_string(s + "scheme", to_string(c.scheme));
    c.scheme = convert(s + "scheme", [&] { return scheme_from_string(scheme); });
    c.max_events = cfg.get_uint(s + "max_events", c.max_events);
    c.max_refinements = static_cast<int>(cfg.get_int(s + "max_refinements", c.max_refinements));
    c.depth = static_cast<int>(cfg.get_int(s + "depth", c.depth));
    const std::string matching = cfg.get_string(s + "matching", to_string(c.matching));
    c.matching = convert(s + "matching", [&] { return count_matching_from_string(matching); });
    const std::string grouping = cfg.get_string(s + "grouping", to_string(c.grouping));
    c.grouping = convert(s + "grouping", [&] { return path_grouping_from_string(grouping); });
    c.observed = cfg.get_ints(s + "observed", c.observed);
    c.lr0 = cfg.get_double(s + "lr0", c.lr0);
    c.lr1 = cfg.get_double(s + "lr1", c.lr1);
    c.switch_fraction = cfg.get_double(s + "switch_fraction", c.switch_fraction);
    c.rho = cfg.get_double(s + "rho", c.rho);
    c.momentum = cfg.get_double(s + "momentum", c.momentum);
    c.lr = cfg.get_double(s + "lr", c.lr);
    c.eval_every = cfg.get_uint(s + "eval_every", c.eval_every);
    return c;
}

} // namespace

int cmd_train(Config& cfg, const fs::path& out) {
    const std::uint64_t seed = cfg.get_uint("run.seed", 0);
    const std::string experiment = cfg.get_string("train.experiment", "input_current");
    const double max_error = cfg.get_double("acceptance.max_final_param_error", -1.0);
    const double min_reduction = cfg.get_double("acceptance.min_param_error_reduction", -1.0);

    TrainRun run;
    if (experiment == "input_current") {
        const InputCurrentConfig c = read_input_current(cfg, seed);
        prepare(cfg, out);
        run = experiment_input_current(c);
    } else if (experiment == "weights") {
        const WeightsConfig c = read_weights(cfg, seed);
        prepare(cfg, out);
        run = experiment_weights(c);
    } else {
        throw ConfigError("train.experiment: expected input_current or weights, got '" + experiment +
                          "'");
    }
    write_train_csv(out, run);

    const double initial = run.records.front().param_error;
    const double final = run.records.back().param_error;
    const double reduction = initial > 0.0 ? 1.0 - final / initial : 0.0;
    json checks = json::object();
    bool ok = true;
    if (max_error >= 0.0) {
        const bool pass = final <= max_error;
        checks["max_final_param_error"] = {{"threshold", max_error}, {"value", final}, {"pass", pass}};
        ok = ok && pass;
    }
    if (min_reduction >= 0.0) {
        const bool pass = reduction >= min_reduction;
        checks["min_param_error_reduction"] = {
            {"threshold", min_reduction}, {"value", reduction}, {"pass", pass}};
        ok = ok && pass;
    }
    json summary{{"experiment", run.experiment},
                 {"seed", run.seed},
                 {"steps", run.records.size() - 1},
                 {"param_names", run.param_names},
                 {"true_params", to_std(run.true_params)},
                 {"initial_params", to_std(run.initial_params())},
                 {"final_params", to_std(run.final_params())},
                 {"initial_param_error", initial},
                 {"final_param_error", final},
                 {"final_loss", run.records.back().loss},
                 {"acceptance", {{"checks", checks}, {"pass", ok}}},
                 {"config", cfg.resolved_text()}};
    write_json(out / "summary.json", summary);
    return ok ? exit_ok : exit_failure;
}

} // namespace esde::cli
