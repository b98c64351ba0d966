#include "esde/ssnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "esde/errors.hpp"
#include "esde/random.hpp"
#include "parallel.hpp"

namespace esde {

namespace {

double entry_or(const Vector& v, int k, double fallback) {
    return v.size() == 0 ? fallback : v(k);
}

void check_size(const Vector& v, int K, const char* name) {
    if (v.size() != 0 && v.size() != K) {
        throw ArgumentError(std::string("NetworkParams: ") + name + " must have K entries");
    }
}

struct Synapse {
    int target = 0;
    double weight = 0.0;
    Eigen::Index param = -1; ///< Augmented coordinate when trainable.
};

/// Shared, immutable model data captured by the field and event closures.
struct Model {
    NetworkParams p;
    double cap = 0.0;
    int e = 0;
    std::vector<std::vector<Synapse>> out; ///< Outgoing synapses per neuron.
    Matrix sigma;
};

double lambda_of(const Model& m, double v) {
    if (std::isinf(m.p.psi) && m.p.psi > 0.0) {
        return 0.0;
    }
    return std::min(std::exp((v - m.p.psi) / m.p.beta), m.cap);
}

double dlambda_of(const Model& m, double v) {
    if (std::isinf(m.p.psi) && m.p.psi > 0.0) {
        return 0.0;
    }
    const double l = std::exp((v - m.p.psi) / m.p.beta);
    return l >= m.cap ? 0.0 : l / m.p.beta;
}

} // namespace

void validate_params(const NetworkParams& p) {
    if (p.K < 1) {
        throw ArgumentError("NetworkParams: K must be positive");
    }
    if (p.w.rows() != p.K || p.w.cols() != p.K) {
        throw ArgumentError("NetworkParams: w must be K x K");
    }
    if (p.mask.size() != 0 && (p.mask.rows() != p.K || p.mask.cols() != p.K)) {
        throw ArgumentError("NetworkParams: mask must be K x K");
    }
    if (!(p.mu1 > 0.0) || !(p.mu2 >= 0.0)) {
        throw ArgumentError("NetworkParams: require mu1 > 0 and mu2 >= 0");
    }
    if (!(p.sigma1 >= 0.0) || !(p.sigma2 >= 0.0)) {
        throw ArgumentError("NetworkParams: diffusion scales must be nonnegative");
    }
    if (!(p.v_reset > 0.0) || !(p.alpha > 0.0) || !(p.beta > 0.0)) {
        throw ArgumentError("NetworkParams: require v_reset, alpha and beta > 0");
    }
    if (std::isnan(p.psi)) {
        throw ArgumentError("NetworkParams: psi is NaN");
    }
    check_size(p.v0, p.K, "v0");
    check_size(p.i0, p.K, "i0");
    check_size(p.input_drive, p.K, "input_drive");
    const Matrix m = synapse_mask(p);
    for (int k = 0; k < p.K; ++k) {
        if (m(k, k) != 0.0) {
            throw ArgumentError("NetworkParams: self-synapses are not supported");
        }
    }
    for (int k = 0; k < p.K; ++k) {
        for (int j = 0; j < p.K; ++j) {
            if (m(k, j) == 0.0 && p.w(k, j) != 0.0) {
                throw ArgumentError("NetworkParams: nonzero weight outside the mask");
            }
        }
    }
}

Matrix synapse_mask(const NetworkParams& p) {
    if (p.mask.size() != 0) {
        return (p.mask.array() != 0.0).cast<double>().matrix();
    }
    return (p.w.array() != 0.0).cast<double>().matrix();
}

double lambda_cap(const NetworkParams& p) {
    return p.lambda_cap > 0.0 ? p.lambda_cap : std::exp(5.0);
}

double intensity(const NetworkParams& p, double v) {
    Model m;
    m.p.psi = p.psi;
    m.p.beta = p.beta;
    m.cap = lambda_cap(p);
    return lambda_of(m, v);
}

double intensity_derivative(const NetworkParams& p, double v) {
    Model m;
    m.p.psi = p.psi;
    m.p.beta = p.beta;
    m.cap = lambda_cap(p);
    return dlambda_of(m, v);
}

double refractory_bound(const NetworkParams& p) { return p.alpha / lambda_cap(p); }

std::string TrainableParam::name() const {
    std::ostringstream os;
    switch (kind) {
    case Kind::initial_current:
        os << "i0[" << neuron << "]";
        break;
    case Kind::initial_potential:
        os << "v0[" << neuron << "]";
        break;
    case Kind::weight:
        os << "w[" << neuron << "," << target << "]";
        break;
    }
    return os.str();
}

Matrix SlifSystem::seed() const {
    Matrix s = Matrix::Zero(state_dim, static_cast<Eigen::Index>(trainable.size()));
    for (std::size_t p = 0; p < trainable.size(); ++p) {
        s(seed_index[p], static_cast<Eigen::Index>(p)) = 1.0;
    }
    return s;
}

Vector SlifSystem::parameter_values() const {
    Vector out(static_cast<Eigen::Index>(trainable.size()));
    for (std::size_t p = 0; p < trainable.size(); ++p) {
        const auto& t = trainable[p];
        double v = 0.0;
        switch (t.kind) {
        case TrainableParam::Kind::initial_current:
            v = entry_or(params.i0, t.neuron, 0.0);
            break;
        case TrainableParam::Kind::initial_potential:
            v = entry_or(params.v0, t.neuron, 0.0);
            break;
        case TrainableParam::Kind::weight:
            v = params.w(t.neuron, t.target);
            break;
        }
        out(static_cast<Eigen::Index>(p)) = v;
    }
    return out;
}

SlifSystem build_slif_network(const NetworkParams& params, std::vector<TrainableParam> trainable) {
    validate_params(params);
    const int K = params.K;
    const Matrix mask = synapse_mask(params);

    SlifSystem sys;
    sys.params = params;
    sys.trainable = std::move(trainable);

    int augmented = 0;
    sys.seed_index.resize(sys.trainable.size());
    for (std::size_t p = 0; p < sys.trainable.size(); ++p) {
        const auto& t = sys.trainable[p];
        if (t.neuron < 0 || t.neuron >= K) {
            throw ArgumentError("trainable parameter " + t.name() + " refers to a missing neuron");
        }
        switch (t.kind) {
        case TrainableParam::Kind::initial_current:
            sys.seed_index[p] = SlifSystem::i_index(t.neuron);
            break;
        case TrainableParam::Kind::initial_potential:
            sys.seed_index[p] = SlifSystem::v_index(t.neuron);
            break;
        case TrainableParam::Kind::weight:
            if (t.target < 0 || t.target >= K || mask(t.neuron, t.target) == 0.0) {
                throw ArgumentError("trainable weight " + t.name() + " is outside the synapse mask");
            }
            sys.seed_index[p] = 3 * K + augmented++;
            break;
        }
    }
    sys.state_dim = 3 * K + augmented;

    auto model = std::make_shared<Model>();
    model->p = params;
    model->cap = lambda_cap(params);
    model->e = sys.state_dim;
    model->out.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < K; ++j) {
            if (mask(k, j) != 0.0) {
                Synapse s;
                s.target = j;
                s.weight = params.w(k, j);
                for (std::size_t p = 0; p < sys.trainable.size(); ++p) {
                    const auto& t = sys.trainable[p];
                    if (t.kind == TrainableParam::Kind::weight && t.neuron == k && t.target == j) {
                        s.param = sys.seed_index[p];
                    }
                }
                model->out[static_cast<std::size_t>(k)].push_back(s);
            }
        }
    }
    model->sigma = Matrix::Zero(sys.state_dim, 2 * K);
    for (int k = 0; k < K; ++k) {
        model->sigma(SlifSystem::v_index(k), 2 * k) = params.sigma1;
        model->sigma(SlifSystem::i_index(k), 2 * k + 1) = params.sigma2;
    }

    const bool stochastic = params.firing == FiringMode::stochastic;
    auto& f = sys.fields;
    f.state_dim = sys.state_dim;
    f.noise_dim = 2 * K;
    f.constant_diffusion = true;
    f.drift = [model, stochastic](const Vector& y) {
        const auto& p = model->p;
        Vector out = Vector::Zero(y.size());
        for (int k = 0; k < p.K; ++k) {
            const double v = y(3 * k);
            const double i = y(3 * k + 1);
            out(3 * k) = p.mu1 * (i - v);
            out(3 * k + 1) = -p.mu2 * i + entry_or(p.input_drive, k, 0.0);
            out(3 * k + 2) = stochastic ? lambda_of(*model, v) : 0.0;
        }
        return out;
    };
    f.diffusion = [model](const Vector&) { return model->sigma; };
    f.drift_jacobian = [model, stochastic](const Vector& y) {
        const auto& p = model->p;
        Matrix jac = Matrix::Zero(y.size(), y.size());
        for (int k = 0; k < p.K; ++k) {
            jac(3 * k, 3 * k) = -p.mu1;
            jac(3 * k, 3 * k + 1) = p.mu1;
            jac(3 * k + 1, 3 * k + 1) = -p.mu2;
            if (stochastic) {
                jac(3 * k + 2, 3 * k) = dlambda_of(*model, y(3 * k));
            }
        }
        return jac;
    };
    f.drift_tangent = [model, stochastic](const Vector& y, const Matrix& J) {
        const auto& p = model->p;
        Matrix out = Matrix::Zero(J.rows(), J.cols());
        for (int k = 0; k < p.K; ++k) {
            out.row(3 * k) = p.mu1 * (J.row(3 * k + 1) - J.row(3 * k));
            out.row(3 * k + 1) = -p.mu2 * J.row(3 * k + 1);
            if (stochastic) {
                out.row(3 * k + 2) = dlambda_of(*model, y(3 * k)) * J.row(3 * k);
            }
        }
        return out;
    };

    for (int k = 0; k < K; ++k) {
        EventSpec spec;
        spec.label = k;
        const Eigen::Index vk = SlifSystem::v_index(k);
        const Eigen::Index sk = SlifSystem::s_index(k);
        if (stochastic) {
            spec.event_fn = [sk](const Vector& y) { return y(sk); };
            spec.event_gradient = [sk](const Vector& y) {
                RowVector g = RowVector::Zero(y.size());
                g(sk) = 1.0;
                return g;
            };
        } else {
            const double psi = params.psi;
            spec.event_fn = [vk, psi](const Vector& y) { return y(vk) - psi; };
            spec.event_gradient = [vk](const Vector& y) {
                RowVector g = RowVector::Zero(y.size());
                g(vk) = 1.0;
                return g;
            };
        }
        const bool to_zero = params.reset == ResetMode::to_zero;
        spec.transition_fn = [model, k, vk, sk, stochastic, to_zero](const Vector& y, double u) {
            const auto& p = model->p;
            Vector out = y;
            out(vk) = to_zero ? 0.0 : y(vk) - p.v_reset;
            if (stochastic) {
                out(sk) = std::log(u) - p.alpha;
            }
            for (const auto& s : model->out[static_cast<std::size_t>(k)]) {
                out(SlifSystem::i_index(s.target)) += s.param >= 0 ? y(s.param) : s.weight;
            }
            return out;
        };
        spec.transition_tangent = [model, k, vk, sk, stochastic, to_zero](const Vector&, double,
                                                                          const Matrix& M) {
            Matrix out = M;
            if (to_zero) {
                out.row(vk).setZero();
            }
            if (stochastic) {
                out.row(sk).setZero();
            }
            for (const auto& s : model->out[static_cast<std::size_t>(k)]) {
                if (s.param >= 0) {
                    out.row(SlifSystem::i_index(s.target)) += M.row(s.param);
                }
            }
            return out;
        };
        sys.specs.push_back(std::move(spec));
    }
    return sys;
}

Vector initial_state(const SlifSystem& system, std::span<const double> initial_uniforms) {
    const auto& p = system.params;
    if (p.firing == FiringMode::stochastic &&
        initial_uniforms.size() < static_cast<std::size_t>(p.K)) {
        throw ArgumentError("initial_state: need one uniform per neuron");
    }
    Vector y = Vector::Zero(system.state_dim);
    for (int k = 0; k < p.K; ++k) {
        y(SlifSystem::v_index(k)) = entry_or(p.v0, k, 0.0);
        y(SlifSystem::i_index(k)) = entry_or(p.i0, k, 0.0);
        if (p.firing == FiringMode::stochastic) {
            const double u = initial_uniforms[static_cast<std::size_t>(k)];
            if (!(u > 0.0 && u <= 1.0)) {
                throw ArgumentError("initial_state: uniforms must lie in (0, 1]");
            }
            y(SlifSystem::s_index(k)) = std::log(u) - p.alpha;
        } else {
            y(SlifSystem::s_index(k)) = -1.0;
        }
    }
    for (std::size_t q = 0; q < system.trainable.size(); ++q) {
        const auto& t = system.trainable[q];
        if (t.kind == TrainableParam::Kind::weight) {
            y(system.seed_index[q]) = p.w(t.neuron, t.target);
        }
    }
    return y;
}

Vector initial_state(const SlifSystem& system, std::uint64_t seed) {
    std::vector<double> u(static_cast<std::size_t>(system.params.K));
    for (std::size_t k = 0; k < u.size(); ++k) {
        u[k] = counter_uniform(seed, streams::generic, k);
    }
    return initial_state(system, u);
}

SpikeTrains spike_trains_from(const EventSolution& solution, int K) {
    SpikeTrains out(static_cast<std::size_t>(K));
    for (std::size_t n = 0; n < solution.event_count(); ++n) {
        const int k = solution.event_labels[n];
        if (k >= 0 && k < K) {
            out[static_cast<std::size_t>(k)].push_back(solution.event_times[n]);
        }
    }
    return out;
}

SampleRandomness sample_randomness(std::uint64_t seed, std::uint64_t index) {
    const std::uint64_t s = sample_seed(seed, index);
    return {derive_seed(s, "brownian"), derive_seed(s, "transition"), derive_seed(s, "initial")};
}

BrownianDriver make_driver(const SlifSystem& system, double T, const SimulationOptions& options,
                           std::uint64_t driver_seed) {
    if (!(T > options.t0)) {
        throw ArgumentError("simulation horizon must exceed the start time");
    }
    return BrownianDriver(2 * system.params.K, options.t0, T, options.dt, driver_seed);
}

SolverOptions solver_options(const SlifSystem& system, const SimulationOptions& options) {
    SolverOptions s;
    s.scheme = options.scheme;
    s.record_segments = options.record_segments;
    s.max_refinements = options.max_refinements;
    if (s.max_refinements < 0) {
        s.max_refinements = 2;
        if (system.params.firing == FiringMode::stochastic) {
            const double bound = refractory_bound(system.params);
            int r = 0;
            while (r < 30 && std::ldexp(options.dt, -r) >= bound) {
                ++r;
            }
            s.max_refinements = std::max(s.max_refinements, r);
        }
    }
    if (options.enforce_refractory && system.params.firing == FiringMode::stochastic) {
        s.refractory_bounds.assign(static_cast<std::size_t>(system.params.K),
                                   refractory_bound(system.params));
    }
    return s;
}

EventSolution simulate_sample(const SlifSystem& system, double T, const SimulationOptions& options,
                              const SampleRandomness& rnd) {
    const BrownianDriver driver = make_driver(system, T, options, rnd.driver_seed);
    const Vector y0 = initial_state(system, rnd.initial_seed);
    return event_sde_solve(y0, system.fields, system.specs, driver, options.max_events, options.t0,
                           options.dt, T, UniformStream(rnd.transition_seed),
                           solver_options(system, options));
}

std::vector<SpikeTrains> simulate_spike_trains(const NetworkParams& params, double T,
                                               const SimulationOptions& options,
                                               std::uint64_t seed, std::size_t batch) {
    if (!(T > 0.0)) {
        throw ArgumentError("simulate_spike_trains: T must be positive");
    }
    const SlifSystem system = build_slif_network(params);
    std::vector<SpikeTrains> out(batch);
    detail::parallel_for(batch, [&](std::size_t b) {
        const EventSolution sol = simulate_sample(system, T, options, sample_randomness(seed, b));
        out[b] = spike_trains_from(sol, params.K);
    });
    return out;
}

Eigen::Matrix2d ou_flow(double mu1, double mu2, double t) {
    Eigen::Matrix2d E;
    const double delta = mu1 - mu2;
    const double e2 = std::exp(-mu2 * t);
    E(0, 0) = std::exp(-mu1 * t);
    E(1, 0) = 0.0;
    E(1, 1) = e2;
    if (delta == 0.0) {
        E(0, 1) = mu1 * t * e2;
    } else {
        // mu1 (e^{-mu2 t} - e^{-mu1 t}) / (mu1 - mu2) without cancellation.
        E(0, 1) = mu1 * e2 * (-std::expm1(-delta * t)) / delta;
    }
    return E;
}

OnlineSensitivity online_sensitivity(const NetworkParams& params, const EventSolution& solution,
                                     int from, int to, double t0) {
    validate_params(params);
    if (params.reset != ResetMode::subtract) {
        throw ArgumentError("online_sensitivity: only subtractive resets are supported");
    }
    const int K = params.K;
    if (from < 0 || from >= K || to < 0 || to >= K) {
        throw ArgumentError("online_sensitivity: synapse index out of range");
    }
    const bool stochastic = params.firing == FiringMode::stochastic;
    const std::size_t N = solution.event_count();
    if (stochastic && solution.segments.size() < N) {
        throw ArgumentError("online_sensitivity: stochastic firing needs recorded segments");
    }
    const Matrix mask = synapse_mask(params);
    const double mu1 = params.mu1;
    const double mu2 = params.mu2;

    Matrix G = Matrix::Zero(2, K);
    std::vector<double> last(static_cast<std::size_t>(K), t0);
    // Stochastic firing: running integral of lambda'(v) G_v since the last own
    // spike, with lambda and the time gradient at that spike.
    std::vector<double> integral(static_cast<std::size_t>(K), 0.0);
    std::vector<double> lam_prev(static_cast<std::size_t>(K), 0.0);
    std::vector<double> grad_prev(static_cast<std::size_t>(K), 0.0);

    auto at = [&](int k, double t) -> Eigen::Vector2d {
        return ou_flow(mu1, mu2, t - last[static_cast<std::size_t>(k)]) * G.col(k);
    };

    OnlineSensitivity out;
    out.spike_time_grads.resize(N);
    for (std::size_t n = 0; n < N; ++n) {
        if (stochastic) {
            const auto& seg = solution.segments[n];
            for (int k = 0; k < K; ++k) {
                double acc = 0.0;
                double f_prev = 0.0;
                for (std::size_t r = 0; r < seg.times.size(); ++r) {
                    const double v = seg.states[r](SlifSystem::v_index(k));
                    const double f = intensity_derivative(params, v) * at(k, seg.times[r])(0);
                    if (r > 0) {
                        acc += 0.5 * (f + f_prev) * (seg.times[r] - seg.times[r - 1]);
                    }
                    f_prev = f;
                }
                integral[static_cast<std::size_t>(k)] += acc;
            }
        }

        const double s = solution.event_times[n];
        const int l = solution.event_labels[n];
        const Vector& pre = solution.pre_event_states[n];
        const double v = pre(SlifSystem::v_index(l));
        const double i = pre(SlifSystem::i_index(l));
        const auto li = static_cast<std::size_t>(l);

        double ds = 0.0;
        if (stochastic) {
            ds = (lam_prev[li] * grad_prev[li] - integral[li]) / intensity(params, v);
        } else {
            const double denom = mu1 * (i - v);
            if (!(std::abs(denom) >= 1e-8)) {
                throw TransversalityError("online_sensitivity: mu1 (i - v) vanishes at a spike");
            }
            ds = -at(l, s)(0) / denom;
        }
        out.spike_time_grads[n] = ds;

        for (int k = 0; k < K; ++k) {
            const bool parent = mask(l, k) != 0.0;
            const bool target = l == from && k == to;
            if (k != l && !parent && !target) {
                continue;
            }
            Eigen::Vector2d g = at(k, s);
            if (k == l) {
                g(0) -= mu1 * params.v_reset * ds;
            } else {
                g(0) -= mu1 * params.w(l, k) * ds;
                g(1) += mu2 * params.w(l, k) * ds;
                if (target) {
                    g(1) += 1.0;
                }
            }
            G.col(k) = g;
            last[static_cast<std::size_t>(k)] = s;
        }
        if (stochastic) {
            const Vector& post = solution.post_event_states[n];
            lam_prev[li] = intensity(params, post(SlifSystem::v_index(l)));
            grad_prev[li] = ds;
            integral[li] = 0.0;
        }
    }
    for (int k = 0; k < K; ++k) {
        G.col(k) = at(k, solution.final_time);
    }
    out.G = G;
    return out;
}

bool is_acyclic(const Matrix& mask) {
    const Eigen::Index K = mask.rows();
    std::vector<int> indegree(static_cast<std::size_t>(K), 0);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index j = 0; j < K; ++j) {
            if (mask(k, j) != 0.0) {
                ++indegree[static_cast<std::size_t>(j)];
            }
        }
    }
    std::vector<Eigen::Index> ready;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (indegree[static_cast<std::size_t>(k)] == 0) {
            ready.push_back(k);
        }
    }
    Eigen::Index visited = 0;
    while (!ready.empty()) {
        const Eigen::Index k = ready.back();
        ready.pop_back();
        ++visited;
        for (Eigen::Index j = 0; j < K; ++j) {
            if (mask(k, j) != 0.0 && --indegree[static_cast<std::size_t>(j)] == 0) {
                ready.push_back(j);
            }
        }
    }
    return visited == K;
}

EligibilityResult eligibility_traces(const NetworkParams& params, const EventSolution& solution,
                                     const std::function<double(std::size_t)>& modulator,
                                     double t0) {
    validate_params(params);
    const int K = params.K;
    const Matrix mask = synapse_mask(params);
    const double mu1 = params.mu1;
    const double mu2 = params.mu2;

    EligibilityResult res;
    res.gradient = Matrix::Zero(K, K);
    res.a = Matrix::Zero(K, K);
    res.b = Matrix::Zero(K, K);
    Matrix last = Matrix::Constant(K, K, t0);
    if (!is_acyclic(mask)) {
        res.exact = false;
        res.warnings.emplace_back(
            "synapse graph is cyclic; eligibility traces are used as gradient proxies");
    }
    if (params.firing == FiringMode::stochastic) {
        res.exact = false;
        res.warnings.emplace_back(
            "stochastic firing: eligibility gradients are estimators without exactness guarantee");
    }

    auto advance = [&](int j, int k, double t) {
        Eigen::Vector2d ab(res.a(j, k), res.b(j, k));
        ab = ou_flow(mu1, mu2, t - last(j, k)) * ab;
        res.a(j, k) = ab(0);
        res.b(j, k) = ab(1);
        last(j, k) = t;
    };

    for (std::size_t n = 0; n < solution.event_count(); ++n) {
        const double s = solution.event_times[n];
        const int l = solution.event_labels[n];
        const Vector& pre = solution.pre_event_states[n];
        const double v = pre(SlifSystem::v_index(l));
        const double i = pre(SlifSystem::i_index(l));
        const double m = modulator ? modulator(n) : 0.0;

        for (int j = 0; j < K; ++j) {
            if (mask(j, l) == 0.0) {
                continue;
            }
            advance(j, l, s);
            const double gap = v - i;
            if (!(std::abs(gap) >= 1e-12)) {
                throw TransversalityError("eligibility_traces: v = i at a spike");
            }
            res.gradient(j, l) += m * res.a(j, l) / (mu1 * gap);
            res.a(j, l) += params.v_reset * res.a(j, l) / (i - v);
        }
        for (int k = 0; k < K; ++k) {
            if (mask(l, k) == 0.0) {
                continue;
            }
            advance(l, k, s);
            res.b(l, k) += 1.0;
        }
    }
    for (int j = 0; j < K; ++j) {
        for (int k = 0; k < K; ++k) {
            advance(j, k, solution.final_time);
        }
    }
    return res;
}

} // namespace esde
