#include "esde/events.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "esde/errors.hpp"
#include "esde/sensitivity.hpp"
#include "event_loop.hpp"

namespace esde {

RowVector event_gradient(const EventSpec& spec, const Vector& y) {
    if (spec.event_gradient) {
        return spec.event_gradient(y);
    }
    RowVector g(y.size());
    Vector yp = y;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(y(i)));
        yp(i) = y(i) + h;
        const double fp = spec.event_fn(yp);
        yp(i) = y(i) - h;
        const double fm = spec.event_fn(yp);
        yp(i) = y(i);
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix transition_jacobian(const EventSpec& spec, const Vector& y, double u) {
    if (spec.transition_jacobian) {
        return spec.transition_jacobian(y, u);
    }
    if (spec.transition_tangent) {
        return spec.transition_tangent(y, u, Matrix::Identity(y.size(), y.size()));
    }
    const Eigen::Index e = y.size();
    Matrix jac(e, e);
    Vector yp = y;
    for (Eigen::Index i = 0; i < e; ++i) {
        const double h = 1e-6 * (1.0 + std::abs(y(i)));
        yp(i) = y(i) + h;
        const Vector fp = spec.transition_fn(yp, u);
        yp(i) = y(i) - h;
        const Vector fm = spec.transition_fn(yp, u);
        yp(i) = y(i);
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

Matrix apply_transition_jacobian(const EventSpec& spec, const Vector& y, double u, const Matrix& M) {
    if (spec.transition_tangent) {
        return spec.transition_tangent(y, u, M);
    }
    return transition_jacobian(spec, y, u) * M;
}

EventLocation locate_event(const Vector& y0, double t0, double dt, const VectorFields& fields,
                           const BrownianDriver& driver,
                           const std::function<double(const Vector&)>& event_fn, double tol,
                           Scheme scheme) {
    if (!(dt > 0.0)) {
        throw ArgumentError("locate_event: dt must be positive");
    }
    const double t_end = t0 + dt;
    auto probe = [&](double t, Vector& y) {
        y = stratonovich_step(y0, t0, t - t0, fields, driver, scheme);
        return event_fn(y);
    };

    double a = t0;
    double ga = event_fn(y0);
    double b = t_end;
    Vector yb;
    double gb = probe(b, yb);
    if (!(ga < 0.0) || !(gb >= 0.0)) {
        std::ostringstream os;
        os << "locate_event: no sign change on [" << t0 << ", " << t_end << "] (E = " << ga
           << " -> " << gb << ")";
        throw BracketError(os.str());
    }
    if (gb <= tol) {
        return {b, yb};
    }

    Vector yc;
    const double width_tol = tol * dt;
    for (int iter = 0; iter < 64; ++iter) {
        // Secant candidate, falling back to the midpoint when it leaves the
        // open bracket; a bisection probe follows so the bracket always halves.
        double c = b - gb * (b - a) / (gb - ga);
        if (!(c > a && c < b)) {
            c = 0.5 * (a + b);
        }
        double gc = probe(c, yc);
        if (std::abs(gc) <= tol) {
            return {c, yc};
        }
        if (gc < 0.0) {
            a = c;
            ga = gc;
        } else {
            b = c;
            gb = gc;
            yb = yc;
        }

        const double m = 0.5 * (a + b);
        if (m > a && m < b) {
            gc = probe(m, yc);
            if (std::abs(gc) <= tol) {
                return {m, yc};
            }
            if (gc < 0.0) {
                a = m;
                ga = gc;
            } else {
                b = m;
                gb = gc;
                yb = yc;
            }
        }
        if (b - a <= width_tol || !(0.5 * (a + b) > a && 0.5 * (a + b) < b)) {
            return {b, yb};
        }
    }
    throw ConvergenceError("locate_event: iteration budget exhausted");
}

Vector apply_transition(const EventSpec& spec, const Vector& y, double u,
                        std::span<const EventSpec> all_specs, double tol) {
    if (!spec.transition_fn) {
        return y;
    }
    Vector out = spec.transition_fn(y, u);
    if (out.size() != y.size()) {
        throw ArgumentError("apply_transition: transition changed the state dimension");
    }
    if (!out.allFinite()) {
        throw NumericalError("apply_transition: non-finite transition output", 0.0,
                             std::vector<double>(y.data(), y.data() + y.size()));
    }
    for (const auto& other : all_specs) {
        const double e = other.event_fn(out);
        if (e >= -tol) {
            std::ostringstream os;
            os << "transition of event " << spec.label << " lands on the event surface of "
               << other.label << " (E = " << e << ")";
            throw ModelError(os.str());
        }
    }
    return out;
}

namespace detail {

namespace {

struct CellSnapshot {
    Vector y;
    double t;
    Matrix J;
    RowVector time_grad;
    std::size_t event_grads;
    std::size_t events;
    std::size_t segments;
    std::size_t segment_nodes;
    std::vector<double> last_time;
    std::vector<std::size_t> fired;
};

template <class T>
void truncate(std::vector<T>& v, std::size_t n) {
    v.erase(v.begin() + static_cast<std::ptrdiff_t>(n), v.end());
}

class Solver {
public:
    Solver(const VectorFields& fields, std::span<const EventSpec> specs,
           const BrownianDriver& driver, std::size_t max_events, double t0, double dt, double T,
           const UniformStream& uniforms, const SolverOptions& options, TangentTracker* tracker)
        : fields_(fields), specs_(specs), driver_(driver), max_events_(max_events), t0_(t0),
          dt_(dt), T_(T), uniforms_(uniforms), options_(options), tracker_(tracker) {
        order_.resize(specs.size());
        for (std::size_t k = 0; k < specs.size(); ++k) {
            order_[k] = k;
        }
        std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
            return specs_[a].label < specs_[b].label;
        });
        last_time_.assign(specs.size(), -std::numeric_limits<double>::infinity());
        fired_.assign(specs.size(), 0);
    }

    EventSolution run(const Vector& y0) {
        y_ = y0;
        t_ = t0_;
        for (const auto& spec : specs_) {
            const double e = spec.event_fn(y0);
            if (!(e < 0.0)) {
                std::ostringstream os;
                os << "event_sde_solve: initial state is not strictly before event " << spec.label
                   << " (E = " << e << ")";
                throw ArgumentError(os.str());
            }
        }
        open_segment();

        const std::size_t cells = cell_count();
        for (std::size_t cell = 0; cell < cells && !budget_spent(); ++cell) {
            const double a = t0_ + static_cast<double>(cell) * dt_;
            const double b = cell + 1 == cells ? T_ : t0_ + static_cast<double>(cell + 1) * dt_;
            const CellSnapshot snap = snapshot();
            bool done = false;
            for (int r = 0; r <= options_.max_refinements && !done; ++r) {
                if (r > 0) {
                    restore(snap);
                }
                done = process_cell(a, b, std::size_t{1} << r);
            }
            if (!done) {
                std::ostringstream os;
                os << "event_sde_solve: an event fired more than once within a step near t = "
                   << a << " after " << options_.max_refinements
                   << " halvings; reduce dt (currently " << dt_ << ")";
                throw StepSizeError(os.str());
            }
        }
        close_segment();
        sol_.final_state = y_;
        sol_.final_time = t_;
        return std::move(sol_);
    }

private:
    std::size_t cell_count() const {
        const double cells = (T_ - t0_) / dt_;
        const double rounded = std::round(cells);
        const double n = std::abs(cells - rounded) <= 1e-9 * std::max(1.0, rounded)
                             ? rounded
                             : std::ceil(cells);
        return static_cast<std::size_t>(std::max(n, 0.0));
    }

    bool budget_spent() const {
        if (sol_.event_times.size() >= max_events_) {
            return true;
        }
        const auto& counts = options_.stop_counts;
        if (counts.empty()) {
            return false;
        }
        for (std::size_t k = 0; k < specs_.size(); ++k) {
            const auto label = static_cast<std::size_t>(specs_[k].label);
            if (label < counts.size() && fired_[k] < counts[label]) {
                return false;
            }
        }
        return true;
    }

    void open_segment() {
        if (!options_.record_segments) {
            return;
        }
        PathSegment seg;
        seg.t_start = t_;
        seg.t_end = t_;
        seg.times.push_back(t_);
        seg.states.push_back(y_);
        sol_.segments.push_back(std::move(seg));
    }

    void push_node(double t, const Vector& y) {
        if (!options_.record_segments) {
            return;
        }
        auto& seg = sol_.segments.back();
        seg.times.push_back(t);
        seg.states.push_back(y);
        seg.t_end = t;
    }

    void close_segment() {
        if (options_.record_segments && !sol_.segments.empty()) {
            sol_.segments.back().t_end = sol_.segments.back().times.back();
        }
    }

    CellSnapshot snapshot() const {
        CellSnapshot s{y_, t_, {}, {}, 0, sol_.event_times.size(), sol_.segments.size(),
                       sol_.segments.empty() ? 0 : sol_.segments.back().times.size(), last_time_,
                       fired_};
        if (tracker_) {
            s.J = tracker_->J;
            s.time_grad = tracker_->time_grad;
            s.event_grads = tracker_->event_time_grads.size();
        }
        return s;
    }

    void restore(const CellSnapshot& s) {
        y_ = s.y;
        t_ = s.t;
        last_time_ = s.last_time;
        fired_ = s.fired;
        truncate(sol_.event_times, s.events);
        truncate(sol_.event_labels, s.events);
        truncate(sol_.pre_event_states, s.events);
        truncate(sol_.post_event_states, s.events);
        truncate(sol_.event_uniforms, s.events);
        if (options_.record_segments) {
            truncate(sol_.segments, s.segments);
            auto& seg = sol_.segments.back();
            truncate(seg.times, s.segment_nodes);
            truncate(seg.states, s.segment_nodes);
            seg.t_end = seg.times.back();
        }
        if (tracker_) {
            tracker_->J = s.J;
            tracker_->time_grad = s.time_grad;
            truncate(tracker_->event_time_grads, s.event_grads);
        }
    }

    // Returns false when the same event type fires twice inside one sub-step.
    bool process_cell(double a, double b, std::size_t substeps) {
        const double width = (b - a) / static_cast<double>(substeps);
        for (std::size_t j = 1; j <= substeps && !budget_spent(); ++j) {
            const double target = j == substeps ? b : a + static_cast<double>(j) * width;
            std::vector<int> fired;
            while (t_ < target && !budget_spent()) {
                const double h = target - t_;
                const Vector y_end = stratonovich_step(y_, t_, h, fields_, driver_, options_.scheme);

                std::size_t winner = specs_.size();
                double t_star = std::numeric_limits<double>::infinity();
                Vector y_star;
                for (std::size_t k : order_) {
                    const auto& spec = specs_[k];
                    if (!(spec.event_fn(y_end) >= 0.0)) {
                        continue;
                    }
                    const EventLocation loc = locate_event(y_, t_, h, fields_, driver_,
                                                           spec.event_fn, options_.root_tol,
                                                           options_.scheme);
                    if (loc.time < t_star) {
                        t_star = loc.time;
                        y_star = loc.state;
                        winner = k;
                    }
                }

                if (winner == specs_.size()) {
                    if (tracker_) {
                        advance_tangent(h);
                    }
                    y_ = y_end;
                    t_ = target;
                    push_node(t_, y_);
                    break;
                }

                const int label = specs_[winner].label;
                if (std::find(fired.begin(), fired.end(), label) != fired.end()) {
                    return false;
                }
                fired.push_back(label);
                fire(winner, t_star, y_star);
            }
        }
        return true;
    }

    void advance_tangent(double h) {
        const LinearizedStep ls =
            linearized_step(y_, t_, h, fields_, driver_, options_.scheme, tracker_->J);
        tracker_->J = ls.tangent;
        tracker_->J.noalias() -= ls.velocity * tracker_->time_grad;
        tracker_->time_grad.setZero();
    }

    void fire(std::size_t k, double t_star, Vector y_star) {
        const auto& spec = specs_[k];
        const std::size_t n = sol_.event_times.size();
        const double u = uniforms_.for_event(spec.label, fired_[k], n);

        if (!options_.refractory_bounds.empty()) {
            const auto idx = static_cast<std::size_t>(spec.label);
            if (idx < options_.refractory_bounds.size()) {
                const double gap = t_star - last_time_[k];
                const double bound = options_.refractory_bounds[idx];
                if (gap < bound * (1.0 - 1e-9)) {
                    std::ostringstream os;
                    os << "event " << spec.label << " at t = " << t_star << " follows the previous one after "
                       << gap << " < declared refractory bound " << bound;
                    throw ModelError(os.str());
                }
            }
        }

        const double h = t_star - t_;
        Matrix J_post;
        RowVector tau_grad;
        if (tracker_) {
            const LinearizedStep ls =
                linearized_step(y_, t_, h, fields_, driver_, options_.scheme, tracker_->J);
            y_star = ls.state;
            Matrix P = ls.tangent;
            P.noalias() -= ls.velocity * tracker_->time_grad;
            tau_grad = event_time_gradient(event_gradient(spec, y_star), P, ls.velocity);
            const Vector y_post = apply_transition(spec, y_star, u, specs_, options_.root_tol);
            const Vector mu_post = fields_.drift(y_post);
            J_post = transition_gradient(P, tau_grad, y_star, u, spec, ls.velocity, mu_post);
            J_post.noalias() += mu_post * tau_grad;
        }
        const Vector y_post = apply_transition(spec, y_star, u, specs_, options_.root_tol);

        push_node(t_star, y_star);
        sol_.event_times.push_back(t_star);
        sol_.event_labels.push_back(spec.label);
        sol_.pre_event_states.push_back(y_star);
        sol_.post_event_states.push_back(y_post);
        sol_.event_uniforms.push_back(u);
        last_time_[k] = t_star;
        ++fired_[k];

        y_ = y_post;
        t_ = t_star;
        if (tracker_) {
            tracker_->J = std::move(J_post);
            tracker_->time_grad = tau_grad;
            tracker_->event_time_grads.push_back(tau_grad);
        }
        open_segment();
    }

    const VectorFields& fields_;
    std::span<const EventSpec> specs_;
    const BrownianDriver& driver_;
    std::size_t max_events_;
    double t0_, dt_, T_;
    const UniformStream& uniforms_;
    const SolverOptions& options_;
    TangentTracker* tracker_;

    std::vector<std::size_t> order_;
    std::vector<double> last_time_;
    std::vector<std::size_t> fired_;
    EventSolution sol_;
    Vector y_;
    double t_ = 0.0;
};

} // namespace

EventSolution run_event_solver(const Vector& y0, const VectorFields& fields,
                               std::span<const EventSpec> specs, const BrownianDriver& driver,
                               std::size_t max_events, double t0, double dt, double T,
                               const UniformStream& uniforms, const SolverOptions& options,
                               TangentTracker* tracker) {
    validate_fields(fields);
    if (y0.size() != fields.state_dim) {
        throw ArgumentError("event_sde_solve: y0 dimension does not match the vector fields");
    }
    if (!(dt > 0.0)) {
        throw ArgumentError("event_sde_solve: dt must be positive");
    }
    if (!(T >= t0)) {
        throw ArgumentError("event_sde_solve: require t0 <= T");
    }
    if (driver.dim() != fields.noise_dim) {
        throw ArgumentError("event_sde_solve: driver dimension does not match the diffusion");
    }
    if (T > t0 && (t0 < driver.t0() || T > driver.t1())) {
        throw RangeError("event_sde_solve: [t0, T] exceeds the driver span");
    }
    for (const auto& spec : specs) {
        if (!spec.event_fn) {
            throw ArgumentError("event_sde_solve: every event spec needs an event function");
        }
    }
    if (tracker) {
        if (tracker->J.rows() != y0.size()) {
            throw ArgumentError("forward_sensitivity: seed rows must equal the state dimension");
        }
        tracker->time_grad = RowVector::Zero(tracker->J.cols());
        tracker->event_time_grads.clear();
    }
    Solver solver(fields, specs, driver, max_events, t0, dt, T, uniforms, options, tracker);
    return solver.run(y0);
}

} // namespace detail

EventSolution event_sde_solve(const Vector& y0, const VectorFields& fields,
                              std::span<const EventSpec> specs, const BrownianDriver& driver,
                              std::size_t max_events, double t0, double dt, double T,
                              const UniformStream& uniforms, const SolverOptions& options) {
    return detail::run_event_solver(y0, fields, specs, driver, max_events, t0, dt, T, uniforms,
                                    options, nullptr);
}

} // namespace esde
