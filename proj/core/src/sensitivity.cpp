#include "esde/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "esde/errors.hpp"
#include "event_loop.hpp"

namespace esde {

namespace {

const EventSpec& spec_for_label(std::span<const EventSpec> specs, int label) {
    for (const auto& s : specs) {
        if (s.label == label) {
            return s;
        }
    }
    throw ArgumentError("no event spec with label " + std::to_string(label));
}

} // namespace

double AssumptionReport::max_commutation() const noexcept {
    double m = 0.0;
    for (const auto& r : records) {
        m = std::max(m, r.commutation);
    }
    return m;
}

double AssumptionReport::max_orthogonality() const noexcept {
    double m = 0.0;
    for (const auto& r : records) {
        m = std::max(m, r.orthogonality);
    }
    return m;
}

Matrix variational_segment(const PathSegment& segment, const Matrix& J0, const VectorFields& fields,
                           const BrownianDriver& driver, Scheme scheme) {
    if (segment.times.size() != segment.states.size() || segment.times.empty()) {
        throw ArgumentError("variational_segment: malformed segment");
    }
    if (J0.rows() != segment.states.front().size()) {
        throw ArgumentError("variational_segment: J0 rows must equal the state dimension");
    }
    Matrix J = J0;
    for (std::size_t k = 0; k + 1 < segment.times.size(); ++k) {
        const double h = segment.times[k + 1] - segment.times[k];
        J = linearized_step(segment.states[k], segment.times[k], h, fields, driver, scheme, J).tangent;
    }
    return J;
}

RowVector event_time_gradient(const RowVector& event_grad, const Matrix& grad_pre,
                              const Vector& velocity) {
    if (event_grad.size() != grad_pre.rows() || velocity.size() != grad_pre.rows()) {
        throw ArgumentError("event_time_gradient: dimension mismatch");
    }
    const double denom = event_grad.dot(velocity);
    if (!(std::abs(denom) >= 1e-8)) {
        std::ostringstream os;
        os << "event_time_gradient: transversality violated (grad E . mu = " << denom << ")";
        throw TransversalityError(os.str());
    }
    return -(event_grad * grad_pre) / denom;
}

RowVector event_time_gradient(const Matrix& grad_pre, const Vector& y_pre,
                              const VectorFields& fields, const EventSpec& spec) {
    return event_time_gradient(event_gradient(spec, y_pre), grad_pre, fields.drift(y_pre));
}

Matrix transition_gradient(const Matrix& grad_pre, const RowVector& grad_tau, const Vector& y_pre,
                           double u, const EventSpec& spec, const Vector& velocity_pre,
                           const Vector& velocity_post) {
    const Eigen::Index e = y_pre.size();
    if (grad_pre.rows() != e || grad_tau.size() != grad_pre.cols() || velocity_pre.size() != e ||
        velocity_post.size() != e) {
        throw ArgumentError("transition_gradient: dimension mismatch");
    }
    Matrix stacked(e, grad_pre.cols() + 1);
    stacked.leftCols(grad_pre.cols()) = grad_pre;
    stacked.rightCols(1) = velocity_pre;
    const Matrix mapped = apply_transition_jacobian(spec, y_pre, u, stacked);
    Matrix seed = mapped.leftCols(grad_pre.cols());
    const Vector jump = velocity_post - mapped.rightCols(1);
    seed.noalias() -= jump * grad_tau;
    return seed;
}

Matrix transition_gradient(const Matrix& grad_pre, const RowVector& grad_tau, const Vector& y_pre,
                           const Vector& y_post, double u, const VectorFields& fields,
                           const EventSpec& spec) {
    return transition_gradient(grad_pre, grad_tau, y_pre, u, spec, fields.drift(y_pre),
                               fields.drift(y_post));
}

SensitivityResult forward_sensitivity(const Vector& y0, const VectorFields& fields,
                                      std::span<const EventSpec> specs,
                                      const BrownianDriver& driver, std::size_t max_events,
                                      double t0, double dt, double T, const UniformStream& uniforms,
                                      const SensitivityOptions& options) {
    detail::TangentTracker tracker;
    if (options.seed.size() == 0) {
        tracker.J = Matrix::Identity(y0.size(), y0.size());
    } else {
        tracker.J = options.seed;
    }
    SensitivityResult out;
    out.solution = detail::run_event_solver(y0, fields, specs, driver, max_events, t0, dt, T,
                                            uniforms, options.solver, &tracker);
    out.sensitivity.jac_state = std::move(tracker.J);
    out.sensitivity.event_time_grads = std::move(tracker.event_time_grads);
    out.sensitivity.t = out.solution.final_time;
    if (options.check_assumptions) {
        out.assumptions = check_assumptions(out.solution, fields, specs);
        if (!out.assumptions->commutation_ok) {
            out.warnings.emplace_back("commutation condition between diffusion and transition fails");
        }
        if (!out.assumptions->orthogonality_ok) {
            out.warnings.emplace_back("event gradient is not orthogonal to the diffusion");
        }
        if (!out.assumptions->transversality_ok) {
            out.warnings.emplace_back("drift is nearly tangent to an event surface");
        }
    }
    return out;
}

OutputSelector select_event_time(std::size_t n) {
    return [n](const EventSolution& sol) {
        if (n >= sol.event_count()) {
            throw ArgumentError("select_event_time: event " + std::to_string(n) +
                                " did not occur");
        }
        return sol.event_times[n];
    };
}

OutputSelector select_final_state(Eigen::Index i) {
    return [i](const EventSolution& sol) {
        if (i < 0 || i >= sol.final_state.size()) {
            throw ArgumentError("select_final_state: index out of range");
        }
        return sol.final_state(i);
    };
}

RowVector finite_difference_oracle(const Vector& y0, const VectorFields& fields,
                                   std::span<const EventSpec> specs, const BrownianDriver& driver,
                                   const UniformStream& uniforms, std::size_t max_events,
                                   double t0, double dt, double T, const OutputSelector& output,
                                   double h, const SolverOptions& options,
                                   const std::vector<Eigen::Index>& coordinates) {
    if (!(h > 0.0)) {
        throw ArgumentError("finite_difference_oracle: h must be positive");
    }
    SolverOptions opts = options;
    opts.record_segments = false;
    const EventSolution base =
        event_sde_solve(y0, fields, specs, driver, max_events, t0, dt, T, uniforms, opts);
    auto cell = [&](double t) { return std::floor((t - t0) / dt); };
    auto same_structure = [&](const EventSolution& s) {
        if (s.event_count() != base.event_count()) {
            return false;
        }
        for (std::size_t n = 0; n < s.event_count(); ++n) {
            if (cell(s.event_times[n]) != cell(base.event_times[n])) {
                return false;
            }
        }
        return true;
    };

    std::vector<Eigen::Index> coords = coordinates;
    if (coords.empty()) {
        for (Eigen::Index i = 0; i < y0.size(); ++i) {
            coords.push_back(i);
        }
    }
    RowVector grad(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t c = 0; c < coords.size(); ++c) {
        const Eigen::Index i = coords[c];
        if (i < 0 || i >= y0.size()) {
            throw ArgumentError("finite_difference_oracle: coordinate out of range");
        }
        double step = h;
        for (int attempt = 0;; ++attempt) {
            Vector yp = y0;
            Vector ym = y0;
            yp(i) += step;
            ym(i) -= step;
            const EventSolution sp =
                event_sde_solve(yp, fields, specs, driver, max_events, t0, dt, T, uniforms, opts);
            const EventSolution sm =
                event_sde_solve(ym, fields, specs, driver, max_events, t0, dt, T, uniforms, opts);
            if (same_structure(sp) && same_structure(sm)) {
                grad(static_cast<Eigen::Index>(c)) = (output(sp) - output(sm)) / (2.0 * step);
                break;
            }
            if (attempt == 2) {
                std::ostringstream os;
                os << "finite_difference_oracle: perturbing coordinate " << i << " by " << step
                   << " changes the event count (" << sm.event_count() << ", " << base.event_count()
                   << ", " << sp.event_count() << ") or moves an event across a grid node";
                throw NonDifferentiableError(os.str());
            }
            step /= 10.0;
        }
    }
    return grad;
}

AssumptionReport check_assumptions(const EventSolution& solution, const VectorFields& fields,
                                   std::span<const EventSpec> specs, double atol) {
    AssumptionReport report;
    report.atol = atol;
    for (std::size_t n = 0; n < solution.event_count(); ++n) {
        const auto& spec = spec_for_label(specs, solution.event_labels[n]);
        const Vector& y = solution.pre_event_states[n];
        const double u = solution.event_uniforms[n];

        AssumptionRecord rec;
        rec.event_index = n;
        rec.label = spec.label;
        const Matrix sigma = fields.diffusion(y);
        const Vector y_post = spec.transition_fn ? spec.transition_fn(y, u) : y;
        const Matrix mapped = spec.transition_fn ? apply_transition_jacobian(spec, y, u, sigma) : sigma;
        rec.commutation = (fields.diffusion(y_post) - mapped).norm();
        const RowVector grad_e = event_gradient(spec, y);
        rec.orthogonality = (grad_e * sigma).norm();
        rec.transversality = grad_e.dot(fields.drift(y));
        const bool comm = rec.commutation <= atol;
        const bool orth = rec.orthogonality <= atol;
        const bool trans = std::abs(rec.transversality) >= 1e-8;
        rec.pass = comm && orth && trans;
        report.commutation_ok = report.commutation_ok && comm;
        report.orthogonality_ok = report.orthogonality_ok && orth;
        report.transversality_ok = report.transversality_ok && trans;
        report.records.push_back(rec);
    }
    return report;
}

} // namespace esde
