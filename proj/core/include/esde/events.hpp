#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "esde/random.hpp"
#include "esde/sde_core.hpp"

namespace esde {

/// An event surface E(y) = 0 together with the transition applied when the
/// trajectory reaches it. The sign convention is E < 0 before the event.
struct EventSpec {
    int label = 0;

    std::function<double(const Vector&)> event_fn;
    /// Optional analytic gradient of event_fn (a 1 x e row).
    std::function<RowVector(const Vector&)> event_gradient;

    /// Transition T(y, u); u is a uniform sample for randomised transitions.
    std::function<Vector(const Vector&, double)> transition_fn;
    /// Optional analytic Jacobian of T with respect to y.
    std::function<Matrix(const Vector&, double)> transition_jacobian;
    /// Optional fast path for M -> grad(T)(y, u) M.
    std::function<Matrix(const Vector&, double, const Matrix&)> transition_tangent;
};

RowVector event_gradient(const EventSpec& spec, const Vector& y);
Matrix transition_jacobian(const EventSpec& spec, const Vector& y, double u);
Matrix apply_transition_jacobian(const EventSpec& spec, const Vector& y, double u, const Matrix& M);

struct EventSolution {
    std::vector<PathSegment> segments;
    std::vector<double> event_times;
    std::vector<int> event_labels;
    std::vector<Vector> pre_event_states;
    std::vector<Vector> post_event_states;
    std::vector<double> event_uniforms;
    Vector final_state;
    /// T, or the time of the last event when the event budget ran out first.
    double final_time = 0.0;

    std::size_t event_count() const noexcept { return event_times.size(); }
};

struct SolverOptions {
    Scheme scheme = Scheme::heun;
    /// Absolute tolerance on |E| at located events.
    double root_tol = 1e-10;
    bool record_segments = true;
    /// Number of step halvings tried before a repeated event inside a single
    /// step is reported as a StepSizeError.
    int max_refinements = 2;
    /// Optional per-label lower bound on the gap between consecutive events
    /// of that label (empty disables the check).
    std::vector<double> refractory_bounds;
    /// Optional per-label event counts; when non-empty the solve also stops
    /// once every label has fired at least its count.
    std::vector<std::size_t> stop_counts;
};

struct EventLocation {
    double time = 0.0;
    Vector state;
};

/// Locates t* in (t0, t0 + dt] with E(step(y0, t0, t* - t0)) = 0. Every probe
/// re-solves a single step from (t0, y0) against the frozen driver.
EventLocation locate_event(const Vector& y0, double t0, double dt, const VectorFields& fields,
                           const BrownianDriver& driver,
                           const std::function<double(const Vector&)>& event_fn,
                           double tol = 1e-10, Scheme scheme = Scheme::heun);

/// Applies spec's transition and rejects outputs that sit on (or beyond) any
/// event surface in `all_specs`.
Vector apply_transition(const EventSpec& spec, const Vector& y, double u,
                        std::span<const EventSpec> all_specs = {}, double tol = 1e-10);

/// Steps the inter-event SDE on the grid t0 + k dt, detects sign changes of
/// each event function at step ends, localises the earliest one (ties go to
/// the lowest label), applies its transition and continues until `max_events`
/// events have fired or T is reached.
EventSolution event_sde_solve(const Vector& y0, const VectorFields& fields,
                              std::span<const EventSpec> specs, const BrownianDriver& driver,
                              std::size_t max_events, double t0, double dt, double T,
                              const UniformStream& uniforms, const SolverOptions& options = {});

} // namespace esde
