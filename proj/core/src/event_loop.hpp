#pragma once

#include <vector>

#include "esde/events.hpp"

namespace esde::detail {

/// Forward-mode state carried alongside the primal solve: J is the total
/// derivative of the current state, time_grad the derivative of the current
/// time (non-zero only right after an event).
struct TangentTracker {
    Matrix J;
    RowVector time_grad;
    std::vector<RowVector> event_time_grads;
};

EventSolution run_event_solver(const Vector& y0, const VectorFields& fields,
                               std::span<const EventSpec> specs, const BrownianDriver& driver,
                               std::size_t max_events, double t0, double dt, double T,
                               const UniformStream& uniforms, const SolverOptions& options,
                               TangentTracker* tracker);

} // namespace esde::detail
