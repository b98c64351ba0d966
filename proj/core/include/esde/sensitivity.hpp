#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "esde/events.hpp"

namespace esde {

/// Total derivatives of the solution with respect to the seed directions
/// (by default the initial condition, so jac_state starts as the identity).
struct SensitivityState {
    Matrix jac_state;
    std::vector<RowVector> event_time_grads;
    double t = 0.0;
};

struct AssumptionRecord {
    std::size_t event_index = 0;
    int label = 0;
    double commutation = 0.0;   ///< ||sigma(T(y)) - grad T(y) sigma(y)||
    double orthogonality = 0.0; ///< ||grad E(y) sigma(y)||
    double transversality = 0.0; ///< grad E(y) mu(y)
    bool pass = true;
};

struct AssumptionReport {
    std::vector<AssumptionRecord> records;
    double atol = 1e-8;
    bool commutation_ok = true;
    bool orthogonality_ok = true;
    bool transversality_ok = true;

    bool pass() const noexcept { return commutation_ok && orthogonality_ok && transversality_ok; }
    double max_commutation() const noexcept;
    double max_orthogonality() const noexcept;
};

/// Propagates J0 along a stored segment with the primal scheme and steps.
Matrix variational_segment(const PathSegment& segment, const Matrix& J0, const VectorFields& fields,
                           const BrownianDriver& driver, Scheme scheme = Scheme::heun);

/// -(grad E . grad_pre) / (grad E . velocity). Throws TransversalityError
/// when the denominator is below 1e-8 in magnitude.
RowVector event_time_gradient(const RowVector& event_grad, const Matrix& grad_pre,
                              const Vector& velocity);

/// Same, with the velocity taken as mu(y_pre).
RowVector event_time_gradient(const Matrix& grad_pre, const Vector& y_pre,
                              const VectorFields& fields, const EventSpec& spec);

/// Post-transition seed grad T . grad_pre - (v_post - grad T . v_pre) grad_tau.
/// With v_pre = mu(y_pre) and v_post = mu(y_post) this is the continuous-time
/// jump relation; the solver passes its discrete step velocities instead.
Matrix transition_gradient(const Matrix& grad_pre, const RowVector& grad_tau, const Vector& y_pre,
                           double u, const EventSpec& spec, const Vector& velocity_pre,
                           const Vector& velocity_post);

Matrix transition_gradient(const Matrix& grad_pre, const RowVector& grad_tau, const Vector& y_pre,
                           const Vector& y_post, double u, const VectorFields& fields,
                           const EventSpec& spec);

struct SensitivityResult {
    EventSolution solution;
    SensitivityState sensitivity;
    std::optional<AssumptionReport> assumptions;
    std::vector<std::string> warnings;
};

struct SensitivityOptions {
    SolverOptions solver;
    /// Seed directions (e x p). Empty means the e x e identity.
    Matrix seed;
    bool check_assumptions = true;
};

/// Event solve with the discrete tangent of every step, event localisation
/// and transition carried alongside. Event-time perturbations move along the
/// interpolated driver, so the tangent is exact for the discrete solver.
SensitivityResult forward_sensitivity(const Vector& y0, const VectorFields& fields,
                                      std::span<const EventSpec> specs,
                                      const BrownianDriver& driver, std::size_t max_events,
                                      double t0, double dt, double T, const UniformStream& uniforms,
                                      const SensitivityOptions& options = {});

using OutputSelector = std::function<double(const EventSolution&)>;

OutputSelector select_event_time(std::size_t n);
OutputSelector select_final_state(Eigen::Index i);

/// Central differences of `output` with respect to the listed coordinates of
/// y0 (all coordinates when `coordinates` is empty), against the same driver
/// and uniform stream. The discrete solution map has kinks where an event
/// crosses a grid node, so h is divided by 10 (at most twice) while a
/// perturbation changes the event count or the grid cell of an event;
/// NonDifferentiableError is thrown when that does not help.
RowVector finite_difference_oracle(const Vector& y0, const VectorFields& fields,
                                   std::span<const EventSpec> specs, const BrownianDriver& driver,
                                   const UniformStream& uniforms, std::size_t max_events,
                                   double t0, double dt, double T, const OutputSelector& output,
                                   double h = 1e-5, const SolverOptions& options = {},
                                   const std::vector<Eigen::Index>& coordinates = {});

AssumptionReport check_assumptions(const EventSolution& solution, const VectorFields& fields,
                                   std::span<const EventSpec> specs, double atol = 1e-8);

} // namespace esde
