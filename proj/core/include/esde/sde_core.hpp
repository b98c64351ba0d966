#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace esde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Seeded d-dimensional Brownian path sampled on a fixed grid and linearly
/// interpolated in between. Node values are cumulative sums of Gaussian
/// increments keyed by (seed, node index), so regeneration is bit-identical
/// and independent of evaluation order.
class BrownianDriver {
public:
    BrownianDriver(int dim, double t0, double t1, double resolution, std::uint64_t seed);

    /// Driver with explicit node values (one column per node). Mostly useful
    /// for tests that need a hand-crafted path.
    BrownianDriver(std::vector<double> grid, Matrix values);

    int dim() const noexcept { return static_cast<int>(values_.rows()); }
    double t0() const noexcept { return grid_.front(); }
    double t1() const noexcept { return grid_.back(); }
    double resolution() const noexcept { return resolution_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t size() const noexcept { return grid_.size(); }

    std::span<const double> grid() const noexcept { return grid_; }
    const Matrix& values() const noexcept { return values_; }

    /// Linear interpolation; exact node values at grid nodes.
    Vector evaluate(double t) const;

    Vector increment(double s, double t) const { return evaluate(t) - evaluate(s); }

    /// Time derivative of the interpolant on the grid interval containing t.
    Vector slope(double t) const;

private:
    std::vector<double> grid_;
    Matrix values_;
    double resolution_ = 0.0;
    std::uint64_t seed_ = 0;
};

BrownianDriver sample_driver(int dim, double t0, double t1, double resolution, std::uint64_t seed);

Vector evaluate_driver(const BrownianDriver& driver, double t);

/// Drift mu: R^e -> R^e and diffusion sigma: R^e -> R^{e x d}, with optional
/// analytic derivatives. Missing Jacobians fall back to central finite
/// differences with step 1e-6 * (1 + |y_i|).
struct VectorFields {
    int state_dim = 0;
    int noise_dim = 0;

    std::function<Vector(const Vector&)> drift;
    std::function<Matrix(const Vector&)> diffusion;

    std::function<Matrix(const Vector&)> drift_jacobian;
    /// One e x e matrix per noise column: d sigma_{., j} / dy.
    std::function<std::vector<Matrix>(const Vector&)> diffusion_jacobian;

    /// Optional fast path for J -> grad(mu)(y) J.
    std::function<Matrix(const Vector&, const Matrix&)> drift_tangent;

    /// sigma does not depend on the state; skips all diffusion derivatives.
    bool constant_diffusion = false;
};

void validate_fields(const VectorFields& fields);

Matrix drift_jacobian(const VectorFields& fields, const Vector& y);
std::vector<Matrix> diffusion_jacobian(const VectorFields& fields, const Vector& y);

/// grad(mu)(y) * J.
Matrix apply_drift_jacobian(const VectorFields& fields, const Vector& y, const Matrix& J);

/// sum_j grad(sigma_j)(y) * J * dB_j.
Matrix apply_diffusion_jacobian(const VectorFields& fields, const Vector& y, const Vector& dB,
                                const Matrix& J);

enum class Scheme {
    heun,           ///< Stratonovich predictor-corrector.
    euler_maruyama, ///< Coincides with Stratonovich when sigma is state independent.
};

const char* to_string(Scheme scheme) noexcept;
Scheme scheme_from_string(const std::string& name);

/// One step from (t, y) to t + dt using the driver increment over that span.
Vector stratonovich_step(const Vector& y, double t, double dt, const VectorFields& fields,
                         const BrownianDriver& driver, Scheme scheme = Scheme::heun);

/// Step output together with its exact linearisation: the tangent A*J of the
/// step map and the step's derivative with respect to its length, with the
/// driver increment growing at the interpolant's slope.
struct LinearizedStep {
    Vector state;
    Matrix tangent;
    Vector velocity;
};

LinearizedStep linearized_step(const Vector& y, double t, double dt, const VectorFields& fields,
                               const BrownianDriver& driver, Scheme scheme, const Matrix& J);

struct PathSegment {
    std::vector<double> times;
    std::vector<Vector> states;
    double t_start = 0.0;
    double t_end = 0.0;
};

/// Integrates from t0 to t1 on the grid t0 + k dt; the final partial step is
/// shortened to land on t1.
PathSegment solve_segment(const Vector& y0, double t0, double t1, double dt,
                          const VectorFields& fields, const BrownianDriver& driver,
                          Scheme scheme = Scheme::heun);

} // namespace esde
