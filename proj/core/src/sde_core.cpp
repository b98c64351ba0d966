#include "esde/sde_core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "esde/errors.hpp"
#include "esde/random.hpp"

namespace esde {

namespace {

std::size_t node_count(double t0, double t1, double resolution) {
    const double cells = (t1 - t0) / resolution;
    // Treat ratios within rounding of an integer as exact.
    const double rounded = std::round(cells);
    const double n = std::abs(cells - rounded) <= 1e-9 * std::max(1.0, rounded) ? rounded
                                                                                : std::ceil(cells);
    return static_cast<std::size_t>(n) + 1;
}

void require_finite(const Vector& v, double t, const Vector& y, const char* what) {
    if (!v.allFinite()) {
        std::ostringstream os;
        os << what << " is not finite at t = " << t;
        throw NumericalError(os.str(), t, std::vector<double>(y.data(), y.data() + y.size()));
    }
}

} // namespace

BrownianDriver::BrownianDriver(int dim, double t0, double t1, double resolution,
                               std::uint64_t seed)
    : resolution_(resolution), seed_(seed) {
    if (dim <= 0) {
        throw ArgumentError("BrownianDriver: dimension must be positive");
    }
    if (!(resolution > 0.0)) {
        throw ArgumentError("BrownianDriver: resolution must be positive");
    }
    if (!(t0 < t1)) {
        throw ArgumentError("BrownianDriver: require t0 < t1");
    }
    const std::size_t n = node_count(t0, t1, resolution);
    grid_.resize(n);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        grid_[k] = t0 + static_cast<double>(k) * resolution;
    }
    grid_.back() = t1;

    values_.resize(dim, static_cast<Eigen::Index>(n));
    values_.col(0).setZero();
    const auto d = static_cast<std::uint64_t>(dim);
    for (std::size_t k = 1; k < n; ++k) {
        const double scale = std::sqrt(grid_[k] - grid_[k - 1]);
        for (int c = 0; c < dim; ++c) {
            const std::uint64_t counter = (k - 1) * d + static_cast<std::uint64_t>(c);
            values_(c, static_cast<Eigen::Index>(k)) =
                values_(c, static_cast<Eigen::Index>(k - 1)) +
                scale * counter_normal(seed, streams::brownian, counter);
        }
    }
}

BrownianDriver::BrownianDriver(std::vector<double> grid, Matrix values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (grid_.size() < 2 || static_cast<Eigen::Index>(grid_.size()) != values_.cols()) {
        throw ArgumentError("BrownianDriver: grid and values must have matching length >= 2");
    }
    if (values_.rows() <= 0) {
        throw ArgumentError("BrownianDriver: dimension must be positive");
    }
    for (std::size_t k = 1; k < grid_.size(); ++k) {
        if (!(grid_[k] > grid_[k - 1])) {
            throw ArgumentError("BrownianDriver: grid must be strictly increasing");
        }
    }
    resolution_ = grid_[1] - grid_[0];
}

Vector BrownianDriver::evaluate(double t) const {
    if (!(t >= grid_.front() && t <= grid_.back())) {
        std::ostringstream os;
        os << "BrownianDriver: t = " << t << " outside [" << grid_.front() << ", "
           << grid_.back() << "]";
        throw RangeError(os.str());
    }
    const auto it = std::upper_bound(grid_.begin(), grid_.end(), t);
    const auto k = static_cast<Eigen::Index>(std::distance(grid_.begin(), it)) - 1;
    if (grid_[static_cast<std::size_t>(k)] == t) {
        return values_.col(k);
    }
    const double a = grid_[static_cast<std::size_t>(k)];
    const double b = grid_[static_cast<std::size_t>(k) + 1];
    const double w = (t - a) / (b - a);
    return values_.col(k) + w * (values_.col(k + 1) - values_.col(k));
}

Vector BrownianDriver::slope(double t) const {
    if (!(t >= grid_.front() && t <= grid_.back())) {
        std::ostringstream os;
        os << "BrownianDriver: t = " << t << " outside [" << grid_.front() << ", "
           << grid_.back() << "]";
        throw RangeError(os.str());
    }
    if (grid_.size() < 2) {
        return Vector::Zero(values_.rows());
    }
    auto k = static_cast<std::size_t>(std::distance(grid_.begin(),
                                                    std::upper_bound(grid_.begin(), grid_.end(), t)));
    k = std::clamp<std::size_t>(k, 1, grid_.size() - 1);
    const auto c = static_cast<Eigen::Index>(k);
    return (values_.col(c) - values_.col(c - 1)) / (grid_[k] - grid_[k - 1]);
}

BrownianDriver sample_driver(int dim, double t0, double t1, double resolution, std::uint64_t seed) {
    return BrownianDriver(dim, t0, t1, resolution, seed);
}

Vector evaluate_driver(const BrownianDriver& driver, double t) { return driver.evaluate(t); }

void validate_fields(const VectorFields& fields) {
    if (fields.state_dim <= 0 || fields.noise_dim <= 0) {
        throw ArgumentError("VectorFields: state and noise dimensions must be positive");
    }
    if (!fields.drift || !fields.diffusion) {
        throw ArgumentError("VectorFields: drift and diffusion are required");
    }
}

Matrix drift_jacobian(const VectorFields& fields, const Vector& y) {
    if (fields.drift_jacobian) {
        return fields.drift_jacobian(y);
    }
    const Eigen::Index e = y.size();
    Matrix jac(e, e);
    Vector yp = y;
    for (Eigen::Index i = 0; i < e; ++i) {
        const double h = 1e-6 * (1.0 + std::abs(y(i)));
        yp(i) = y(i) + h;
        const Vector fp = fields.drift(yp);
        yp(i) = y(i) - h;
        const Vector fm = fields.drift(yp);
        yp(i) = y(i);
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

std::vector<Matrix> diffusion_jacobian(const VectorFields& fields, const Vector& y) {
    const Eigen::Index e = y.size();
    const int d = fields.noise_dim;
    if (fields.constant_diffusion) {
        return std::vector<Matrix>(static_cast<std::size_t>(d), Matrix::Zero(e, e));
    }
    if (fields.diffusion_jacobian) {
        return fields.diffusion_jacobian(y);
    }
    std::vector<Matrix> jac(static_cast<std::size_t>(d), Matrix(e, e));
    Vector yp = y;
    for (Eigen::Index i = 0; i < e; ++i) {
        const double h = 1e-6 * (1.0 + std::abs(y(i)));
        yp(i) = y(i) + h;
        const Matrix sp = fields.diffusion(yp);
        yp(i) = y(i) - h;
        const Matrix sm = fields.diffusion(yp);
        yp(i) = y(i);
        for (int j = 0; j < d; ++j) {
            jac[static_cast<std::size_t>(j)].col(i) = (sp.col(j) - sm.col(j)) / (2.0 * h);
        }
    }
    return jac;
}

Matrix apply_drift_jacobian(const VectorFields& fields, const Vector& y, const Matrix& J) {
    if (fields.drift_tangent) {
        return fields.drift_tangent(y, J);
    }
    return drift_jacobian(fields, y) * J;
}

Matrix apply_diffusion_jacobian(const VectorFields& fields, const Vector& y, const Vector& dB,
                                const Matrix& J) {
    Matrix out = Matrix::Zero(J.rows(), J.cols());
    if (fields.constant_diffusion) {
        return out;
    }
    const auto jac = diffusion_jacobian(fields, y);
    for (std::size_t j = 0; j < jac.size(); ++j) {
        out.noalias() += dB(static_cast<Eigen::Index>(j)) * (jac[j] * J);
    }
    return out;
}

const char* to_string(Scheme scheme) noexcept {
    switch (scheme) {
    case Scheme::heun:
        return "heun";
    case Scheme::euler_maruyama:
        return "euler";
    }
    return "unknown";
}

Scheme scheme_from_string(const std::string& name) {
    if (name == "heun") {
        return Scheme::heun;
    }
    if (name == "euler" || name == "euler_maruyama") {
        return Scheme::euler_maruyama;
    }
    throw ArgumentError("unknown scheme '" + name + "' (expected heun or euler)");
}

Vector stratonovich_step(const Vector& y, double t, double dt, const VectorFields& fields,
                         const BrownianDriver& driver, Scheme scheme) {
    if (!(dt > 0.0)) {
        throw ArgumentError("stratonovich_step: dt must be positive");
    }
    require_finite(y, t, y, "state");
    const Vector dB = driver.increment(t, t + dt);
    const Vector mu = fields.drift(y);
    const Matrix sigma = fields.diffusion(y);
    require_finite(mu, t, y, "drift");
    require_finite(sigma.reshaped(), t, y, "diffusion");

    Vector out;
    if (scheme == Scheme::euler_maruyama) {
        out = y + mu * dt + sigma * dB;
    } else {
        const Vector pred = y + mu * dt + sigma * dB;
        const Vector mu_p = fields.drift(pred);
        const Matrix sigma_p = fields.diffusion(pred);
        out = y + 0.5 * (mu + mu_p) * dt + 0.5 * (sigma + sigma_p) * dB;
    }
    require_finite(out, t + dt, y, "step result");
    return out;
}

LinearizedStep linearized_step(const Vector& y, double t, double dt, const VectorFields& fields,
                               const BrownianDriver& driver, Scheme scheme, const Matrix& J) {
    if (!(dt > 0.0)) {
        throw ArgumentError("linearized_step: dt must be positive");
    }
    require_finite(y, t, y, "state");
    const Vector dB = driver.increment(t, t + dt);
    const Vector mu = fields.drift(y);
    const Matrix sigma = fields.diffusion(y);
    require_finite(mu, t, y, "drift");

    const Vector dB_dt = driver.slope(t + 0.5 * dt);

    LinearizedStep out;
    const Matrix dmu_J = apply_drift_jacobian(fields, y, J);
    if (scheme == Scheme::euler_maruyama) {
        out.state = y + mu * dt + sigma * dB;
        out.tangent = J + dmu_J * dt;
        if (!fields.constant_diffusion) {
            out.tangent += apply_diffusion_jacobian(fields, y, dB, J);
        }
        out.velocity = mu + sigma * dB_dt;
    } else {
        const Vector pred = y + mu * dt + sigma * dB;
        Matrix pred_J = J + dmu_J * dt;
        if (!fields.constant_diffusion) {
            pred_J += apply_diffusion_jacobian(fields, y, dB, J);
        }
        const Vector mu_p = fields.drift(pred);
        const Matrix sigma_p = fields.diffusion(pred);
        out.state = y + 0.5 * (mu + mu_p) * dt + 0.5 * (sigma + sigma_p) * dB;

        const Matrix dmu_p_J = apply_drift_jacobian(fields, pred, pred_J);
        out.tangent = J + 0.5 * (dmu_J + dmu_p_J) * dt;

        const Matrix pred_dot = mu + sigma * dB_dt;
        out.velocity = 0.5 * (mu + mu_p) + 0.5 * (sigma + sigma_p) * dB_dt +
                       0.5 * dt * apply_drift_jacobian(fields, pred, pred_dot).col(0);
        if (!fields.constant_diffusion) {
            out.tangent += 0.5 * (apply_diffusion_jacobian(fields, y, dB, J) +
                                  apply_diffusion_jacobian(fields, pred, dB, pred_J));
            out.velocity += 0.5 * apply_diffusion_jacobian(fields, pred, dB, pred_dot).col(0);
        }
    }
    require_finite(out.state, t + dt, y, "step result");
    require_finite(out.tangent.reshaped(), t + dt, y, "step tangent");
    return out;
}

PathSegment solve_segment(const Vector& y0, double t0, double t1, double dt,
                          const VectorFields& fields, const BrownianDriver& driver, Scheme scheme) {
    if (!(dt > 0.0)) {
        throw ArgumentError("solve_segment: dt must be positive");
    }
    if (t1 < t0) {
        throw ArgumentError("solve_segment: require t0 <= t1");
    }
    PathSegment seg;
    seg.t_start = t0;
    seg.t_end = t1;
    seg.times.push_back(t0);
    seg.states.push_back(y0);
    Vector y = y0;
    double t = t0;
    for (std::size_t k = 1; t < t1; ++k) {
        const double next = std::min(t0 + static_cast<double>(k) * dt, t1);
        if (next <= t) {
            continue;
        }
        y = stratonovich_step(y, t, next - t, fields, driver, scheme);
        t = next;
        seg.times.push_back(t);
        seg.states.push_back(y);
    }
    return seg;
}

} // namespace esde
