#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace esde {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument or precondition violation.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Evaluation point outside of the admissible domain.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Non-finite state or vector-field output during integration.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, double t, std::vector<double> state)
        : Error(what), time_(t), state_(std::move(state)) {}

    double time() const noexcept { return time_; }
    const std::vector<double>& state() const noexcept { return state_; }

private:
    double time_;
    std::vector<double> state_;
};

/// Root-finding was asked to locate an event without a sign change.
class BracketError : public Error {
public:
    using Error::Error;
};

/// Iterative procedure ran out of its iteration budget.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// The model violates a structural requirement (for example a transition
/// landing inside an event surface).
class ModelError : public Error {
public:
    using Error::Error;
};

/// Several events of one type inside a single step even after refinement.
class StepSizeError : public Error {
public:
    using Error::Error;
};

/// Drift is tangent to the event surface, so the event time is not
/// differentiable.
class TransversalityError : public Error {
public:
    using Error::Error;
};

/// A finite-difference perturbation changed the number of events.
class NonDifferentiableError : public Error {
public:
    using Error::Error;
};

/// Requested tensor sizes exceed the configured memory budget.
class CapacityError : public Error {
public:
    using Error::Error;
};

class OptimizerError : public Error {
public:
    using Error::Error;
};

/// Failure while training; carries the seed of the offending sample.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::uint64_t seed) : Error(what), seed_(seed) {}
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
};

} // namespace esde
