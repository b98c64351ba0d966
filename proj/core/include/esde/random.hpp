#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so batch simulations can be regenerated in any
// order and in parallel without sharing generator state.

#include <cstdint>
#include <string_view>
#include <vector>

namespace esde {

/// splitmix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Stable 64-bit hash of a purpose string (FNV-1a followed by mix64).
std::uint64_t hash_purpose(std::string_view purpose) noexcept;

/// Sub-seed for a named purpose ("brownian", "transition", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) noexcept;

/// Per-sample seed: seed xor hash(index).
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Uniform draw in the open interval (0, 1).
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept;

/// Standard normal draw (Box-Muller on two counter uniforms).
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept;

namespace streams {
inline constexpr std::uint64_t brownian = 0x42524f574eULL;
inline constexpr std::uint64_t transition = 0x5452414e53ULL;
inline constexpr std::uint64_t generic = 0x47454e4552ULL;
} // namespace streams

/// Uniform samples indexed by an event counter. Either keyed by a seed or
/// backed by an explicit (frozen) sequence; a frozen sequence repeats its
/// last value when exhausted. The solver draws with `for_event`: seeded
/// streams key the draw by (label, occurrence of that label), so events of
/// different labels swapping order keep their own samples; frozen sequences
/// are consumed in global event order.
class UniformStream {
public:
    explicit UniformStream(std::uint64_t seed) : seed_(seed) {}

    static UniformStream fixed(std::vector<double> values);

    double operator()(std::uint64_t counter) const;

    double for_event(int label, std::uint64_t occurrence, std::uint64_t index) const;

    std::uint64_t seed() const noexcept { return seed_; }
    bool is_fixed() const noexcept { return !values_.empty(); }

private:
    UniformStream() = default;

    std::uint64_t seed_ = 0;
    std::vector<double> values_;
};

} // namespace esde
