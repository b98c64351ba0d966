#include "esde/random.hpp"

#include <cmath>
#include <numbers>

#include "esde/errors.hpp"

namespace esde {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_purpose(std::string_view purpose) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) noexcept {
    return mix64(seed ^ hash_purpose(purpose));
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return seed ^ mix64(index + 0x5851f42d4c957f2dULL);
}

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept {
    const std::uint64_t bits = mix64(mix64(seed ^ mix64(stream)) + counter);
    // 53 random bits centred in their cell: strictly inside (0, 1).
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept {
    const double u1 = counter_uniform(seed, stream, 2 * counter);
    const double u2 = counter_uniform(seed, stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

UniformStream UniformStream::fixed(std::vector<double> values) {
    if (values.empty()) {
        throw ArgumentError("UniformStream::fixed: empty sequence");
    }
    for (double u : values) {
        if (!(u > 0.0 && u <= 1.0)) {
            throw ArgumentError("UniformStream::fixed: values must lie in (0, 1]");
        }
    }
    UniformStream s;
    s.values_ = std::move(values);
    return s;
}

double UniformStream::operator()(std::uint64_t counter) const {
    if (!values_.empty()) {
        return counter < values_.size() ? values_[counter] : values_.back();
    }
    return counter_uniform(seed_, streams::transition, counter);
}

double UniformStream::for_event(int label, std::uint64_t occurrence, std::uint64_t index) const {
    if (!values_.empty()) {
        return (*this)(index);
    }
    const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(label)) << 32) ^
                              occurrence;
    return counter_uniform(seed_, streams::transition, key);
}

} // namespace esde
