#pragma once

#include <span>
#include <vector>

#include "esde/signature.hpp"

namespace esde::detail {

/// out = scale * (a (x) b), row-major with b's index fastest.
inline void outer(std::span<const double> a, std::span<const double> b, double scale,
                  std::vector<double>& out) {
    out.resize(a.size() * b.size());
    std::size_t q = 0;
    for (double x : a) {
        const double s = x * scale;
        for (double y : b) {
            out[q++] = s * y;
        }
    }
}

/// Adjoint of right multiplication by E: <A (x) E, W> = <A, result>.
TruncatedSignature right_adjoint(const TruncatedSignature& E, const TruncatedSignature& W);

/// Adjoint of left multiplication by P: <P (x) X, W> = <X, result>.
TruncatedSignature left_adjoint(const TruncatedSignature& P, const TruncatedSignature& W);

/// Gradient of <exp(delta), G> with respect to delta.
Vector exp_pullback(const TruncatedSignature& G, std::span<const double> delta);

} // namespace esde::detail
