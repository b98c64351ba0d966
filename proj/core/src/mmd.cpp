#include <cmath>
#include <numeric>

#include "esde/errors.hpp"
#include "esde/random.hpp"
#include "esde/signature.hpp"
#include "tensor_ops.hpp"

namespace esde {

namespace detail {

namespace {

Eigen::Map<const Matrix> as_matrix(std::span<const double> t, std::size_t rows, std::size_t cols) {
    return {t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<const Vector> as_vector(std::span<const double> t) {
    return {t.data(), static_cast<Eigen::Index>(t.size())};
}

} // namespace

TruncatedSignature right_adjoint(const TruncatedSignature& E, const TruncatedSignature& W) {
    const int M = W.depth();
    TruncatedSignature out(W.dim(), M);
    for (int k = 0; k <= M; ++k) {
        Eigen::Map<Vector> res(out.level(k).data(), static_cast<Eigen::Index>(out.level_size(k)));
        for (int m = 0; k + m <= M; ++m) {
            const auto Wl = W.level(k + m);
            res.noalias() += as_matrix(Wl, E.level_size(m), out.level_size(k)).transpose() *
                             as_vector(E.level(m));
        }
    }
    return out;
}

TruncatedSignature left_adjoint(const TruncatedSignature& P, const TruncatedSignature& W) {
    const int M = W.depth();
    TruncatedSignature out(W.dim(), M);
    for (int k = 0; k <= M; ++k) {
        Eigen::Map<Vector> res(out.level(k).data(), static_cast<Eigen::Index>(out.level_size(k)));
        for (int m = 0; k + m <= M; ++m) {
            const auto Wl = W.level(m + k);
            res.noalias() += as_matrix(Wl, out.level_size(k), P.level_size(m)) * as_vector(P.level(m));
        }
    }
    return out;
}

Vector exp_pullback(const TruncatedSignature& G, std::span<const double> delta) {
    const auto d = static_cast<std::size_t>(G.dim());
    const Eigen::Map<const Vector> dv(delta.data(), static_cast<Eigen::Index>(d));
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(d));
    double factorial = 1.0;
    for (int n = 1; n <= G.depth(); ++n) {
        factorial *= n;
        // Slot p carries the derivative; every other slot is contracted with delta.
        Vector left = as_vector(G.level(n));
        for (int p = 0; p < n; ++p) {
            Vector t = left;
            for (int r = 0; r < n - 1 - p; ++r) {
                const std::size_t rest = static_cast<std::size_t>(t.size()) / d;
                t = Eigen::Map<const Matrix>(t.data(), static_cast<Eigen::Index>(d),
                                             static_cast<Eigen::Index>(rest))
                        .transpose() *
                    dv;
            }
            grad += t / factorial;
            const std::size_t rest = static_cast<std::size_t>(left.size()) / d;
            left = Eigen::Map<const Matrix>(left.data(), static_cast<Eigen::Index>(rest),
                                            static_cast<Eigen::Index>(d)) *
                   dv;
        }
    }
    return grad;
}

} // namespace detail

double mmd_unbiased(std::span<const TruncatedSignature> X, std::span<const TruncatedSignature> Y) {
    if (X.size() < 2 || Y.size() < 2) {
        throw ArgumentError("mmd_unbiased: both batches need at least two paths");
    }
    const auto size = static_cast<Eigen::Index>(X.front().size());
    Vector sx = Vector::Zero(size);
    Vector sy = Vector::Zero(size);
    double dx = 0.0;
    double dy = 0.0;
    for (const auto& s : X) {
        if (static_cast<Eigen::Index>(s.size()) != size) {
            throw ArgumentError("mmd_unbiased: signature shapes differ");
        }
        sx += s.vector();
        dx += s.vector().squaredNorm();
    }
    for (const auto& s : Y) {
        if (static_cast<Eigen::Index>(s.size()) != size) {
            throw ArgumentError("mmd_unbiased: signature shapes differ");
        }
        sy += s.vector();
        dy += s.vector().squaredNorm();
    }
    const double m = static_cast<double>(X.size());
    const double n = static_cast<double>(Y.size());
    const double kxx = sx.squaredNorm() - dx;
    const double kyy = sy.squaredNorm() - dy;
    const double kxy = sx.dot(sy);
    return kxx / (m * (m - 1.0)) - 2.0 * kxy / (m * n) + kyy / (n * (n - 1.0));
}

double mmd_unbiased(std::span<const CadlagPath> X, std::span<const CadlagPath> Y,
                    const KernelConfig& cfg) {
    if (X.size() < 2 || Y.size() < 2) {
        throw ArgumentError("mmd_unbiased: both batches need at least two paths");
    }
    std::vector<TruncatedSignature> sx;
    std::vector<TruncatedSignature> sy;
    for (const auto& p : X) {
        sx.push_back(path_signature(p, cfg));
    }
    for (const auto& p : Y) {
        if (p.dim() != X.front().dim()) {
            throw ArgumentError("mmd_unbiased: path dimensions differ");
        }
        sy.push_back(path_signature(p, cfg));
    }
    return mmd_unbiased(sx, sy);
}

PermutationTest mmd_permutation_test(std::span<const TruncatedSignature> X,
                                     std::span<const TruncatedSignature> Y, int permutations,
                                     std::uint64_t seed) {
    if (permutations < 1) {
        throw ArgumentError("mmd_permutation_test: need at least one permutation");
    }
    PermutationTest res;
    res.permutations = permutations;
    res.statistic = mmd_unbiased(X, Y);

    std::vector<TruncatedSignature> pooled(X.begin(), X.end());
    pooled.insert(pooled.end(), Y.begin(), Y.end());
    std::vector<std::size_t> idx(pooled.size());
    std::vector<TruncatedSignature> a(X.size());
    std::vector<TruncatedSignature> b(Y.size());
    int exceed = 0;
    double sum = 0.0;
    double sum_sq = 0.0;
    std::uint64_t counter = 0;
    for (int p = 0; p < permutations; ++p) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = idx.size() - 1; i > 0; --i) {
            const double u = counter_uniform(seed, streams::generic, counter++);
            const auto j = static_cast<std::size_t>(u * static_cast<double>(i + 1));
            std::swap(idx[i], idx[std::min(j, i)]);
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = pooled[idx[i]];
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            b[i] = pooled[idx[a.size() + i]];
        }
        const double stat = mmd_unbiased(a, b);
        exceed += stat >= res.statistic ? 1 : 0;
        sum += stat;
        sum_sq += stat * stat;
    }
    const double P = static_cast<double>(permutations);
    res.p_value = (1.0 + exceed) / (1.0 + P);
    res.null_mean = sum / P;
    res.null_sd = permutations > 1
                      ? std::sqrt(std::max(0.0, (sum_sq - P * res.null_mean * res.null_mean) / (P - 1.0)))
                      : 0.0;
    return res;
}

Matrix signature_pairing_gradient(const Matrix& nodes, const TruncatedSignature& Z) {
    const Eigen::Index d = nodes.rows();
    const Eigen::Index n = nodes.cols();
    if (d != Z.dim()) {
        throw ArgumentError("signature_pairing_gradient: dimension mismatch");
    }
    Matrix grad = Matrix::Zero(d, n);
    if (n < 2) {
        return grad;
    }
    const int M = Z.depth();
    std::vector<TruncatedSignature> prefix;
    prefix.reserve(static_cast<std::size_t>(n));
    prefix.push_back(TruncatedSignature::identity(static_cast<int>(d), M));
    Vector delta(d);
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        delta = nodes.col(i) - nodes.col(i - 1);
        TruncatedSignature next = prefix.back();
        multiply_exp(next, {delta.data(), static_cast<std::size_t>(d)});
        prefix.push_back(std::move(next));
    }

    TruncatedSignature W = Z;
    for (Eigen::Index i = n - 1; i >= 1; --i) {
        delta = nodes.col(i) - nodes.col(i - 1);
        const std::span<const double> ds(delta.data(), static_cast<std::size_t>(d));
        const TruncatedSignature G = detail::left_adjoint(prefix[static_cast<std::size_t>(i - 1)], W);
        const Vector g = detail::exp_pullback(G, ds);
        grad.col(i) += g;
        grad.col(i - 1) -= g;
        if (i > 1) {
            W = detail::right_adjoint(tensor_exp(ds, M), W);
        }
    }
    return grad;
}

std::vector<TruncatedSignature> mmd_signature_gradients(std::span<const TruncatedSignature> X,
                                                        std::span<const TruncatedSignature> Y) {
    if (X.size() < 2 || Y.size() < 2) {
        throw ArgumentError("mmd_signature_gradients: both batches need at least two paths");
    }
    const double m = static_cast<double>(X.size());
    const double n = static_cast<double>(Y.size());
    TruncatedSignature sx(X.front().dim(), X.front().depth());
    TruncatedSignature sy(Y.front().dim(), Y.front().depth());
    for (const auto& s : X) {
        sx.vector() += s.vector();
    }
    for (const auto& s : Y) {
        sy.vector() += s.vector();
    }
    std::vector<TruncatedSignature> out;
    out.reserve(Y.size());
    for (const auto& s : Y) {
        TruncatedSignature z(s.dim(), s.depth());
        z.vector() = (-2.0 / (m * n)) * sx.vector() +
                     (2.0 / (n * (n - 1.0))) * (sy.vector() - s.vector());
        out.push_back(std::move(z));
    }
    return out;
}

std::vector<std::vector<double>> spike_time_gradient(const std::vector<std::vector<double>>& trains,
                                                     double T, const TruncatedSignature& Z,
                                                     const KernelConfig& cfg) {
    validate_kernel_config(cfg);
    if (!cfg.time_augment) {
        throw ArgumentError("spike_time_gradient: spike times enter only through time augmentation");
    }
    if (cfg.normalization != Normalization::none) {
        throw ArgumentError("spike_time_gradient: normalised signatures are not supported");
    }
    std::vector<std::vector<std::size_t>> jump_nodes;
    const CadlagPath path = spikes_to_path(trains, T, &jump_nodes);
    const LinearPath lp = time_augment(marcus_interpolate(path, cfg.marcus_fraction));
    const Matrix grad = signature_pairing_gradient(lp.values, Z);
    const Eigen::Index time_row = lp.values.rows() - 1;

    std::vector<std::vector<double>> out(trains.size());
    for (std::size_t k = 0; k < trains.size(); ++k) {
        out[k].resize(trains[k].size());
        for (std::size_t s = 0; s < trains[k].size(); ++s) {
            const auto q = static_cast<Eigen::Index>(jump_nodes[k][s]);
            double g = grad(time_row, q);
            // The left-limit node shares the spike time unless it is the fixed start node.
            if (q > 1) {
                g += grad(time_row, q - 1);
            }
            out[k][s] = g;
        }
    }
    return out;
}

} // namespace esde
