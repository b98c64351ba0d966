#include "esde/signature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

#include "esde/errors.hpp"
#include "tensor_ops.hpp"

namespace esde {

CadlagPath spikes_to_path(const std::vector<std::vector<double>>& trains, double T,
                          std::vector<std::vector<std::size_t>>* jump_nodes) {
    if (trains.empty()) {
        throw ArgumentError("spikes_to_path: need at least one spike train");
    }
    if (!(T > 0.0)) {
        throw ArgumentError("spikes_to_path: T must be positive");
    }
    const auto K = static_cast<Eigen::Index>(trains.size());
    std::vector<std::tuple<double, std::size_t, std::size_t>> spikes;
    for (std::size_t k = 0; k < trains.size(); ++k) {
        for (std::size_t s = 0; s < trains[k].size(); ++s) {
            const double t = trains[k][s];
            if (!(t >= 0.0 && t <= T)) {
                std::ostringstream os;
                os << "spikes_to_path: spike at " << t << " outside [0, " << T << "]";
                throw ArgumentError(os.str());
            }
            spikes.emplace_back(t, k, s);
        }
    }
    std::sort(spikes.begin(), spikes.end());
    if (jump_nodes) {
        jump_nodes->assign(trains.size(), {});
        for (std::size_t k = 0; k < trains.size(); ++k) {
            (*jump_nodes)[k].resize(trains[k].size());
        }
    }

    std::vector<double> times;
    std::vector<Vector> nodes;
    std::vector<bool> jump;
    Vector count = Vector::Zero(K);
    times.push_back(0.0);
    nodes.push_back(count);
    jump.push_back(false);

    std::size_t q = 0;
    while (q < spikes.size()) {
        const double t = std::get<0>(spikes[q]);
        if (!(times.back() == t && nodes.back() == count)) {
            times.push_back(t);
            nodes.push_back(count);
            jump.push_back(false);
        }
        const std::size_t post = times.size();
        for (; q < spikes.size() && std::get<0>(spikes[q]) == t; ++q) {
            const auto k = std::get<1>(spikes[q]);
            count(static_cast<Eigen::Index>(k)) += 1.0;
            if (jump_nodes) {
                (*jump_nodes)[k][std::get<2>(spikes[q])] = post;
            }
        }
        times.push_back(t);
        nodes.push_back(count);
        jump.push_back(true);
    }
    if (times.back() < T) {
        times.push_back(T);
        nodes.push_back(count);
        jump.push_back(false);
    }

    CadlagPath path;
    path.times = std::move(times);
    path.jump = std::move(jump);
    path.values.resize(K, static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        path.values.col(static_cast<Eigen::Index>(i)) = nodes[i];
    }
    return path;
}

LinearPath marcus_interpolate(const CadlagPath& path, double fraction) {
    const std::size_t n = path.times.size();
    if (n == 0 || static_cast<Eigen::Index>(n) != path.values.cols()) {
        throw ArgumentError("marcus_interpolate: malformed path");
    }
    if (!(fraction > 0.0)) {
        throw ArgumentError("marcus_interpolate: fictitious-time fraction must be positive");
    }
    std::vector<double> size(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        if (path.times[i] < path.times[i - 1]) {
            throw ArgumentError("marcus_interpolate: times must be nondecreasing");
        }
        if (path.times[i] == path.times[i - 1]) {
            size[i] = (path.values.col(static_cast<Eigen::Index>(i)) -
                       path.values.col(static_cast<Eigen::Index>(i - 1)))
                          .norm();
            total += size[i];
        }
    }

    LinearPath out;
    out.clock = path.times;
    out.values = path.values;
    out.times = path.times;
    if (total == 0.0) {
        return out;
    }
    const double start = path.times.front();
    const double span = path.times.back() - start;
    const double r = span > 0.0 ? fraction * span : fraction;
    const double scale = span > 0.0 ? span / (span + r) : 1.0;
    double shift = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        shift += r * size[i] / total;
        out.times[i] = start + (path.times[i] - start + shift) * scale;
    }
    return out;
}

LinearPath time_augment(const LinearPath& path) {
    LinearPath out;
    out.times = path.times;
    out.clock = path.clock;
    out.values.resize(path.values.rows() + 1, path.values.cols());
    out.values.topRows(path.values.rows()) = path.values;
    for (std::size_t i = 0; i < path.clock.size(); ++i) {
        out.values(path.values.rows(), static_cast<Eigen::Index>(i)) = path.clock[i];
    }
    return out;
}

std::size_t tensor_size(int dim, int depth, std::size_t budget) {
    if (dim < 1 || depth < 0) {
        throw ArgumentError("tensor_size: need dim >= 1 and depth >= 0");
    }
    std::size_t total = 1;
    std::size_t level = 1;
    for (int n = 1; n <= depth; ++n) {
        if (level > budget / static_cast<std::size_t>(dim)) {
            level = budget + 1;
        } else {
            level *= static_cast<std::size_t>(dim);
        }
        total += level;
        if (total > budget) {
            std::ostringstream os;
            os << "signature of dimension " << dim << " at depth " << depth
               << " exceeds the tensor budget of " << budget
               << " scalars; lower the depth or the path dimension";
            throw CapacityError(os.str());
        }
    }
    return total;
}

TruncatedSignature::TruncatedSignature(int dim, int depth) : dim_(dim), depth_(depth) {
    if (dim < 1 || depth < 0) {
        throw ArgumentError("TruncatedSignature: need dim >= 1 and depth >= 0");
    }
    offsets_.resize(static_cast<std::size_t>(depth) + 2);
    offsets_[0] = 0;
    std::size_t level = 1;
    for (int n = 0; n <= depth; ++n) {
        offsets_[static_cast<std::size_t>(n) + 1] = offsets_[static_cast<std::size_t>(n)] + level;
        level *= static_cast<std::size_t>(dim);
    }
    data_.assign(offsets_.back(), 0.0);
}

std::span<double> TruncatedSignature::level(int n) noexcept {
    return {data_.data() + offset(n), level_size(n)};
}

std::span<const double> TruncatedSignature::level(int n) const noexcept {
    return {data_.data() + offset(n), level_size(n)};
}

double TruncatedSignature::norm() const noexcept { return vector().norm(); }

TruncatedSignature TruncatedSignature::identity(int dim, int depth) {
    TruncatedSignature s(dim, depth);
    s.data_[0] = 1.0;
    return s;
}

void multiply_exp(TruncatedSignature& sig, std::span<const double> increment) {
    const int d = sig.dim();
    if (static_cast<int>(increment.size()) != d) {
        throw ArgumentError("multiply_exp: increment dimension mismatch");
    }
    const int M = sig.depth();
    if (M == 0) {
        return;
    }
    std::vector<double> acc;
    std::vector<double> tmp;
    acc.reserve(sig.level_size(M));
    tmp.reserve(sig.level_size(M));
    const double s0 = sig.level(0)[0];
    // Horner evaluation of sum_k S_k (x) D^{n-k} / (n-k)!, highest level first
    // so that lower levels are still the old values.
    for (int n = M; n >= 1; --n) {
        acc.assign(increment.begin(), increment.end());
        const double c0 = s0 / static_cast<double>(n);
        for (double& a : acc) {
            a *= c0;
        }
        for (int k = 1; k < n; ++k) {
            const auto Sk = sig.level(k);
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += Sk[i];
            }
            detail::outer(acc, increment, 1.0 / static_cast<double>(n - k), tmp);
            acc.swap(tmp);
        }
        auto Sn = sig.level(n);
        for (std::size_t i = 0; i < acc.size(); ++i) {
            Sn[i] += acc[i];
        }
    }
}

TruncatedSignature tensor_exp(std::span<const double> increment, int depth) {
    TruncatedSignature s = TruncatedSignature::identity(static_cast<int>(increment.size()), depth);
    multiply_exp(s, increment);
    return s;
}

TruncatedSignature truncated_signature(const Matrix& nodes, int depth, std::size_t budget) {
    if (depth < 1) {
        throw ArgumentError("truncated_signature: depth must be at least 1");
    }
    if (nodes.rows() < 1 || nodes.cols() < 1) {
        throw ArgumentError("truncated_signature: empty path");
    }
    tensor_size(static_cast<int>(nodes.rows()), depth, budget);
    TruncatedSignature sig = TruncatedSignature::identity(static_cast<int>(nodes.rows()), depth);
    Vector delta(nodes.rows());
    for (Eigen::Index i = 1; i < nodes.cols(); ++i) {
        delta = nodes.col(i) - nodes.col(i - 1);
        multiply_exp(sig, {delta.data(), static_cast<std::size_t>(delta.size())});
    }
    return sig;
}

TruncatedSignature truncated_signature(const LinearPath& path, int depth, std::size_t budget) {
    return truncated_signature(path.values, depth, budget);
}

TruncatedSignature chen_product(const TruncatedSignature& a, const TruncatedSignature& b) {
    if (a.dim() != b.dim() || a.depth() != b.depth()) {
        throw ArgumentError("chen_product: shape mismatch");
    }
    const int M = a.depth();
    TruncatedSignature c(a.dim(), M);
    for (int n = 0; n <= M; ++n) {
        auto cn = c.level(n);
        for (int k = 0; k <= n; ++k) {
            const auto ak = a.level(k);
            const auto bk = b.level(n - k);
            Eigen::Map<Matrix> out(cn.data(), static_cast<Eigen::Index>(bk.size()),
                                   static_cast<Eigen::Index>(ak.size()));
            Eigen::Map<const Vector> av(ak.data(), static_cast<Eigen::Index>(ak.size()));
            Eigen::Map<const Vector> bv(bk.data(), static_cast<Eigen::Index>(bk.size()));
            out.noalias() += bv * av.transpose();
        }
    }
    return c;
}

TruncatedSignature robust_normalize(const TruncatedSignature& sig, double R) {
    if (!(R > 1.0)) {
        throw ArgumentError("robust_normalize: R must exceed 1");
    }
    const double norm = sig.norm();
    if (norm <= R) {
        return sig;
    }
    std::vector<double> sq(static_cast<std::size_t>(sig.depth()) + 1);
    for (int n = 0; n <= sig.depth(); ++n) {
        const auto l = sig.level(n);
        sq[static_cast<std::size_t>(n)] = std::inner_product(l.begin(), l.end(), l.begin(), 0.0);
    }
    auto excess = [&](double lam) {
        double s = 0.0;
        double p = 1.0;
        for (double q : sq) {
            s += p * q;
            p *= lam * lam;
        }
        return s - R * R;
    };
    // The squared norm is increasing in lambda; keep the lower end so the
    // result never exceeds R.
    double lo = 0.0;
    double hi = 1.0;
    for (int iter = 0; iter < 200 && hi - lo > 1e-17; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double f = excess(mid);
        if (f <= 0.0) {
            lo = mid;
            if (f >= -1e-12) {
                break;
            }
        } else {
            hi = mid;
        }
    }
    TruncatedSignature out = sig;
    double p = 1.0;
    for (int n = 0; n <= sig.depth(); ++n) {
        for (double& x : out.level(n)) {
            x *= p;
        }
        p *= lo;
    }
    return out;
}

double inner_product(const TruncatedSignature& a, const TruncatedSignature& b) {
    if (a.dim() != b.dim() || a.depth() != b.depth()) {
        throw ArgumentError("inner_product: shape mismatch");
    }
    return a.vector().dot(b.vector());
}

void validate_kernel_config(const KernelConfig& cfg) {
    if (cfg.depth < 1) {
        throw ArgumentError("kernel depth must be at least 1");
    }
    if (cfg.normalization == Normalization::robust && !(cfg.R > 1.0)) {
        throw ArgumentError("robust normalisation needs R > 1");
    }
    if (!(cfg.marcus_fraction > 0.0)) {
        throw ArgumentError("Marcus fictitious-time fraction must be positive");
    }
}

TruncatedSignature path_signature(const CadlagPath& path, const KernelConfig& cfg) {
    validate_kernel_config(cfg);
    LinearPath lp = marcus_interpolate(path, cfg.marcus_fraction);
    if (cfg.time_augment) {
        lp = time_augment(lp);
    }
    TruncatedSignature sig = truncated_signature(lp, cfg.depth, cfg.budget);
    if (cfg.normalization == Normalization::robust) {
        sig = robust_normalize(sig, cfg.R);
    }
    return sig;
}

double signature_kernel(const CadlagPath& x, const CadlagPath& y, const KernelConfig& cfg) {
    if (x.dim() != y.dim()) {
        throw ArgumentError("signature_kernel: path dimensions differ");
    }
    return inner_product(path_signature(x, cfg), path_signature(y, cfg));
}

Matrix gram_matrix(std::span<const TruncatedSignature> sigs) {
    if (sigs.empty()) {
        return Matrix(0, 0);
    }
    Matrix F(static_cast<Eigen::Index>(sigs.front().size()), static_cast<Eigen::Index>(sigs.size()));
    for (std::size_t i = 0; i < sigs.size(); ++i) {
        if (sigs[i].size() != sigs.front().size()) {
            throw ArgumentError("gram_matrix: signature shapes differ");
        }
        F.col(static_cast<Eigen::Index>(i)) = sigs[i].vector();
    }
    return F.transpose() * F;
}

Matrix gram_matrix(std::span<const CadlagPath> paths, const KernelConfig& cfg) {
    std::vector<TruncatedSignature> sigs;
    sigs.reserve(paths.size());
    for (const auto& p : paths) {
        if (p.dim() != paths.front().dim()) {
            throw ArgumentError("gram_matrix: path dimensions differ");
        }
        sigs.push_back(path_signature(p, cfg));
    }
    return gram_matrix(sigs);
}

} // namespace esde
