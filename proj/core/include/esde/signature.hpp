#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "esde/sde_core.hpp"

namespace esde {

/// Right-continuous path of bounded variation. A jump at time t is stored as
/// two nodes with the same time stamp: the left limit first, then the
/// post-jump value (flagged in `jump`).
struct CadlagPath {
    std::vector<double> times;
    Matrix values; ///< d x n, one column per node.
    std::vector<bool> jump;

    int dim() const noexcept { return static_cast<int>(values.rows()); }
    std::size_t size() const noexcept { return times.size(); }
};

/// Continuous piecewise-linear path. `clock` is the original (pre-Marcus)
/// time of every node; it equals `times` for paths without jumps.
struct LinearPath {
    std::vector<double> times;
    std::vector<double> clock;
    Matrix values; ///< d x n

    int dim() const noexcept { return static_cast<int>(values.rows()); }
    std::size_t size() const noexcept { return times.size(); }
};

/// Counting path of K spike trains on [0, T]. If `jump_nodes` is given it
/// receives, for each neuron and spike, the index of the post-jump node.
CadlagPath spikes_to_path(const std::vector<std::vector<double>>& trains, double T,
                          std::vector<std::vector<std::size_t>>* jump_nodes = nullptr);

/// Replaces every jump by a linear segment over fictitious time with budget
/// proportional to the jump size (total `fraction` times the time span), then
/// rescales time back onto the original span.
LinearPath marcus_interpolate(const CadlagPath& path, double fraction = 0.1);

/// Appends the original clock as an extra (last) coordinate.
LinearPath time_augment(const LinearPath& path);

/// Levels 0..M of a truncated tensor series over R^d, stored contiguously.
/// Level n holds d^n entries in row-major (last index fastest) order.
class TruncatedSignature {
public:
    TruncatedSignature() = default;
    TruncatedSignature(int dim, int depth);

    int dim() const noexcept { return dim_; }
    int depth() const noexcept { return depth_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> level(int n) noexcept;
    std::span<const double> level(int n) const noexcept;
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    std::size_t offset(int n) const noexcept { return offsets_[static_cast<std::size_t>(n)]; }
    std::size_t level_size(int n) const noexcept {
        return offsets_[static_cast<std::size_t>(n) + 1] - offsets_[static_cast<std::size_t>(n)];
    }

    Eigen::Map<Vector> vector() noexcept {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }
    Eigen::Map<const Vector> vector() const noexcept {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    /// Euclidean norm over all levels, level 0 included.
    double norm() const noexcept;

    /// The unit element (1, 0, 0, ...).
    static TruncatedSignature identity(int dim, int depth);

private:
    int dim_ = 0;
    int depth_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<double> data_;
};

/// Number of scalars in levels 0..depth; throws CapacityError above `budget`.
std::size_t tensor_size(int dim, int depth, std::size_t budget = std::size_t{1} << 24);

/// In-place right multiplication by exp(increment).
void multiply_exp(TruncatedSignature& sig, std::span<const double> increment);

TruncatedSignature tensor_exp(std::span<const double> increment, int depth);

/// Product of segment exponentials along the path's nodes.
TruncatedSignature truncated_signature(const LinearPath& path, int depth,
                                       std::size_t budget = std::size_t{1} << 24);
TruncatedSignature truncated_signature(const Matrix& nodes, int depth,
                                       std::size_t budget = std::size_t{1} << 24);

/// Truncated tensor product (Chen's identity for concatenated paths).
TruncatedSignature chen_product(const TruncatedSignature& a, const TruncatedSignature& b);

/// Rescales level n by lambda^n so that the norm equals R whenever it
/// exceeds R.
TruncatedSignature robust_normalize(const TruncatedSignature& sig, double R);

double inner_product(const TruncatedSignature& a, const TruncatedSignature& b);

enum class Normalization { none, robust };

struct KernelConfig {
    int depth = 3;
    Normalization normalization = Normalization::none;
    double R = 2.0;
    bool time_augment = true;
    double marcus_fraction = 0.1;
    std::size_t budget = std::size_t{1} << 24;
};

void validate_kernel_config(const KernelConfig& cfg);

/// Marcus interpolation, optional time augmentation, truncated signature and
/// optional normalisation.
TruncatedSignature path_signature(const CadlagPath& path, const KernelConfig& cfg);

double signature_kernel(const CadlagPath& x, const CadlagPath& y, const KernelConfig& cfg);

Matrix gram_matrix(std::span<const CadlagPath> paths, const KernelConfig& cfg);
Matrix gram_matrix(std::span<const TruncatedSignature> sigs);

/// Unbiased estimator of MMD^2 between the laws of X and Y.
double mmd_unbiased(std::span<const CadlagPath> X, std::span<const CadlagPath> Y,
                    const KernelConfig& cfg);
double mmd_unbiased(std::span<const TruncatedSignature> X, std::span<const TruncatedSignature> Y);

struct PermutationTest {
    double statistic = 0.0;
    double p_value = 1.0;
    double null_mean = 0.0;
    double null_sd = 0.0;
    int permutations = 0;
};

/// Permutation test of the unbiased MMD statistic; p = (1 + #{null >= obs}) /
/// (1 + permutations).
PermutationTest mmd_permutation_test(std::span<const TruncatedSignature> X,
                                     std::span<const TruncatedSignature> Y, int permutations,
                                     std::uint64_t seed);

/// Gradient of <S(path), Z> with respect to every node coordinate (d x n),
/// by reverse accumulation through the segment exponentials.
Matrix signature_pairing_gradient(const Matrix& nodes, const TruncatedSignature& Z);

/// dMMD / dS(Y_j) for each Y_j (unnormalised signatures only).
std::vector<TruncatedSignature> mmd_signature_gradients(std::span<const TruncatedSignature> X,
                                                        std::span<const TruncatedSignature> Y);

/// Gradient of <S(spike path), Z> with respect to each spike time. Requires
/// time augmentation (spike times only enter through the clock coordinate)
/// and no normalisation.
std::vector<std::vector<double>> spike_time_gradient(const std::vector<std::vector<double>>& trains,
                                                     double T, const TruncatedSignature& Z,
                                                     const KernelConfig& cfg);

} // namespace esde
