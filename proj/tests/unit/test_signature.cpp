#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <esde/errors.hpp>
#include <esde/random.hpp>
#include <esde/signature.hpp>

using namespace esde;

namespace {

Matrix random_nodes(std::mt19937_64& rng, int d, int n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(d, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < d; ++i) {
            m(i, j) = u(rng);
        }
    }
    return m;
}

double max_diff(const TruncatedSignature& a, const TruncatedSignature& b) {
    return (a.vector() - b.vector()).cwiseAbs().maxCoeff();
}

/// Homogeneous Poisson spike times on [0, T].
std::vector<std::vector<double>> poisson(double rate, double T, std::uint64_t seed) {
    std::vector<double> t;
    double now = 0.0;
    for (std::uint64_t k = 0;; ++k) {
        now += -std::log(counter_uniform(seed, streams::generic, k)) / rate;
        if (now > T) {
            break;
        }
        t.push_back(now);
    }
    return {t};
}

std::vector<TruncatedSignature> poisson_signatures(double rate, std::size_t n, std::uint64_t seed,
                                                   const KernelConfig& cfg) {
    std::vector<TruncatedSignature> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(path_signature(spikes_to_path(poisson(rate, 1.0, sample_seed(seed, i)), 1.0), cfg));
    }
    return out;
}

} // namespace

TEST(SpikePath, EmptyTrainIsConstant) {
    const CadlagPath p = spikes_to_path({{}}, 2.0);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p.times.front(), 0.0);
    EXPECT_EQ(p.times.back(), 2.0);
    EXPECT_EQ(p.values.norm(), 0.0);
}

TEST(SpikePath, SingleSpike) {
    const CadlagPath p = spikes_to_path({{0.4}}, 1.0);
    ASSERT_EQ(p.size(), 4u);
    const double times[] = {0.0, 0.4, 0.4, 1.0};
    const double values[] = {0.0, 0.0, 1.0, 1.0};
    for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(p.times[static_cast<std::size_t>(j)], times[j]);
        EXPECT_EQ(p.values(0, j), values[j]);
    }
    EXPECT_FALSE(p.jump[1]);
    EXPECT_TRUE(p.jump[2]);
}

TEST(SpikePath, InterleavedStaircaseIsMonotone) {
    const CadlagPath p = spikes_to_path({{0.1, 0.5, 0.7}, {0.3, 0.6}}, 1.0);
    for (std::size_t j = 1; j < p.size(); ++j) {
        EXPECT_GE(p.times[j], p.times[j - 1]);
        for (int i = 0; i < 2; ++i) {
            EXPECT_GE(p.values(i, static_cast<Eigen::Index>(j)), p.values(i, static_cast<Eigen::Index>(j - 1)));
        }
    }
    EXPECT_EQ(p.values(0, static_cast<Eigen::Index>(p.size() - 1)), 3.0);
    EXPECT_EQ(p.values(1, static_cast<Eigen::Index>(p.size() - 1)), 2.0);
}

TEST(Marcus, ContinuousInputUnchanged) {
    CadlagPath p;
    p.times = {0.0, 0.3, 1.0};
    p.values = (Matrix(2, 3) << 0.0, 1.0, 0.5, 0.0, -1.0, 2.0).finished();
    p.jump = {false, false, false};
    const LinearPath l = marcus_interpolate(p);
    EXPECT_EQ(l.values, p.values);
    EXPECT_EQ(l.times, p.times);
    EXPECT_EQ(l.clock, p.times);
}

TEST(Marcus, JumpBecomesSegment) {
    const LinearPath l = marcus_interpolate(spikes_to_path({{0.4}}, 1.0), 0.1);
    ASSERT_EQ(l.size(), 4u);
    for (std::size_t j = 1; j < l.size(); ++j) {
        EXPECT_GT(l.times[j], l.times[j - 1]);
    }
    EXPECT_EQ(l.clock[1], 0.4);
    EXPECT_EQ(l.clock[2], 0.4);
    EXPECT_EQ(l.times.front(), 0.0);
    EXPECT_EQ(l.times.back(), 1.0);
}

TEST(Marcus, SignatureIndependentOfBudget) {
    const CadlagPath p = spikes_to_path({{0.1, 0.5}, {0.3, 0.9}}, 1.0);
    for (double f : {0.05, 0.3}) {
        KernelConfig a;
        a.depth = 4;
        a.marcus_fraction = 0.1;
        KernelConfig b = a;
        b.marcus_fraction = f;
        EXPECT_LE(max_diff(path_signature(p, a), path_signature(p, b)), 1e-12);
    }
}

TEST(TimeAugment, ConstantPath) {
    const LinearPath l = time_augment(marcus_interpolate(spikes_to_path({{}}, 2.0)));
    ASSERT_EQ(l.dim(), 2);
    EXPECT_EQ(l.values.col(0), Vector::Zero(2));
    EXPECT_EQ(l.values(0, 1), 0.0);
    EXPECT_EQ(l.values(1, 1), 2.0);
}

TEST(TimeAugment, SpikeTimeEntersLevelTwo) {
    // Level 2 of (N, t) with a single jump at s: S^{N t} = T - s, S^{t N} = s.
    KernelConfig cfg;
    cfg.depth = 2;
    const auto a = path_signature(spikes_to_path({{0.3}}, 1.0), cfg);
    const auto b = path_signature(spikes_to_path({{0.5}}, 1.0), cfg);
    EXPECT_NEAR(a.level(2)[1], 0.7, 1e-14);
    EXPECT_NEAR(a.level(2)[2], 0.3, 1e-14);
    EXPECT_NEAR(b.level(2)[1], 0.5, 1e-14);
    EXPECT_NEAR(b.level(2)[2], 0.5, 1e-14);
    const auto c = path_signature(spikes_to_path({{0.3}}, 1.0), cfg);
    EXPECT_EQ(max_diff(a, c), 0.0);
}

TEST(Signature, SingleSegmentIsTensorExponential) {
    const double inc[] = {0.5, -2.0};
    Matrix nodes(2, 2);
    nodes << 0.0, 0.5, 1.0, -1.0;
    const auto s = truncated_signature(nodes, 2);
    EXPECT_EQ(s.level(0)[0], 1.0);
    EXPECT_DOUBLE_EQ(s.level(1)[0], inc[0]);
    EXPECT_DOUBLE_EQ(s.level(1)[1], inc[1]);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            EXPECT_DOUBLE_EQ(s.level(2)[static_cast<std::size_t>(2 * i + j)], inc[i] * inc[j] / 2.0);
        }
    }
    EXPECT_LE(max_diff(s, tensor_exp(inc, 2)), 1e-15);
}

TEST(Signature, LevelOneIsTotalIncrement) {
    std::mt19937_64 rng(1);
    const Matrix nodes = random_nodes(rng, 3, 12);
    const auto s = truncated_signature(nodes, 3);
    const Vector inc = nodes.col(11) - nodes.col(0);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(s.level(1)[static_cast<std::size_t>(i)], inc(i), 1e-14);
    }
}

TEST(Signature, ChenIdentity) {
    std::mt19937_64 rng(2);
    for (int depth = 1; depth <= 4; ++depth) {
        for (int trial = 0; trial < 25; ++trial) {
            const Matrix nodes = random_nodes(rng, 2 + trial % 2, 9);
            const auto whole = truncated_signature(nodes, depth);
            const auto left = truncated_signature(Matrix(nodes.leftCols(5)), depth);
            const auto right = truncated_signature(Matrix(nodes.rightCols(5)), depth);
            EXPECT_LE(max_diff(whole, chen_product(left, right)), 1e-12);
        }
    }
}

TEST(Signature, CapacityIsEnforced) {
    EXPECT_THROW(tensor_size(50, 6), CapacityError);
    EXPECT_EQ(tensor_size(2, 3), 15u);
}

TEST(RobustNormalize, IdentityBelowR) {
    Matrix nodes(1, 2);
    nodes << 0.0, 0.1;
    const auto s = truncated_signature(nodes, 3);
    ASSERT_LT(s.norm(), 2.0);
    EXPECT_EQ(max_diff(robust_normalize(s, 2.0), s), 0.0);
}

TEST(RobustNormalize, ClampsNormToR) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix nodes = random_nodes(rng, 2, 8) * 4.0;
        const auto s = truncated_signature(nodes, 3);
        ASSERT_GT(s.norm(), 2.0);
        EXPECT_NEAR(robust_normalize(s, 2.0).norm(), 2.0, 1e-10);
    }
}

TEST(RobustNormalize, PreservesRankingBelowR) {
    KernelConfig raw;
    raw.time_augment = false;
    raw.depth = 2;
    KernelConfig robust = raw;
    robust.normalization = Normalization::robust;
    robust.R = 100.0;
    const auto ref = spikes_to_path({{0.2}}, 1.0);
    const std::vector<std::vector<std::vector<double>>> trains{{{}}, {{0.5}}, {{0.3, 0.6}}};
    std::size_t best_raw = 0;
    std::size_t best_robust = 0;
    double top_raw = -1.0;
    double top_robust = -1.0;
    for (std::size_t i = 0; i < trains.size(); ++i) {
        const auto p = spikes_to_path(trains[i], 1.0);
        const double kr = signature_kernel(p, ref, raw);
        const double kn = signature_kernel(p, ref, robust);
        if (kr > top_raw) {
            top_raw = kr;
            best_raw = i;
        }
        if (kn > top_robust) {
            top_robust = kn;
            best_robust = i;
        }
    }
    EXPECT_EQ(best_raw, best_robust);
}

TEST(Kernel, ScalarLinearPaths) {
    KernelConfig cfg;
    cfg.depth = 2;
    cfg.time_augment = false;
    auto line = [](double inc) {
        CadlagPath p;
        p.times = {0.0, 1.0};
        p.values = (Matrix(1, 2) << 0.0, inc).finished();
        p.jump = {false, false};
        return p;
    };
    const double a = 0.7;
    const double b = -1.3;
    EXPECT_NEAR(signature_kernel(line(a), line(b), cfg), 1.0 + a * b + (a * b) * (a * b) / 4.0, 1e-14);
}

TEST(Kernel, SymmetricAndAtLeastOneOnDiagonal) {
    KernelConfig cfg;
    const auto x = spikes_to_path({{0.1, 0.4}}, 1.0);
    const auto y = spikes_to_path({{0.7}}, 1.0);
    EXPECT_DOUBLE_EQ(signature_kernel(x, y, cfg), signature_kernel(y, x, cfg));
    EXPECT_GE(signature_kernel(x, x, cfg), 1.0);
}

TEST(Kernel, GramIsPositiveSemidefinite) {
    KernelConfig cfg;
    std::vector<CadlagPath> paths;
    for (std::uint64_t i = 0; i < 32; ++i) {
        paths.push_back(spikes_to_path(poisson(3.0, 1.0, sample_seed(99, i)), 1.0));
    }
    const Matrix G = gram_matrix(paths, cfg);
    EXPECT_LT((G - G.transpose()).norm(), 1e-12);
    const double min_eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(G, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    EXPECT_GE(min_eig, -1e-10);
}

TEST(Mmd, IdenticalPathsGiveZero) {
    KernelConfig cfg;
    const auto z = path_signature(spikes_to_path({{0.2, 0.6}}, 1.0), cfg);
    const std::vector<TruncatedSignature> X(5, z);
    const std::vector<TruncatedSignature> Y(7, z);
    EXPECT_NEAR(mmd_unbiased(X, Y), 0.0, 1e-12);
}

TEST(Mmd, EqualSetsMatchDirectSummation) {
    KernelConfig cfg;
    const auto X = poisson_signatures(2.0, 6, 5, cfg);
    const double m = 6.0;
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        for (std::size_t j = 0; j < X.size(); ++j) {
            const double k = inner_product(X[i], X[j]);
            (i == j ? diag : off) += k;
        }
    }
    const double expected = (2.0 / (m * (m - 1.0)) - 2.0 / (m * m)) * off - (2.0 / (m * m)) * diag;
    EXPECT_NEAR(mmd_unbiased(X, X), expected, 1e-9 * std::abs(expected));
}

TEST(Mmd, RequiresTwoPaths) {
    KernelConfig cfg;
    const auto X = poisson_signatures(2.0, 1, 5, cfg);
    EXPECT_THROW(mmd_unbiased(X, X), ArgumentError);
}

TEST(Mmd, SeparatesPoissonRates) {
    KernelConfig cfg;
    const auto X = poisson_signatures(0.5, 64, 1, cfg);
    const auto Y = poisson_signatures(5.0, 64, 2, cfg);
    const PermutationTest t = mmd_permutation_test(X, Y, 199, 3);
    EXPECT_GT(t.statistic, 3.0 * t.null_sd);
    EXPECT_LE(t.p_value, 0.01);
}

TEST(Gradients, PairingGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    const Matrix nodes = random_nodes(rng, 2, 6);
    TruncatedSignature Z(2, 3);
    for (std::size_t i = 0; i < Z.size(); ++i) {
        Z.data()[i] = std::sin(static_cast<double>(i));
    }
    const Matrix g = signature_pairing_gradient(nodes, Z);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < nodes.cols(); ++j) {
        for (Eigen::Index i = 0; i < 2; ++i) {
            Matrix up = nodes;
            Matrix dn = nodes;
            up(i, j) += h;
            dn(i, j) -= h;
            const double fd =
                (inner_product(truncated_signature(up, 3), Z) - inner_product(truncated_signature(dn, 3), Z)) /
                (2.0 * h);
            EXPECT_NEAR(g(i, j), fd, 1e-7 * (1.0 + std::abs(fd)));
        }
    }
}

TEST(Gradients, SpikeTimeGradientMatchesFiniteDifferences) {
    KernelConfig cfg;
    const std::vector<std::vector<double>> trains{{0.2, 0.55}, {0.4}};
    TruncatedSignature Z(3, 3);
    for (std::size_t i = 0; i < Z.size(); ++i) {
        Z.data()[i] = std::cos(1.7 * static_cast<double>(i));
    }
    const auto g = spike_time_gradient(trains, 1.0, Z, cfg);
    const double h = 1e-6;
    for (std::size_t k = 0; k < trains.size(); ++k) {
        for (std::size_t s = 0; s < trains[k].size(); ++s) {
            auto up = trains;
            auto dn = trains;
            up[k][s] += h;
            dn[k][s] -= h;
            const double fd = (inner_product(path_signature(spikes_to_path(up, 1.0), cfg), Z) -
                               inner_product(path_signature(spikes_to_path(dn, 1.0), cfg), Z)) /
                              (2.0 * h);
            EXPECT_NEAR(g[k][s], fd, 1e-6 * (1.0 + std::abs(fd)));
        }
    }
}

TEST(Gradients, MmdSignatureGradientMatchesFiniteDifferences) {
    KernelConfig cfg;
    const auto X = poisson_signatures(2.0, 4, 7, cfg);
    auto Y = poisson_signatures(3.0, 3, 8, cfg);
    const auto Z = mmd_signature_gradients(X, Y);
    const double h = 1e-6;
    for (std::size_t j = 0; j < Y.size(); ++j) {
        for (std::size_t c : {std::size_t{1}, std::size_t{5}, Y[j].size() - 1}) {
            const double keep = Y[j].data()[c];
            Y[j].data()[c] = keep + h;
            const double up = mmd_unbiased(X, Y);
            Y[j].data()[c] = keep - h;
            const double dn = mmd_unbiased(X, Y);
            Y[j].data()[c] = keep;
            EXPECT_NEAR(Z[j].data()[c], (up - dn) / (2.0 * h), 1e-5);
        }
    }
}
