#include <cmath>

#include <gtest/gtest.h>

#include <esde/errors.hpp>
#include <esde/sensitivity.hpp>
#include <esde/ssnn.hpp>

using namespace esde;

namespace {

VectorFields linear(const Matrix& A, const Matrix& sigma) {
    VectorFields f;
    f.state_dim = static_cast<int>(A.rows());
    f.noise_dim = static_cast<int>(sigma.cols());
    f.drift = [A](const Vector& y) -> Vector { return A * y; };
    f.diffusion = [sigma](const Vector&) -> Matrix { return sigma; };
    f.drift_jacobian = [A](const Vector&) -> Matrix { return A; };
    f.constant_diffusion = true;
    return f;
}

VectorFields constant_drift(double a) {
    VectorFields f;
    f.state_dim = 1;
    f.noise_dim = 1;
    f.drift = [=](const Vector&) -> Vector { return Vector::Constant(1, a); };
    f.diffusion = [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
    f.constant_diffusion = true;
    return f;
}

EventSpec level(double psi, double reset) {
    EventSpec e;
    e.event_fn = [=](const Vector& y) { return y(0) - psi; };
    e.transition_fn = [=](const Vector& y, double) -> Vector { return y - Vector::Constant(1, reset); };
    return e;
}

NetworkParams slif(double sigma) {
    NetworkParams p;
    p.K = 1;
    p.w = Matrix::Zero(1, 1);
    p.sigma1 = sigma;
    p.i0 = Vector::Constant(1, 1.5);
    p.v0 = Vector::Zero(1);
    return p;
}

bool close(double a, double b, double rtol) { return std::abs(a - b) <= rtol * std::abs(b); }

} // namespace

TEST(Variational, ZeroDriftKeepsJacobian) {
    const Matrix sigma = Matrix::Constant(2, 1, 0.3);
    const VectorFields f = linear(Matrix::Zero(2, 2), sigma);
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 4);
    const auto seg = solve_segment(Vector::Ones(2), 0.0, 1.0, 0.01, f, d);
    const Matrix J0 = (Matrix(2, 2) << 1.0, 2.0, -0.5, 0.25).finished();
    EXPECT_LT((variational_segment(seg, J0, f, d) - J0).norm(), 1e-14);
}

TEST(Variational, ScalarDecay) {
    const VectorFields f = linear(-Matrix::Identity(1, 1), Matrix::Zero(1, 1));
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const auto seg = solve_segment(Vector::Ones(1), 0.0, 1.0, 0.01, f, d);
    EXPECT_NEAR(variational_segment(seg, Matrix::Identity(1, 1), f, d)(0, 0), std::exp(-1.0), 1e-4);
}

TEST(Variational, OuPairMatchesMatrixExponential) {
    const double mu1 = 6.0;
    const double mu2 = 5.0;
    const double T = 0.7;
    Matrix G(2, 2);
    G << -mu1, mu1, 0.0, -mu2;
    const VectorFields f = linear(G, Matrix::Identity(2, 2) * 0.25);
    const BrownianDriver d(2, 0.0, T, 1e-3, 8);
    const auto seg = solve_segment(Vector::Zero(2), 0.0, T, 1e-3, f, d);
    const Matrix J = variational_segment(seg, Matrix::Identity(2, 2), f, d);
    Matrix expected(2, 2);
    expected << 0.014995576820477706, 0.091210839611044767, 0.0, 0.030197383422318501;
    EXPECT_LT((J - expected).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_LT((Matrix(ou_flow(mu1, mu2, T)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EventTimeGradient, ConstantDrift) {
    const RowVector g = event_time_gradient(RowVector::Ones(1), Matrix::Ones(1, 1), Vector::Constant(1, 4.0));
    EXPECT_DOUBLE_EQ(g(0), -0.25);
}

TEST(EventTimeGradient, ExponentialDecay) {
    // y' = -y from a reaches psi at ln(a / psi); dy(tau)/da = psi / a.
    const double a = 2.5;
    const double psi = 1.0;
    const RowVector g = event_time_gradient(-RowVector::Ones(1), Matrix::Constant(1, 1, psi / a),
                                            Vector::Constant(1, -psi));
    EXPECT_NEAR(g(0), 1.0 / a, 1e-15);
}

TEST(EventTimeGradient, OrthogonalDirectionsGiveZero) {
    RowVector grad_e(2);
    grad_e << 1.0, 0.0;
    Matrix grad_pre(2, 2);
    grad_pre << 0.0, 0.0, 1.0, -3.0;
    const RowVector g = event_time_gradient(grad_e, grad_pre, Vector::Ones(2));
    EXPECT_EQ(g, RowVector::Zero(2));
}

TEST(EventTimeGradient, TangentialCrossingThrows) {
    EXPECT_THROW(event_time_gradient(RowVector::Ones(1), Matrix::Ones(1, 1), Vector::Zero(1)),
                 TransversalityError);
}

TEST(TransitionGradient, IdentityWithContinuousDrift) {
    EventSpec e;
    e.event_fn = [](const Vector& y) { return y(0) - 1.0; };
    e.transition_fn = [](const Vector& y, double) -> Vector { return y; };
    const VectorFields f = linear(-Matrix::Identity(2, 2), Matrix::Zero(2, 1));
    const Matrix grad_pre = (Matrix(2, 1) << 0.3, -0.7).finished();
    const Vector y = (Vector(2) << 1.0, 2.0).finished();
    const Matrix out = transition_gradient(grad_pre, RowVector::Constant(1, 0.9), y, y, 0.5, f, e);
    EXPECT_LT((out - grad_pre).norm(), 1e-9);
}

TEST(TransitionGradient, ZeroTimeGradientAppliesJacobian) {
    EventSpec e;
    e.event_fn = [](const Vector& y) { return y(0) - 1.0; };
    e.transition_fn = [](const Vector& y, double) -> Vector {
        return (Vector(2) << 2.0 * y(0), y(0) + y(1)).finished();
    };
    const VectorFields f = linear(Matrix::Identity(2, 2), Matrix::Zero(2, 1));
    const Matrix grad_pre = (Matrix(2, 2) << 1.0, 2.0, 3.0, 4.0).finished();
    const Vector y = (Vector(2) << 1.0, 0.5).finished();
    const Matrix out =
        transition_gradient(grad_pre, RowVector::Zero(2), y, e.transition_fn(y, 0.0), 0.0, f, e);
    const Matrix jac = (Matrix(2, 2) << 2.0, 0.0, 1.0, 1.0).finished();
    EXPECT_LT((out - jac * grad_pre).norm(), 1e-6);
}

TEST(TransitionGradient, BouncingClock) {
    const VectorFields f = constant_drift(1.0);
    const EventSpec e = level(1.0, 1.0);
    const Matrix grad_pre = Matrix::Constant(1, 1, 0.6);
    const Vector y = Vector::Ones(1);
    const Matrix out = transition_gradient(grad_pre, RowVector::Constant(1, -0.6), y,
                                           e.transition_fn(y, 0.0), 0.0, f, e);
    EXPECT_NEAR(out(0, 0), 0.6, 1e-12);
}

TEST(ForwardSensitivity, EventlessMatchesVariational) {
    Matrix A(2, 2);
    A << -1.0, 0.5, 0.0, -2.0;
    const VectorFields f = linear(A, Matrix::Identity(2, 2) * 0.1);
    const BrownianDriver d(2, 0.0, 1.0, 0.01, 2);
    const EventSpec e = level(100.0, 1.0);
    const Vector y0 = (Vector(2) << 0.3, 0.4).finished();
    const auto res = forward_sensitivity(y0, f, {&e, 1}, d, 10, 0.0, 0.01, 1.0, UniformStream(0));
    ASSERT_EQ(res.solution.event_count(), 0u);
    const auto seg = solve_segment(y0, 0.0, 1.0, 0.01, f, d);
    EXPECT_LT((res.sensitivity.jac_state - variational_segment(seg, Matrix::Identity(2, 2), f, d)).norm(),
              1e-12);
}

TEST(ForwardSensitivity, BouncingClockEventTimes) {
    // dy = a dt from y0 with resets by 1 at y = 1: tau_n = (n - y0) / a.
    const double a = 1.7;
    const EventSpec e = level(1.0, 1.0);
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const auto res = forward_sensitivity(Vector::Constant(1, 0.2), constant_drift(a), {&e, 1}, d, 3,
                                         0.0, 0.01, 2.0, UniformStream(0));
    ASSERT_EQ(res.solution.event_count(), 3u);
    for (std::size_t n = 0; n < 3; ++n) {
        EXPECT_NEAR(res.sensitivity.event_time_grads[n](0), -1.0 / a, 1e-9);
    }
}

TEST(ForwardSensitivity, DeterministicSlifMatchesFiniteDifferences) {
    const SlifSystem sys = build_slif_network(slif(0.0), {TrainableParam::current(0)});
    SimulationOptions so;
    const BrownianDriver d = make_driver(sys, 1.0, so, 0);
    const double u0[] = {0.3};
    const Vector y0 = initial_state(sys, u0);
    const UniformStream us = UniformStream::fixed({0.6, 0.2, 0.8});
    SensitivityOptions opt;
    opt.solver = solver_options(sys, so);
    opt.seed = sys.seed();
    const auto res = forward_sensitivity(y0, sys.fields, sys.specs, d, 3, 0.0, 0.01, 1.0, us, opt);
    ASSERT_EQ(res.solution.event_count(), 3u);
    for (std::size_t n = 0; n < 3; ++n) {
        const RowVector fd = finite_difference_oracle(y0, sys.fields, sys.specs, d, us, 3, 0.0, 0.01,
                                                      1.0, select_event_time(n), 1e-5, opt.solver,
                                                      sys.seed_index);
        EXPECT_TRUE(close(res.sensitivity.event_time_grads[n](0), fd(0), 1e-3))
            << n << ": " << res.sensitivity.event_time_grads[n](0) << " vs " << fd(0);
    }
}

TEST(ForwardSensitivity, StochasticSlifMatchesFiniteDifferences) {
    const SlifSystem sys =
        build_slif_network(slif(0.25), {TrainableParam::current(0), TrainableParam::potential(0)});
    SimulationOptions so;
    so.max_events = 3;
    int compared = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const SampleRandomness rnd = sample_randomness(2024, s);
        const BrownianDriver d = make_driver(sys, 3.0, so, rnd.driver_seed);
        const Vector y0 = initial_state(sys, rnd.initial_seed);
        const UniformStream us(rnd.transition_seed);
        SensitivityOptions opt;
        opt.solver = solver_options(sys, so);
        opt.seed = sys.seed();
        const auto res = forward_sensitivity(y0, sys.fields, sys.specs, d, 3, 0.0, 0.01, 3.0, us, opt);
        for (std::size_t n = 0; n < res.solution.event_count(); ++n) {
            RowVector fd;
            try {
                fd = finite_difference_oracle(y0, sys.fields, sys.specs, d, us, 3, 0.0, 0.01, 3.0,
                                              select_event_time(n), 1e-6, opt.solver, sys.seed_index);
            } catch (const NonDifferentiableError&) {
                continue;
            }
            for (int c = 0; c < 2; ++c) {
                EXPECT_TRUE(close(res.sensitivity.event_time_grads[n](c), fd(c), 1e-2))
                    << "seed " << s << " event " << n << " param " << c;
                ++compared;
            }
        }
    }
    EXPECT_GE(compared, 50);
}

TEST(FiniteDifference, LinearCrossing) {
    const EventSpec e = level(1.0, 1.0);
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const RowVector fd = finite_difference_oracle(Vector::Constant(1, 0.25), constant_drift(2.0), {&e, 1},
                                                  d, UniformStream(0), 1, 0.0, 0.01, 2.0,
                                                  select_event_time(0));
    EXPECT_NEAR(fd(0), -0.5, 1e-6);
}

TEST(FiniteDifference, QuadraticOfFinalState) {
    // y_T = e^{-T} y0, L = |y_T|^2 => dL/dy0 = 2 e^{-2T} y0 for the Heun map.
    const VectorFields f = linear(-Matrix::Identity(2, 2), Matrix::Zero(2, 1));
    const EventSpec e = level(100.0, 1.0);
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const Vector y0 = (Vector(2) << 0.8, -0.3).finished();
    const OutputSelector L = [](const EventSolution& s) { return s.final_state.squaredNorm(); };
    const RowVector fd =
        finite_difference_oracle(y0, f, {&e, 1}, d, UniformStream(0), 1, 0.0, 0.01, 1.0, L);
    const double factor = std::pow(1.0 - 0.01 + 0.5 * 0.01 * 0.01, 100);
    for (int i = 0; i < 2; ++i) {
        EXPECT_NEAR(fd(i), 2.0 * factor * factor * y0(i), 1e-6);
    }
}

TEST(FiniteDifference, EventCountChangeIsReported) {
    const EventSpec e = level(1.0, 1.0);
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    // With T = 0.75 and slope 1 the first event sits at 0.75 - 1e-7.
    EXPECT_THROW(finite_difference_oracle(Vector::Constant(1, 0.2500001), constant_drift(1.0), {&e, 1}, d,
                                          UniformStream(0), 5, 0.0, 0.01, 0.75,
                                          select_final_state(0), 0.01),
                 NonDifferentiableError);
}

TEST(FiniteDifference, GridNodeCrossingShrinksStep) {
    const EventSpec e = level(1.0, 1.0);
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    // The event sits 3e-7 after the grid node 0.3.
    const RowVector fd = finite_difference_oracle(Vector::Constant(1, 0.6999997), constant_drift(1.0), {&e, 1},
                                                  d, UniformStream(0), 1, 0.0, 0.01, 1.0,
                                                  select_event_time(0), 1e-5);
    EXPECT_NEAR(fd(0), -1.0, 1e-6);
}

TEST(Assumptions, SsnnPassesWithZeroResiduals) {
    NetworkParams p;
    p.K = 3;
    p.w = Matrix::Zero(3, 3);
    p.w(0, 1) = 1.0;
    p.w(1, 2) = 0.8;
    p.sigma1 = 0.25;
    p.sigma2 = 0.25;
    p.i0 = Vector::Constant(3, 2.0);
    const SlifSystem sys = build_slif_network(p);
    SimulationOptions so;
    so.record_segments = true;
    const EventSolution sol = simulate_sample(sys, 2.0, so, sample_randomness(5, 0));
    ASSERT_GT(sol.event_count(), 5u);
    const AssumptionReport r = check_assumptions(sol, sys.fields, sys.specs);
    EXPECT_TRUE(r.pass());
    EXPECT_EQ(r.max_commutation(), 0.0);
    EXPECT_EQ(r.max_orthogonality(), 0.0);
}

TEST(Assumptions, ResetToZeroBreaksCommutation) {
    NetworkParams p = slif(0.25);
    p.reset = ResetMode::to_zero;
    const SlifSystem sys = build_slif_network(p);
    SimulationOptions so;
    const EventSolution sol = simulate_sample(sys, 3.0, so, sample_randomness(5, 0));
    ASSERT_GT(sol.event_count(), 0u);
    const AssumptionReport r = check_assumptions(sol, sys.fields, sys.specs);
    EXPECT_FALSE(r.commutation_ok);
    EXPECT_FALSE(r.pass());
}

TEST(Assumptions, ZeroDiffusionPassesTrivially) {
    NetworkParams p = slif(0.0);
    p.reset = ResetMode::to_zero;
    const SlifSystem sys = build_slif_network(p);
    SimulationOptions so;
    const EventSolution sol = simulate_sample(sys, 3.0, so, sample_randomness(5, 0));
    const AssumptionReport r = check_assumptions(sol, sys.fields, sys.specs);
    EXPECT_TRUE(r.commutation_ok);
    EXPECT_TRUE(r.orthogonality_ok);
}
