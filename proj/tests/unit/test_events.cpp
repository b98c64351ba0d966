#include <cmath>

#include <gtest/gtest.h>

#include <esde/errors.hpp>
#include <esde/events.hpp>
#include <esde/ssnn.hpp>

using namespace esde;

namespace {

VectorFields constant_drift(double a) {
    VectorFields f;
    f.state_dim = 1;
    f.noise_dim = 1;
    f.drift = [=](const Vector&) -> Vector { return Vector::Constant(1, a); };
    f.diffusion = [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
    f.constant_diffusion = true;
    return f;
}

VectorFields decay() {
    VectorFields f;
    f.state_dim = 1;
    f.noise_dim = 1;
    f.drift = [](const Vector& y) -> Vector { return -y; };
    f.diffusion = [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
    f.constant_diffusion = true;
    return f;
}

EventSpec threshold(double level, double reset) {
    EventSpec e;
    e.label = 0;
    e.event_fn = [=](const Vector& y) { return y(0) - level; };
    e.transition_fn = [=](const Vector& y, double) -> Vector { return y - Vector::Constant(1, reset); };
    return e;
}

NetworkParams single_neuron(double sigma) {
    NetworkParams p;
    p.K = 1;
    p.w = Matrix::Zero(1, 1);
    p.sigma1 = sigma;
    p.i0 = Vector::Constant(1, 1.5);
    p.v0 = Vector::Zero(1);
    return p;
}

} // namespace

TEST(LocateEvent, LinearCrossing) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const auto loc = locate_event(Vector::Constant(1, -0.3), 0.0, 0.5, constant_drift(1.0), d,
                                  [](const Vector& y) { return y(0); });
    EXPECT_NEAR(loc.time, 0.3, 1e-10);
}

TEST(LocateEvent, RootOnGridNode) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const auto loc = locate_event(Vector::Constant(1, -0.25), 0.0, 0.25, constant_drift(1.0), d,
                                  [](const Vector& y) { return y(0); });
    EXPECT_NEAR(loc.time, 0.25, 1e-12);
}

TEST(LocateEvent, NoSignChangeIsBracketError) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    EXPECT_THROW(locate_event(Vector::Constant(1, -1.0), 0.0, 0.1, constant_drift(1.0), d,
                              [](const Vector& y) { return y(0); }),
                 BracketError);
}

TEST(EventSolve, LinearCrossingOnGrid) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const EventSpec e = threshold(0.0, 1.0);
    const auto sol = event_sde_solve(Vector::Constant(1, -0.3), constant_drift(1.0), {&e, 1}, d, 1,
                                     0.0, 0.01, 1.0, UniformStream(1));
    ASSERT_EQ(sol.event_count(), 1u);
    EXPECT_NEAR(sol.event_times[0], 0.3, 1e-9);
    EXPECT_EQ(sol.final_time, 0.3);
}

TEST(EventSolve, ExponentialCrossing) {
    // dy = -y dt from y0 = 2.5 reaches psi = 1 at ln(2.5).
    const BrownianDriver d(1, 0.0, 2.0, 1e-3, 0);
    EventSpec e;
    e.event_fn = [](const Vector& y) { return 1.0 - y(0); };
    e.transition_fn = [](const Vector& y, double) -> Vector { return y + Vector::Ones(1); };
    const auto sol = event_sde_solve(Vector::Constant(1, 2.5), decay(), {&e, 1}, d, 1, 0.0, 1e-3, 2.0,
                                     UniformStream(0));
    ASSERT_EQ(sol.event_count(), 1u);
    EXPECT_NEAR(sol.event_times[0], 0.91629073187415507, 1e-6);
}

TEST(EventSolve, EventlessReducesToSegment) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const EventSpec e = threshold(10.0, 1.0);
    const auto sol =
        event_sde_solve(Vector::Ones(1), decay(), {&e, 1}, d, 5, 0.0, 0.01, 1.0, UniformStream(0));
    EXPECT_EQ(sol.event_count(), 0u);
    const auto seg = solve_segment(Vector::Ones(1), 0.0, 1.0, 0.01, decay(), d);
    EXPECT_EQ(sol.final_state, seg.states.back());
    EXPECT_EQ(sol.final_time, 1.0);
}

TEST(EventSolve, PrePostConsistency) {
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 0.7);
    const auto sol = event_sde_solve(Vector::Zero(1), constant_drift(2.0), {&e, 1}, d, 100, 0.0, 0.01,
                                     2.0, UniformStream(0));
    ASSERT_GT(sol.event_count(), 3u);
    for (std::size_t n = 0; n < sol.event_count(); ++n) {
        EXPECT_NEAR(e.event_fn(sol.pre_event_states[n]), 0.0, 1e-10);
        EXPECT_EQ(sol.post_event_states[n], e.transition_fn(sol.pre_event_states[n], 0.0));
        if (n > 0) {
            EXPECT_GT(sol.event_times[n], sol.event_times[n - 1]);
        }
    }
}

TEST(EventSolve, StopsAtEventBudget) {
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 0.7);
    const auto sol = event_sde_solve(Vector::Zero(1), constant_drift(2.0), {&e, 1}, d, 2, 0.0, 0.01,
                                     2.0, UniformStream(0));
    ASSERT_EQ(sol.event_count(), 2u);
    EXPECT_EQ(sol.final_time, sol.event_times[1]);
}

TEST(EventSolve, RepeatedEventInStepIsStepSizeError) {
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 1e-4);
    EXPECT_THROW(event_sde_solve(Vector::Constant(1, 0.99), constant_drift(100.0), {&e, 1}, d, 1000,
                                 0.0, 0.01, 1.0, UniformStream(0)),
                 StepSizeError);
}

TEST(EventSolve, RefinementResolvesCloseEvents) {
    // Events 0.004 apart: two per 0.01 step, one per quarter step.
    const BrownianDriver d(1, 0.0, 1.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 0.4);
    const auto sol = event_sde_solve(Vector::Constant(1, 0.9), constant_drift(100.0), {&e, 1}, d, 5,
                                     0.0, 0.01, 1.0, UniformStream(0));
    ASSERT_EQ(sol.event_count(), 5u);
    for (std::size_t n = 1; n < 5; ++n) {
        EXPECT_NEAR(sol.event_times[n] - sol.event_times[n - 1], 0.004, 1e-9);
    }
}

TEST(EventSolve, StopCountsEndTheSolve) {
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 0.7);
    SolverOptions opt;
    opt.stop_counts = {3};
    const auto sol = event_sde_solve(Vector::Zero(1), constant_drift(2.0), {&e, 1}, d, 100, 0.0, 0.01,
                                     2.0, UniformStream(0), opt);
    EXPECT_EQ(sol.event_count(), 3u);
}

TEST(EventSolve, RefractoryViolationIsModelError) {
    const BrownianDriver d(1, 0.0, 2.0, 0.01, 0);
    const EventSpec e = threshold(1.0, 0.7);
    SolverOptions opt;
    opt.refractory_bounds = {0.5};
    EXPECT_THROW(event_sde_solve(Vector::Zero(1), constant_drift(2.0), {&e, 1}, d, 100, 0.0, 0.01, 2.0,
                                 UniformStream(0), opt),
                 ModelError);
}

TEST(Transition, IdentityLeavesStateUnchanged) {
    EventSpec e;
    e.event_fn = [](const Vector& y) { return y(0) - 5.0; };
    e.transition_fn = [](const Vector& y, double) -> Vector { return y; };
    const Vector y = (Vector(2) << 0.3, -1.0).finished();
    EXPECT_EQ(apply_transition(e, y, 0.5), y);
}

TEST(Transition, OutputOnEventSurfaceIsRejected) {
    EventSpec e;
    e.event_fn = [](const Vector& y) { return y(0) - 1.0; };
    e.transition_fn = [](const Vector& y, double) -> Vector { return y; };
    const Vector y = Vector::Constant(1, 1.0);
    EXPECT_THROW(apply_transition(e, y, 0.5, {&e, 1}), ModelError);
}

TEST(Transition, SlifResetAndSynapse) {
    NetworkParams p;
    p.K = 2;
    p.w = Matrix::Zero(2, 2);
    p.w(0, 1) = 0.8;
    const SlifSystem sys = build_slif_network(p);
    Vector y(6);
    y << 1.1, 0.4, 0.0, 0.2, 0.3, -2.0;
    const Vector out = sys.specs[0].transition_fn(y, 1.0);
    EXPECT_DOUBLE_EQ(out(SlifSystem::v_index(0)), 1.1 - p.v_reset);
    EXPECT_DOUBLE_EQ(out(SlifSystem::i_index(0)), 0.4);
    EXPECT_DOUBLE_EQ(out(SlifSystem::s_index(0)), -p.alpha);
    EXPECT_DOUBLE_EQ(out(SlifSystem::i_index(1)), 0.3 + 0.8);
    EXPECT_DOUBLE_EQ(out(SlifSystem::v_index(1)), 0.2);
    EXPECT_DOUBLE_EQ(out(SlifSystem::s_index(1)), -2.0);
}

TEST(EventSolve, DeterministicSlifMatchesIntensityCrossings) {
    // Reference crossings of the integrated intensity along the closed-form
    // OU mean path, with initial uniform 0.3 and reset uniforms 0.6, 0.2, 0.8.
    const double expected[] = {0.26503896376059963, 0.45352123174960834, 0.75494062075122023,
                               0.90048614990029373};
    const SlifSystem sys = build_slif_network(single_neuron(0.0));
    const double u0[] = {0.3};
    const Vector y0 = initial_state(sys, u0);
    const BrownianDriver d(2, 0.0, 1.0, 1e-3, 0);
    SolverOptions opt;
    opt.scheme = Scheme::heun;
    const auto sol = event_sde_solve(y0, sys.fields, sys.specs, d, 4, 0.0, 1e-3, 1.0,
                                     UniformStream::fixed({0.6, 0.2, 0.8}), opt);
    ASSERT_EQ(sol.event_count(), 4u);
    for (std::size_t n = 0; n < 4; ++n) {
        EXPECT_NEAR(sol.event_times[n], expected[n], 1e-3);
    }
}

TEST(EventSolve, SsnnGapsRespectRefractoryBound) {
    NetworkParams p = single_neuron(0.25);
    p.i0(0) = 4.0;
    const double bound = refractory_bound(p);
    SimulationOptions opt;
    const auto batch = simulate_spike_trains(p, 2.0, opt, 11, 200);
    std::size_t spikes = 0;
    for (const auto& trains : batch) {
        for (std::size_t i = 1; i < trains[0].size(); ++i) {
            EXPECT_GE(trains[0][i] - trains[0][i - 1], bound);
        }
        spikes += trains[0].size();
    }
    EXPECT_GT(spikes, 1000u);
}
