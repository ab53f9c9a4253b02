#include "ded/learner.hpp"
#include "ded/state_construction.hpp"
#include "ded/synth_cohort.hpp"
#include "ded/theorems.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ded;
using ded::testing::step;
using ded::testing::traj;
using K = TerminalKind;

namespace {

std::vector<Trajectory> fork_data(std::size_t transitions, std::uint64_t seed) {
    const auto mdp = ded::testing::fork_mdp();
    Env env{mdp, {0, 1}, std::nullopt, 50};
    return rollout_until(env, uniform_policy(4, 2), transitions, seed).trajectories;
}

} // namespace

TEST(TabularQ, PositiveOnlyDataKeepsDZero) {
    const std::vector<Trajectory> data{traj("a", {step(0, 0), step(1, 1, K::positive)}),
                                       traj("b", {step(1, 0, K::positive)})};
    const auto d = tabular_q_learning(data, 2, 2, DualKind::D);
    for (double v : d.q.values) EXPECT_EQ(v, 0.0);
    TabularQConfig cfg;
    cfg.schedule = LrSchedule::visit_decay;
    const auto r = tabular_q_learning(data, 2, 2, DualKind::R, cfg);
    EXPECT_EQ(r.q(1, 0), 1.0); // first visit has step size 1
    EXPECT_NEAR(r.q(0, 0), 1.0, 0.05);
}

TEST(TabularQ, ZeroLearningRateKeepsInit) {
    const auto data = fork_data(500, 1);
    TabularQConfig cfg;
    cfg.lr = 0.0;
    cfg.init = -0.5;
    const auto q = tabular_q_learning(data, 4, 2, DualKind::D, cfg);
    for (double v : q.q.values) EXPECT_EQ(v, -0.5);
}

TEST(TabularQ, InitIsClampedIntoRange) {
    TabularQConfig cfg;
    cfg.lr = 0.0;
    cfg.init = 1.2;
    EXPECT_EQ(tabular_q_learning({}, 2, 2, DualKind::R, cfg).q(0, 0), 1.0);
    cfg.init = 0.3;
    EXPECT_EQ(tabular_q_learning({}, 2, 2, DualKind::D, cfg).q(0, 0), 0.0);
}

TEST(TabularQ, DeterministicForASeed) {
    const auto data = fork_data(2000, 2);
    TabularQConfig cfg;
    cfg.seed = 4;
    cfg.sweeps = 5;
    EXPECT_EQ(tabular_q_learning(data, 4, 2, DualKind::D, cfg).q.values,
              tabular_q_learning(data, 4, 2, DualKind::D, cfg).q.values);
}

TEST(TabularQ, VisitDecayConvergesOnFork) {
    const auto data = fork_data(20000, 3);
    const auto exact = solve_exact(ded::testing::fork_mdp());
    TabularQConfig cfg;
    cfg.schedule = LrSchedule::visit_decay;
    for (auto kind : {DualKind::D, DualKind::R}) {
        const auto learned = tabular_q_learning(data, 4, 2, kind, cfg);
        const auto& ref = kind == DualKind::D ? exact.q_d : exact.q_r;
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t a = 0; a < 2; ++a) EXPECT_NEAR(learned.q(s, a), ref(s, a), 0.05);
        EXPECT_EQ(learned.sweep_residual.size(), cfg.sweeps);
        EXPECT_LT(learned.sweep_residual.back(), 0.05);
    }
}

TEST(TabularQ, CheckpointCallbackAndErrors) {
    const auto data = fork_data(100, 5);
    TabularQConfig cfg;
    cfg.sweeps = 1;
    cfg.checkpoint_every = 10;
    std::size_t calls = 0;
    cfg.on_checkpoint = [&](std::size_t, const QTable&) { ++calls; };
    const auto r = tabular_q_learning(data, 4, 2, DualKind::D, cfg);
    EXPECT_EQ(calls, r.updates / 10);
    auto bad = data;
    bad[0].steps[0].state.reset();
    EXPECT_THROW(tabular_q_learning(bad, 4, 2, DualKind::D), NonTabularData);
    bad = data;
    bad[0].steps[0].state = 9;
    EXPECT_THROW(tabular_q_learning(bad, 4, 2, DualKind::D), BadIndex);
}

TEST(DoubleQ, SeparatesFatalActionOnOneHotStates) {
    const auto data = fork_data(20000, 6);
    const auto enc = StateEncoder::one_hot(4);
    const auto emb = embed_cohort(enc, data);
    DQNConfig cfg;
    cfg.updates = 4000;
    cfg.lr = 1e-2;
    cfg.target_sync = 200;
    const auto d = fit_double_q(data, emb, 2, cfg, DualKind::D);
    const auto r = fit_double_q(data, emb, 2, cfg, DualKind::R);
    // State 1: action 0 dies with probability 0.5, action 1 always survives.
    nn::Vector x = nn::Vector::Zero(4);
    x(1) = 1.0;
    const auto qd = q_values(d.online, x), qr = q_values(r.online, x);
    EXPECT_LT(qd[0], qd[1] - 0.3);
    EXPECT_GT(qr[1], qr[0] + 0.3);
    EXPECT_NEAR(qd[0], -0.5, 0.15);
    EXPECT_EQ(d.updates, cfg.updates);
    EXPECT_FALSE(d.loss_curve.empty());
}

TEST(DoubleQ, TraceUsesOnlineArgmaxAndTargetValues) {
    const auto data = fork_data(2000, 7);
    const auto enc = StateEncoder::one_hot(4);
    const auto emb = embed_cohort(enc, data);
    DQNConfig cfg;
    cfg.updates = 50;
    std::size_t seen = 0;
    const auto res = fit_double_q(data, emb, 2, cfg, DualKind::D, [&](const UpdateTrace& t) {
        ++seen;
        EXPECT_EQ(t.used_action.size(), t.online_argmax.size());
        for (std::size_t i = 0; i < t.used_action.size(); ++i) EXPECT_EQ(t.used_action[i], t.online_argmax[i]);
        EXPECT_EQ(t.terminal.size(), 64u);
        EXPECT_TRUE(t.terminal[62] && t.terminal[63]);
    });
    EXPECT_EQ(seen, 50u);
    const auto back = qnet_from_checkpoint(qnet_checkpoint(res.online, cfg));
    nn::Vector x = nn::Vector::Zero(4);
    x(1) = 1.0;
    EXPECT_EQ(q_values(back, x), q_values(res.online, x));
}

TEST(DoubleQ, ValuesAreClamped) {
    Rng rng(8);
    QNetwork q(3, 2, 8, DualKind::R, rng);
    q.net.layers().back().b.setConstant(5.0);
    const auto v = q_values(q, nn::Vector::Ones(3));
    for (double x : v) EXPECT_LE(x, 1.0);
}
