#include "ded/synth_cohort.hpp"
#include "ded/theorems.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace ded;

TEST(SyntheticMDP, SameSpecSameMdp) {
    CohortSpec spec;
    spec.seed = 11;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(to_json(a.mdp), to_json(b.mdp));
    EXPECT_EQ(a.truth, b.truth);
    spec.seed = 12;
    EXPECT_NE(to_json(generate_synthetic(spec).mdp), to_json(a.mdp));
}

TEST(SyntheticMDP, PlantedStatesAreDeadEnds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CohortSpec spec;
        spec.seed = seed;
        const auto g = generate_synthetic(spec);
        EXPECT_FALSE(g.planted.empty());
        for (std::size_t s : g.planted) EXPECT_TRUE(g.truth.is_dead_end(s)) << "seed " << seed << " state " << s;
        EXPECT_EQ(classify_special_states(g.mdp), g.truth);
        EXPECT_TRUE(validate_mdp(g.mdp).ok());
    }
}

TEST(SyntheticMDP, ZeroDeadEndFractionPlantsNothing) {
    CohortSpec spec;
    spec.dead_end_fraction = 0.0;
    spec.direct_death_prob = 0.0;
    const auto g = generate_synthetic(spec);
    EXPECT_TRUE(g.planted.empty());
    EXPECT_TRUE(g.truth.dead_ends.empty());
}

TEST(SyntheticMDP, RejectsBadSpec) {
    CohortSpec spec;
    spec.n_actions = 0;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);
    spec = {};
    spec.dead_end_fraction = 1.5;
    EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(Emitter, NoiselessEmissionIsInjective) {
    CohortSpec spec;
    spec.obs_noise_sd = 0.0;
    const auto g = generate_synthetic(spec);
    const auto e = emit_observations(g.mdp, spec);
    Rng rng(0);
    std::set<std::vector<double>> seen;
    for (std::size_t s = 0; s < g.mdp.n_states(); ++s) {
        const auto o = e.emit(s, rng);
        EXPECT_EQ(o, e.emit(s, rng));
        EXPECT_EQ(o.size(), spec.obs_dim);
        seen.insert(o);
    }
    EXPECT_EQ(seen.size(), g.mdp.n_states());
    EXPECT_EQ(emitter_from_json(to_json(e)).means, e.means);
}

TEST(Rollout, ZeroTrajectoriesIsEmpty) {
    const auto g = generate_synthetic({});
    Env env{g.mdp, safe_start_states(g.mdp, g.truth), std::nullopt, 18};
    const auto r = rollout_behavior(env, uniform_policy(g.mdp.n_states(), g.mdp.n_actions()), 0, 1);
    EXPECT_TRUE(r.trajectories.empty());
}

TEST(Rollout, DeterministicAndTerminated) {
    CohortSpec spec;
    const auto g = generate_synthetic(spec);
    const auto e = emit_observations(g.mdp, spec);
    Env env{g.mdp, safe_start_states(g.mdp, g.truth), e, spec.max_len};
    const auto pi = uniform_policy(g.mdp.n_states(), g.mdp.n_actions());
    const auto a = rollout_behavior(env, pi, 200, 5);
    const auto b = rollout_behavior(env, pi, 200, 5);
    EXPECT_EQ(a.trajectories, b.trajectories);
    ASSERT_EQ(a.trajectories.size(), 200u);
    for (const auto& t : a.trajectories) {
        EXPECT_TRUE(t.terminated());
        EXPECT_LE(t.size(), spec.max_len);
        EXPECT_EQ(check_trajectory(t), "");
        EXPECT_EQ(t.steps.front().obs.size(), spec.obs_dim);
    }
}

TEST(Rollout, SurePolicyOnlyReachesPositiveTerminal) {
    using K = TerminalKind;
    // 0 -a0-> positive, 0 -a1-> negative.
    std::vector<double> T(3 * 2 * 3, 0.0);
    T[(0 * 2 + 0) * 3 + 1] = 1.0;
    T[(0 * 2 + 1) * 3 + 2] = 1.0;
    for (std::size_t s : {1, 2})
        for (std::size_t a = 0; a < 2; ++a) T[(s * 2 + a) * 3 + s] = 1.0;
    const TabularMDP mdp(3, 2, T, {K::none, K::positive, K::negative});
    PolicyMatrix pi = uniform_policy(3, 2);
    pi(0, 0) = 1.0;
    pi(0, 1) = 0.0;
    const auto r = rollout_behavior(Env{mdp, {0}, std::nullopt, 5}, pi, 50, 2);
    for (const auto& t : r.trajectories) EXPECT_EQ(t.outcome, K::positive);
}

TEST(BehaviorPolicy, BiasFavorsRiskyActions) {
    const auto g = generate_synthetic({});
    const auto sol = solve_exact(g.mdp);
    const auto neutral = harmful_biased_policy(sol.oracle, 0.0);
    const auto biased = harmful_biased_policy(sol.oracle, 2.0);
    bool shifted = false;
    for (std::size_t s = 0; s < g.mdp.n_states(); ++s) {
        double sum = 0.0;
        for (std::size_t a = 0; a < g.mdp.n_actions(); ++a) {
            sum += biased(s, a);
            EXPECT_NEAR(neutral(s, a), 1.0 / static_cast<double>(g.mdp.n_actions()), 1e-12);
            if (sol.oracle.p_dead[sol.oracle.idx(s, a)] > 0.0 && biased(s, a) > neutral(s, a)) shifted = true;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    EXPECT_TRUE(shifted);
}
