#include "ded/ded_engine.hpp"
#include "ded/lifegate.hpp"
#include "ded/synth_cohort.hpp"
#include "ded/theorems.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ded;

namespace {

std::vector<double> secure(std::vector<double> pi, std::vector<double> qd) { return secure_policy(pi, qd); }

void expect_row(const std::vector<double>& got, const std::vector<double>& want) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << "entry " << i;
}

} // namespace

TEST(Flags, StateFlagConjunction) {
    const Thresholds th;
    EXPECT_EQ(flag_level(-0.30, 0.70, th), Flag::red);
    EXPECT_EQ(flag_level(-0.20, 0.80, th), Flag::yellow);
    EXPECT_EQ(flag_level(-0.30, 0.90, th), Flag::none);
}

TEST(Flags, StateFlagUsesMedians) {
    const std::vector<double> qd{-0.9, -0.3, -0.3, 0.0, -0.1};
    const std::vector<double> qr{0.1, 0.7, 0.6, 1.0, 0.9};
    EXPECT_EQ(flag_state(qd, qr).level, Flag::red);
    EXPECT_EQ(flag_state(qd, qr).basis, FlagBasis::state_median);
    EXPECT_THROW(flag_state(std::vector<double>{}, std::vector<double>{}), EmptyRow);
    EXPECT_THROW(flag_state(qd, std::vector<double>{0.1}), ShapeMismatch);
}

TEST(Flags, TreatmentFlag) {
    EXPECT_EQ(flag_treatment(-1.0, 0.0).level, Flag::red);
    EXPECT_EQ(flag_treatment(0.0, 1.0).level, Flag::none);
    EXPECT_EQ(flag_treatment(-0.18, 0.82).level, Flag::yellow);
    EXPECT_THROW(flag_treatment(0.1, 0.5), OutOfRange);
    EXPECT_THROW(flag_treatment(-0.5, 1.5), OutOfRange);
}

TEST(Flags, ThresholdsStrictLessThan) {
    const Thresholds th;
    EXPECT_EQ(flag_level(-0.25, 0.75, th), Flag::yellow) << "equality is not a red violation";
    EXPECT_EQ(flag_level(-0.15, 0.85, th), Flag::none);
    Thresholds bad;
    bad.red.d = -0.1;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Median, EvenAndOdd) {
    EXPECT_DOUBLE_EQ(median(std::vector<double>{3, 1, 2}), 2.0);
    EXPECT_DOUBLE_EQ(median(std::vector<double>{4, 1, 2, 3}), 2.5);
}

TEST(SecurePolicy, WorkedExamples) {
    expect_row(secure({0.2, 0.3, 0.5}, {0, 0, 0}), {0.2, 0.3, 0.5});
    expect_row(secure({0.5, 0.25, 0.25}, {-1, 0, 0}), {0.0, 0.5, 0.5});
    expect_row(secure({0.8, 0.1, 0.1}, {-0.9, -0.2, -0.2}), {0.1, 0.45, 0.45});
}

TEST(SecurePolicy, CapsHoldAndMassIsConserved) {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 6);
        std::vector<double> pi(n), qd(n);
        double sum = 0.0;
        for (auto& p : pi) sum += p = uniform01(rng);
        for (auto& p : pi) p /= sum;
        for (auto& q : qd) q = -uniform01(rng) * 0.9;
        qd[0] = 0.0;
        const auto out = secure_policy(pi, qd);
        double total = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            EXPECT_LE(out[a], 1.0 + qd[a] + 1e-12);
            EXPECT_GE(out[a], 0.0);
            total += out[a];
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(SecurePolicy, InfeasibleRows) {
    EXPECT_THROW(secure({0.5, 0.5}, {-1, -1}), DeadEndState);
    EXPECT_THROW(secure({0.5, 0.5}, {-0.8, -0.9}), DeadEndState);
    EXPECT_THROW(secure({0.5, 0.4}, {0, 0}), OutOfRange);
    EXPECT_THROW(secure({}, {}), EmptyRow);
}

TEST(Certify, LifeGateSecuredUniformHasNoViolations) {
    const auto g = build_lifegate(default_layout());
    const auto sol = solve_exact(g.mdp);
    const auto sec = secure_policy_matrix(g.mdp, uniform_policy(g.mdp.n_states(), kGridActions), sol.q_d);
    const auto rep = certify_security(g.mdp, sec.policy, sol.oracle);
    EXPECT_TRUE(rep.ok());
    EXPECT_GT(rep.pairs_checked, 0u);
}

TEST(Certify, UnfilteredUniformOnCertainDeadEndIsFlagged) {
    const auto g = build_lifegate(default_layout());
    const auto sol = solve_exact(g.mdp);
    const auto rep = certify_security(g.mdp, uniform_policy(g.mdp.n_states(), kGridActions), sol.oracle);
    ASSERT_FALSE(rep.ok());
    const std::size_t s = g.state_at(5, 7);
    bool found = false;
    for (const auto& v : rep.violations)
        found = found || (v.state == s && v.action == static_cast<std::size_t>(GridAction::right) && v.bound == 0.0);
    EXPECT_TRUE(found);
}

TEST(Certify, RandomMdpsSecuredUniformIsSecure) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto g = generate_synthetic(random_suite_spec(seed));
        const auto sol = solve_exact(g.mdp);
        const auto sec = secure_policy_matrix(g.mdp, uniform_policy(g.mdp.n_states(), g.mdp.n_actions()), sol.q_d);
        EXPECT_TRUE(certify_security(g.mdp, sec.policy, sol.oracle).ok()) << "seed " << seed;
    }
}

TEST(Certify, EpsilonRelaxationLoosensBound) {
    const auto g = build_lifegate(default_layout());
    const auto sol = solve_exact(g.mdp);
    SecurityOptions opt;
    opt.epsilon = 1.0;
    EXPECT_TRUE(certify_security(g.mdp, uniform_policy(g.mdp.n_states(), kGridActions), sol.oracle, opt).ok());
}

TEST(FlagRecord, FieldsFromRows) {
    const std::vector<double> qd{-0.9, -0.3, -0.3};
    const std::vector<double> qr{0.1, 0.7, 0.9};
    const auto r = make_flag_record("t1", 4, qd, qr, 2, Thresholds{});
    EXPECT_EQ(r.flag_state, Flag::red);
    EXPECT_EQ(r.flag_treatment, Flag::none);
    EXPECT_DOUBLE_EQ(r.qd_admin, -0.3);
    EXPECT_DOUBLE_EQ(r.qr_admin, 0.9);
    EXPECT_THROW(make_flag_record("t1", 0, qd, qr, 3, Thresholds{}), BadIndex);
}
