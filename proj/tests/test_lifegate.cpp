#include "ded/format.hpp"
#include "ded/lifegate.hpp"
#include "ded/theorems.hpp"

#include <gtest/gtest.h>

using namespace ded;

namespace {

const LifeGate& lifegate() {
    static const LifeGate g = build_lifegate(default_layout());
    return g;
}

const ExactSolution& exact() {
    static const ExactSolution sol = solve_exact(lifegate().mdp);
    return sol;
}

std::size_t idx(GridAction a) { return static_cast<std::size_t>(a); }

} // namespace

TEST(LifeGate, ShippedLayoutFileMatchesEmbeddedLayout) {
    const std::string text = read_text_file(std::string(DED_DATA_DIR) + "/lifegate_default.txt");
    EXPECT_EQ(text, std::string(kDefaultLifeGateLayout));
    EXPECT_EQ(layout_to_text(load_layout(std::string(DED_DATA_DIR) + "/lifegate_default.txt")), text);
}

TEST(LifeGate, YellowRowIgnoresAction) {
    const auto& g = lifegate();
    const std::size_t s = g.state_at(5, 8);
    const std::size_t right = g.state_at(5, 9);
    for (std::size_t a = 0; a < kGridActions; ++a) {
        EXPECT_DOUBLE_EQ(g.mdp.prob(s, a, right), 0.7);
        EXPECT_DOUBLE_EQ(g.mdp.prob(s, a, s), 0.3);
    }
}

TEST(LifeGate, MoveIntoWallCollapsesToStay) {
    const auto& g = lifegate();
    const std::size_t s = g.state_at(3, 1);
    const auto a = idx(GridAction::left);
    EXPECT_DOUBLE_EQ(g.mdp.prob(s, a, g.state_at(3, 2)), 0.4);
    EXPECT_DOUBLE_EQ(g.mdp.prob(s, a, s), 0.6);
}

TEST(LifeGate, NoDriftMeansDeterministicMoves) {
    auto layout = default_layout();
    layout.death_drift = 0.0;
    const auto g = build_lifegate(layout);
    EXPECT_DOUBLE_EQ(g.mdp.prob(g.state_at(4, 4), idx(GridAction::up), g.state_at(3, 4)), 1.0);
}

TEST(LifeGate, YellowCellsAreTheDeadEnds) {
    const auto& g = lifegate();
    auto yellow = g.yellow_states;
    std::sort(yellow.begin(), yellow.end());
    EXPECT_EQ(exact().sets.dead_ends, yellow);
    for (std::size_t s : g.yellow_states) {
        for (double v : exact().q_d.row(s)) EXPECT_NEAR(v, -1.0, 1e-6);
        EXPECT_NEAR(exact().q_r.state_value(s), 0.0, 1e-6);
    }
}

TEST(LifeGate, BlackCellsTerminate) {
    EXPECT_TRUE(confirm_termination(lifegate().mdp, lifegate().black_states, TerminationMode::worst_case));
    EXPECT_TRUE(confirm_termination(lifegate().mdp, lifegate().yellow_states, TerminationMode::worst_case));
}

TEST(LifeGate, StepIntoYellowIsCertainDeadEnd) {
    const auto& g = lifegate();
    const std::size_t s = g.state_at(5, 7);
    const auto i = exact().oracle.idx(s, idx(GridAction::right));
    EXPECT_DOUBLE_EQ(exact().oracle.p_dead[i], 1.0);
    // Moving up keeps the drift share as dead-end risk.
    const auto j = exact().oracle.idx(s, idx(GridAction::up));
    EXPECT_NEAR(exact().oracle.p_dead[j], 0.4, 1e-12);
}

TEST(LifeGate, ThresholdsSeparateDeadEnds) {
    const auto& g = lifegate();
    for (std::size_t s = 0; s < g.mdp.n_states(); ++s) {
        if (g.mdp.is_terminal(s)) continue;
        const bool dead = exact().sets.is_dead_end(s);
        const double vd = exact().q_d.state_value(s), vr = exact().q_r.state_value(s);
        EXPECT_EQ(dead, vd < -0.7 && vr < 0.7) << "state " << s;
    }
}

TEST(LifeGate, ValueGridRendering) {
    const auto& g = lifegate();
    const auto zeros = render_value_grid(g.layout, std::vector<double>(g.mdp.n_states(), 0.0));
    EXPECT_EQ(zeros.substr(0, 24), "#,#,#,#,#,#,#,#,#,#,#,#\n");
    EXPECT_NE(zeros.find("#,0.000000,"), std::string::npos);

    const auto vd = render_value_grid(g.layout, exact().q_d.state_values());
    const auto vr = render_value_grid(g.layout, exact().q_r.state_values());
    std::vector<std::string> rows_d, rows_r;
    std::stringstream sd(vd), sr(vr);
    for (std::string l; std::getline(sd, l);) rows_d.push_back(l);
    for (std::string l; std::getline(sr, l);) rows_r.push_back(l);
    auto cell = [](const std::string& row, std::size_t c) {
        std::stringstream ss(row);
        std::string x;
        for (std::size_t i = 0; i <= c; ++i) std::getline(ss, x, ',');
        return x;
    };
    EXPECT_EQ(cell(rows_d[6], 8), "-1.000000");
    EXPECT_EQ(cell(rows_r[6], 8), "0.000000");
    EXPECT_THROW(render_value_grid(g.layout, {1.0}), DimensionMismatch);
}

TEST(LifeGate, LayoutErrors) {
    EXPECT_THROW(parse_layout("###\n#L\n"), InvalidLayout);
    EXPECT_THROW(parse_layout("#x#\n"), InvalidLayout);
    EXPECT_THROW(parse_layout("#L.#\n"), InvalidLayout) << "no death gate";
}
