#pragma once

#include "ded/mdp.hpp"

#include <tuple>
#include <vector>

namespace ded::testing {

/// Builds an MDP from (state, action, next, prob) edges; terminals get their
/// self-loops automatically.
inline TabularMDP make_mdp(std::size_t S, std::size_t A,
                           const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>>& edges,
                           const std::vector<TerminalKind>& kinds) {
    std::vector<double> T(S * A * S, 0.0);
    for (auto [s, a, n, p] : edges) T[(s * A + a) * S + n] += p;
    for (std::size_t s = 0; s < S; ++s)
        if (kinds[s] != TerminalKind::none)
            for (std::size_t a = 0; a < A; ++a) T[(s * A + a) * S + s] = 1.0;
    return TabularMDP(S, A, std::move(T), kinds);
}

/// s0 -> s1 -> death, one action, deterministic.
inline TabularMDP death_chain() {
    using K = TerminalKind;
    return make_mdp(3, 1, {{0, 0, 1, 1.0}, {1, 0, 2, 1.0}}, {K::none, K::none, K::negative});
}

/// Two non-terminal states; action 0 heads for death, action 1 for life.
/// State 1 has a coin flip under action 0.
inline TabularMDP fork_mdp() {
    using K = TerminalKind;
    return make_mdp(4, 2,
                    {{0, 0, 1, 1.0}, {0, 1, 3, 1.0}, {1, 0, 2, 0.5}, {1, 0, 3, 0.5}, {1, 1, 3, 1.0}},
                    {K::none, K::none, K::negative, K::positive});
}

inline Step step(std::size_t s, std::size_t a, TerminalKind term = TerminalKind::none) {
    Step st;
    st.state = s;
    st.action = a;
    st.terminal = term;
    st.reward = term == TerminalKind::positive ? 1.0 : (term == TerminalKind::negative ? -1.0 : 0.0);
    return st;
}

inline Trajectory traj(std::string id, std::vector<Step> steps) {
    Trajectory t{std::move(id), std::move(steps), TerminalKind::none};
    t.outcome = t.steps.empty() ? TerminalKind::none : t.steps.back().terminal;
    return t;
}

} // namespace ded::testing
