#pragma once

#include "ded/errors.hpp"
#include "ded/mdp.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ded {

/// State x action value table for one dual kind. Entries are kept inside
/// the kind's legal range by every producer in this library.
struct QTable {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    DualKind kind = DualKind::D;
    std::vector<double> values;

    QTable() = default;
    QTable(std::size_t ns, std::size_t na, DualKind k, double fill = 0.0)
        : n_states(ns), n_actions(na), kind(k), values(ns * na, fill) {}

    double& operator()(std::size_t s, std::size_t a) { return values[s * n_actions + a]; }
    double operator()(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }

    [[nodiscard]] std::span<const double> row(std::size_t s) const {
        return {values.data() + s * n_actions, n_actions};
    }

    [[nodiscard]] double state_value(std::size_t s) const {
        const auto r = row(s);
        return *std::max_element(r.begin(), r.end());
    }

    /// First maximizing action (ties resolved toward the lowest index).
    [[nodiscard]] std::size_t greedy_action(std::size_t s) const {
        const auto r = row(s);
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }

    [[nodiscard]] std::vector<double> state_values() const {
        std::vector<double> v(n_states);
        for (std::size_t s = 0; s < n_states; ++s) v[s] = state_value(s);
        return v;
    }

    [[nodiscard]] bool in_range(double tol = 0.0) const {
        const auto r = value_range(kind);
        return std::all_of(values.begin(), values.end(),
                           [&](double v) { return v >= r.lo - tol && v <= r.hi + tol; });
    }
};

inline nlohmann::json to_json(const QTable& q) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t s = 0; s < q.n_states; ++s) {
        const auto r = q.row(s);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return {{"kind", std::string(to_string(q.kind))},
            {"n_states", q.n_states},
            {"n_actions", q.n_actions},
            {"values", std::move(rows)}};
}

inline QTable qtable_from_json(const nlohmann::json& j) {
    try {
        QTable q(j.at("n_states").get<std::size_t>(), j.at("n_actions").get<std::size_t>(),
                 dual_kind_from_string(j.at("kind").get<std::string>()));
        const auto& rows = j.at("values");
        if (rows.size() != q.n_states) throw ShapeMismatch("QTable row count does not match n_states");
        for (std::size_t s = 0; s < q.n_states; ++s) {
            if (rows[s].size() != q.n_actions)
                throw ShapeMismatch("QTable row " + std::to_string(s) + " has wrong length");
            for (std::size_t a = 0; a < q.n_actions; ++a) q(s, a) = rows[s][a].get<double>();
        }
        return q;
    } catch (const nlohmann::json::exception& e) {
        throw ShapeMismatch(std::string("malformed QTable document: ") + e.what());
    }
}

enum class TerminationMode { worst_case, witness_policy };

struct TerminationOptions {
    double threshold = 1.0 - 1e-9;
    double stall_tol = 1e-15;
    std::size_t max_sweeps = 2'000'000;
};

namespace detail {

inline std::vector<char> membership(std::size_t n, const std::vector<std::size_t>& states) {
    std::vector<char> in(n, 0);
    for (std::size_t s : states) {
        if (s >= n) throw BadIndex("state " + std::to_string(s) + " out of range");
        in[s] = 1;
    }
    return in;
}

/// Actions at s whose whole successor mass stays in `set` or positive terminals.
inline std::vector<std::size_t> witness_actions(const TabularMDP& mdp, std::size_t s,
                                                const std::vector<char>& set) {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        double mass = 0.0;
        for (const auto& succ : mdp.successors(s, a))
            if (set[succ.state] || mdp.terminal_kind(succ.state) == TerminalKind::positive)
                mass += succ.prob;
        if (mass >= 1.0 - kProbTol) out.push_back(a);
    }
    return out;
}

} // namespace detail

/// Probability-of-termination fixed point on `states`, iterated from 0.
/// worst_case minimizes over all actions; witness_policy maximizes over the
/// actions that keep all mass inside `states` or positive terminals (the
/// rescue witnesses). States reached from `states` under the relevant actions
/// are iterated too, so the result is exact for non-closed sets.
/// Returns true iff every given state terminates with probability >= threshold.
inline bool confirm_termination(const TabularMDP& mdp, const std::vector<std::size_t>& states,
                                TerminationMode mode, const TerminationOptions& opt = {}) {
    const std::size_t S = mdp.n_states();
    const auto in_set = detail::membership(S, states);
    for (std::size_t s : states)
        if (mdp.is_terminal(s))
            throw BadIndex("confirm_termination: state " + std::to_string(s) + " is terminal");
    if (states.empty()) return true;

    std::vector<std::vector<std::size_t>> actions(S);
    std::vector<char> in_closure(S, 0);
    std::vector<std::size_t> closure;
    std::deque<std::size_t> frontier(states.begin(), states.end());
    for (std::size_t s : states) in_closure[s] = 1;
    while (!frontier.empty()) {
        const std::size_t s = frontier.front();
        frontier.pop_front();
        closure.push_back(s);
        if (mode == TerminationMode::worst_case) {
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) actions[s].push_back(a);
        } else {
            actions[s] = detail::witness_actions(mdp, s, in_set);
            if (actions[s].empty()) return false;
        }
        for (std::size_t a : actions[s]) {
            for (const auto& succ : mdp.successors(s, a)) {
                if (!mdp.is_terminal(succ.state) && !in_closure[succ.state]) {
                    in_closure[succ.state] = 1;
                    frontier.push_back(succ.state);
                }
            }
        }
    }
    std::sort(closure.begin(), closure.end());

    std::vector<double> p(S, 0.0), next(S, 0.0);
    auto done = [&] {
        return std::all_of(states.begin(), states.end(),
                           [&](std::size_t s) { return p[s] >= opt.threshold; });
    };
    for (std::size_t sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double change = 0.0;
        for (std::size_t s : closure) {
            double best = mode == TerminationMode::worst_case
                              ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
            for (std::size_t a : actions[s]) {
                double v = 0.0;
                for (const auto& succ : mdp.successors(s, a))
                    v += succ.prob * (mdp.is_terminal(succ.state) ? 1.0 : p[succ.state]);
                best = mode == TerminationMode::worst_case ? std::min(best, v) : std::max(best, v);
            }
            next[s] = best;
            change = std::max(change, std::abs(best - p[s]));
        }
        for (std::size_t s : closure) p[s] = next[s];
        if (done()) return true;
        if (change < opt.stall_tol) return false;
    }
    return done();
}

struct ValueIterationOptions {
    double tol = 1e-12;
    std::size_t max_sweeps = 1'000'000;
    /// Reject MDPs that are not worst-case proper before sweeping.
    bool require_proper = true;
    /// Called after every sweep with the sweep index and the new table.
    std::function<void(std::size_t, const QTable&)> on_sweep;
};

/// Clamped Jacobi value iteration for the dual MDP of `kind`, from an all-zero
/// table. Throws NoConvergence (with the final residual) when the sup-norm
/// change stays above tol after max_sweeps.
inline QTable value_iteration(const TabularMDP& mdp, DualKind kind,
                              const ValueIterationOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw ConfigError("value_iteration: tol must be positive");
    require_valid(mdp);
    if (opt.require_proper && !confirm_termination(mdp, mdp.non_terminal_states(),
                                                   TerminationMode::worst_case))
        throw NonTerminatingRegion(
            "value_iteration: some policy fails to terminate with probability 1");

    const std::size_t S = mdp.n_states(), A = mdp.n_actions();
    QTable q(S, A, kind, 0.0), next(S, A, kind, 0.0);
    std::vector<double> v(S, 0.0);
    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        for (std::size_t s = 0; s < S; ++s) v[s] = mdp.is_terminal(s) ? 0.0 : q.state_value(s);
        residual = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                double backup = 0.0;
                if (!mdp.is_terminal(s)) {
                    for (const auto& succ : mdp.successors(s, a))
                        backup += succ.prob *
                                  (dual_reward(kind, TerminalKind::none,
                                               mdp.terminal_kind(succ.state)) +
                                   v[succ.state]);
                }
                backup = clamp_value(kind, backup);
                next(s, a) = backup;
                residual = std::max(residual, std::abs(backup - q(s, a)));
            }
        }
        std::swap(q.values, next.values);
        if (opt.on_sweep) opt.on_sweep(sweep, q);
        if (residual < opt.tol) return q;
    }
    std::ostringstream os;
    os.precision(6);
    os << "value_iteration(" << to_string(kind) << "): residual " << std::scientific << residual
       << " >= tol " << opt.tol << " after " << opt.max_sweeps << " sweeps";
    throw NoConvergence(os.str());
}

inline QTable value_iteration(const TabularMDP& mdp, DualKind kind, double tol,
                              std::size_t max_sweeps) {
    ValueIterationOptions opt;
    opt.tol = tol;
    opt.max_sweeps = max_sweeps;
    return value_iteration(mdp, kind, opt);
}

/// Sup-norm Bellman residual of an arbitrary table under the dual backup.
inline double bellman_residual(const TabularMDP& mdp, const QTable& q) {
    double r = 0.0;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        if (mdp.is_terminal(s)) continue;
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            double backup = 0.0;
            for (const auto& succ : mdp.successors(s, a))
                backup += succ.prob *
                          (dual_reward(q.kind, TerminalKind::none, mdp.terminal_kind(succ.state)) +
                           (mdp.is_terminal(succ.state) ? 0.0 : q.state_value(succ.state)));
            r = std::max(r, std::abs(backup - q(s, a)));
        }
    }
    return r;
}

struct SpecialStateSets {
    std::vector<std::size_t> dead_ends;
    std::vector<std::size_t> rescues;

    [[nodiscard]] bool is_dead_end(std::size_t s) const {
        return std::binary_search(dead_ends.begin(), dead_ends.end(), s);
    }
    [[nodiscard]] bool is_rescue(std::size_t s) const {
        return std::binary_search(rescues.begin(), rescues.end(), s);
    }
    bool operator==(const SpecialStateSets&) const = default;
};

inline nlohmann::json to_json(const SpecialStateSets& sets) {
    return {{"dead_ends", sets.dead_ends}, {"rescues", sets.rescues}};
}

inline SpecialStateSets special_sets_from_json(const nlohmann::json& j) {
    SpecialStateSets s;
    s.dead_ends = j.at("dead_ends").get<std::vector<std::size_t>>();
    s.rescues = j.at("rescues").get<std::vector<std::size_t>>();
    std::sort(s.dead_ends.begin(), s.dead_ends.end());
    std::sort(s.rescues.begin(), s.rescues.end());
    return s;
}

namespace detail {

/// Greatest fixed point of X -> {s in X : quant_a mass(s,a) into X u target = 1}.
/// `every_action` selects the universal quantifier, otherwise existential.
inline std::vector<std::size_t> support_fixed_point(const TabularMDP& mdp, TerminalKind target,
                                                    bool every_action) {
    const std::size_t S = mdp.n_states();
    std::vector<char> in(S, 0);
    for (std::size_t s = 0; s < S; ++s) in[s] = !mdp.is_terminal(s);
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<char> next = in;
        for (std::size_t s = 0; s < S; ++s) {
            if (!in[s]) continue;
            bool any = false, all = true;
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
                double mass = 0.0;
                for (const auto& succ : mdp.successors(s, a))
                    if (in[succ.state] || mdp.terminal_kind(succ.state) == target)
                        mass += succ.prob;
                const bool full = mass >= 1.0 - kProbTol;
                any = any || full;
                all = all && full;
            }
            if (!(every_action ? all : any)) {
                next[s] = 0;
                changed = true;
            }
        }
        in.swap(next);
    }
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < S; ++s)
        if (in[s]) out.push_back(s);
    return out;
}

} // namespace detail

/// Dead-end and rescue sets from transition supports, each confirmed to end in
/// its terminal kind with probability 1 (worst case for dead-ends, under the
/// witness actions for rescues).
inline SpecialStateSets classify_special_states(const TabularMDP& mdp) {
    require_valid(mdp);
    SpecialStateSets sets;
    sets.dead_ends = detail::support_fixed_point(mdp, TerminalKind::negative, true);
    sets.rescues = detail::support_fixed_point(mdp, TerminalKind::positive, false);
    if (!confirm_termination(mdp, sets.dead_ends, TerminationMode::worst_case))
        throw NonTerminatingRegion(
            "candidate dead-end region admits a non-terminating policy (" +
            std::to_string(sets.dead_ends.size()) + " states)");
    if (!confirm_termination(mdp, sets.rescues, TerminationMode::witness_policy))
        throw NonTerminatingRegion(
            "candidate rescue region cannot be left through a positive terminal with "
            "probability 1 (" +
            std::to_string(sets.rescues.size()) + " states)");
    return sets;
}

/// Oracle decomposition of the dual values per (state, action).
struct OutcomeProbs {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> p_dead, f_neg, m_neg;
    std::vector<double> p_rescue, f_pos, m_pos;
    /// Greedy actions (lowest-index ties) used for the M terms.
    std::vector<std::size_t> greedy_d, greedy_r;

    [[nodiscard]] std::size_t idx(std::size_t s, std::size_t a) const { return s * n_actions + a; }
    /// Certainty of ending in a dead-end or negative terminal after (s,a).
    [[nodiscard]] double lambda(std::size_t s, std::size_t a) const {
        return p_dead[idx(s, a)] + f_neg[idx(s, a)];
    }
};

struct OutcomeOptions {
    double tol = 1e-12;
    std::size_t max_sweeps = 2'000'000;
};

namespace detail {

/// Probability of ending in `target` from each state when following the
/// greedy policy; linear fixed point iterated from 0.
inline std::vector<double> outcome_under_policy(const TabularMDP& mdp,
                                                const std::vector<std::size_t>& policy,
                                                TerminalKind target, const OutcomeOptions& opt) {
    const std::size_t S = mdp.n_states();
    std::vector<double> p(S, 0.0), next(S, 0.0);
    for (std::size_t sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double change = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            if (mdp.is_terminal(s)) continue;
            double v = 0.0;
            for (const auto& succ : mdp.successors(s, policy[s])) {
                const TerminalKind k = mdp.terminal_kind(succ.state);
                v += succ.prob * (k == TerminalKind::none ? p[succ.state] : (k == target ? 1.0 : 0.0));
            }
            next[s] = v;
            change = std::max(change, std::abs(v - p[s]));
        }
        p.swap(next);
        if (change < opt.tol) return p;
    }
    throw NoConvergence("outcome probability iteration did not settle");
}

} // namespace detail

inline OutcomeProbs outcome_probabilities(const TabularMDP& mdp, const SpecialStateSets& sets,
                                          const QTable& q_d, const QTable& q_r,
                                          const OutcomeOptions& opt = {}) {
    const std::size_t S = mdp.n_states(), A = mdp.n_actions();
    if (q_d.kind != DualKind::D || q_r.kind != DualKind::R)
        throw StaleInputs("outcome_probabilities expects a D table and an R table");
    if (q_d.n_states != S || q_r.n_states != S || q_d.n_actions != A || q_r.n_actions != A)
        throw StaleInputs("Q table dimensions do not match the MDP");
    for (std::size_t s : sets.dead_ends)
        if (s >= S) throw StaleInputs("dead-end index out of range");
    for (std::size_t s : sets.rescues)
        if (s >= S) throw StaleInputs("rescue index out of range");

    OutcomeProbs out;
    out.n_states = S;
    out.n_actions = A;
    for (auto* v : {&out.p_dead, &out.f_neg, &out.m_neg, &out.p_rescue, &out.f_pos, &out.m_pos})
        v->assign(S * A, 0.0);
    out.greedy_d.assign(S, 0);
    out.greedy_r.assign(S, 0);
    for (std::size_t s = 0; s < S; ++s) {
        out.greedy_d[s] = q_d.greedy_action(s);
        out.greedy_r[s] = q_r.greedy_action(s);
    }
    const auto mort = detail::outcome_under_policy(mdp, out.greedy_d, TerminalKind::negative, opt);
    const auto rec = detail::outcome_under_policy(mdp, out.greedy_r, TerminalKind::positive, opt);
    const auto dead = detail::membership(S, sets.dead_ends);
    const auto resc = detail::membership(S, sets.rescues);

    for (std::size_t s = 0; s < S; ++s) {
        if (mdp.is_terminal(s)) continue;
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t i = out.idx(s, a);
            for (const auto& succ : mdp.successors(s, a)) {
                const TerminalKind k = mdp.terminal_kind(succ.state);
                if (k == TerminalKind::negative) {
                    out.f_neg[i] += succ.prob;
                } else if (k == TerminalKind::positive) {
                    out.f_pos[i] += succ.prob;
                } else {
                    if (dead[succ.state]) out.p_dead[i] += succ.prob;
                    else out.m_neg[i] += succ.prob * mort[succ.state];
                    if (resc[succ.state]) out.p_rescue[i] += succ.prob;
                    else out.m_pos[i] += succ.prob * rec[succ.state];
                }
            }
        }
    }
    return out;
}

} // namespace ded
