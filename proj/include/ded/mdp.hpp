#pragma once

#include "ded/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ded {

/// Probability tolerance shared by every row-sum and "full mass" test.
inline constexpr double kProbTol = 1e-9;

enum class TerminalKind : std::uint8_t { none, positive, negative };

/// Which of the two dual processes a value function belongs to.
/// D: -1 on entering a negative terminal. R: +1 on entering a positive terminal.
enum class DualKind : std::uint8_t { D, R };

inline std::string_view to_string(TerminalKind k) {
    switch (k) {
    case TerminalKind::positive: return "positive";
    case TerminalKind::negative: return "negative";
    default: return "none";
    }
}

inline TerminalKind terminal_kind_from_string(std::string_view s) {
    if (s == "none") return TerminalKind::none;
    if (s == "positive") return TerminalKind::positive;
    if (s == "negative") return TerminalKind::negative;
    throw InvalidMDP("unknown terminal kind '" + std::string(s) + "'");
}

inline std::string_view to_string(DualKind k) { return k == DualKind::D ? "D" : "R"; }

inline DualKind dual_kind_from_string(std::string_view s) {
    if (s == "D" || s == "d") return DualKind::D;
    if (s == "R" || s == "r") return DualKind::R;
    throw InvalidMDP("unknown dual kind '" + std::string(s) + "'");
}

struct ValueRange {
    double lo;
    double hi;
};

constexpr ValueRange value_range(DualKind k) noexcept {
    return k == DualKind::D ? ValueRange{-1.0, 0.0} : ValueRange{0.0, 1.0};
}

constexpr double clamp_value(DualKind k, double v) noexcept {
    const auto r = value_range(k);
    return v < r.lo ? r.lo : (v > r.hi ? r.hi : v);
}

/// Dual reward of a transition whose successor carries terminal label `to`.
/// Transitions out of a terminal state earn nothing.
constexpr double dual_reward(DualKind kind, TerminalKind from, TerminalKind to) noexcept {
    if (from != TerminalKind::none) return 0.0;
    if (kind == DualKind::D) return to == TerminalKind::negative ? -1.0 : 0.0;
    return to == TerminalKind::positive ? 1.0 : 0.0;
}

/// Episodic tabular MDP. Transition probabilities are stored densely in
/// (state, action, next_state) row-major order; a sparse successor index is
/// built once at construction. Rewards are never stored: when `reward_kind`
/// is set they follow from the successor's terminal label.
class TabularMDP {
public:
    struct Successor {
        std::size_t state;
        double prob;
    };

    TabularMDP() = default;

    TabularMDP(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
               std::vector<TerminalKind> terminal_kind, double discount = 1.0,
               std::optional<DualKind> reward_kind = std::nullopt)
        : n_states_(n_states), n_actions_(n_actions), transition_(std::move(transition)),
          terminal_kind_(std::move(terminal_kind)), discount_(discount),
          reward_kind_(reward_kind) {
        if (n_states_ == 0 || n_actions_ == 0)
            throw InvalidMDP("n_states and n_actions must be positive");
        if (transition_.size() != n_states_ * n_actions_ * n_states_)
            throw InvalidMDP("transition tensor has " + std::to_string(transition_.size()) +
                             " entries, expected " +
                             std::to_string(n_states_ * n_actions_ * n_states_));
        if (terminal_kind_.size() != n_states_)
            throw InvalidMDP("terminal_kind has " + std::to_string(terminal_kind_.size()) +
                             " entries, expected " + std::to_string(n_states_));
        build_index();
    }

    [[nodiscard]] std::size_t n_states() const noexcept { return n_states_; }
    [[nodiscard]] std::size_t n_actions() const noexcept { return n_actions_; }
    [[nodiscard]] double discount() const noexcept { return discount_; }
    [[nodiscard]] std::optional<DualKind> reward_kind() const noexcept { return reward_kind_; }
    [[nodiscard]] const std::vector<double>& transition() const noexcept { return transition_; }
    [[nodiscard]] const std::vector<TerminalKind>& terminal_kinds() const noexcept {
        return terminal_kind_;
    }

    [[nodiscard]] double prob(std::size_t s, std::size_t a, std::size_t next) const {
        return transition_[(s * n_actions_ + a) * n_states_ + next];
    }

    [[nodiscard]] std::span<const double> row(std::size_t s, std::size_t a) const {
        return {transition_.data() + (s * n_actions_ + a) * n_states_, n_states_};
    }

    /// Successors with nonzero probability, in increasing state order.
    [[nodiscard]] std::span<const Successor> successors(std::size_t s, std::size_t a) const {
        const std::size_t k = s * n_actions_ + a;
        return {successors_.data() + offsets_[k], offsets_[k + 1] - offsets_[k]};
    }

    [[nodiscard]] TerminalKind terminal_kind(std::size_t s) const { return terminal_kind_[s]; }
    [[nodiscard]] bool is_terminal(std::size_t s) const {
        return terminal_kind_[s] != TerminalKind::none;
    }

    /// Reward of (s, a, next) under the dual design; 0 when no dual kind is attached.
    [[nodiscard]] double reward(std::size_t s, std::size_t /*a*/, std::size_t next) const {
        if (!reward_kind_) return 0.0;
        return dual_reward(*reward_kind_, terminal_kind_[s], terminal_kind_[next]);
    }

    [[nodiscard]] std::vector<std::size_t> non_terminal_states() const {
        std::vector<std::size_t> out;
        for (std::size_t s = 0; s < n_states_; ++s)
            if (!is_terminal(s)) out.push_back(s);
        return out;
    }

private:
    void build_index() {
        offsets_.assign(n_states_ * n_actions_ + 1, 0);
        successors_.clear();
        for (std::size_t k = 0; k < n_states_ * n_actions_; ++k) {
            offsets_[k] = successors_.size();
            for (std::size_t next = 0; next < n_states_; ++next) {
                const double p = transition_[k * n_states_ + next];
                if (p != 0.0) successors_.push_back({next, p});
            }
        }
        offsets_.back() = successors_.size();
    }

    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    std::vector<double> transition_;
    std::vector<TerminalKind> terminal_kind_;
    double discount_ = 1.0;
    std::optional<DualKind> reward_kind_;
    std::vector<std::size_t> offsets_;
    std::vector<Successor> successors_;
};

/// One violated invariant found by validate_mdp.
struct Violation {
    enum class Kind {
        negative_probability,
        row_sum,
        non_absorbing_terminal,
        no_terminal,
        unreachable_terminal,
        bad_discount,
    };
    Kind kind;
    std::optional<std::size_t> state;
    std::optional<std::size_t> action;
    double value = 0.0;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }

    [[nodiscard]] std::string to_string() const {
        std::ostringstream os;
        for (const auto& v : violations) os << v.message << '\n';
        return os.str();
    }

    [[nodiscard]] bool has(Violation::Kind k) const {
        return std::any_of(violations.begin(), violations.end(),
                           [k](const Violation& v) { return v.kind == k; });
    }
};

/// Checks row sums, absorbing terminals, discount range and terminal
/// reachability (reverse BFS from terminals over positive-probability edges).
inline ValidationReport validate_mdp(const TabularMDP& mdp) {
    ValidationReport rep;
    const std::size_t S = mdp.n_states(), A = mdp.n_actions();
    auto add = [&](Violation::Kind k, std::optional<std::size_t> s, std::optional<std::size_t> a,
                   double value, std::string msg) {
        rep.violations.push_back({k, s, a, value, std::move(msg)});
    };

    if (!(mdp.discount() >= 0.0 && mdp.discount() <= 1.0))
        add(Violation::Kind::bad_discount, std::nullopt, std::nullopt, mdp.discount(),
            "discount " + std::to_string(mdp.discount()) + " outside [0,1]");

    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            double sum = 0.0;
            bool negative = false;
            for (double p : mdp.row(s, a)) {
                sum += p;
                negative = negative || p < 0.0 || !std::isfinite(p);
            }
            if (negative)
                add(Violation::Kind::negative_probability, s, a, sum,
                    "row (s=" + std::to_string(s) + ", a=" + std::to_string(a) +
                        ") has a negative or non-finite probability");
            if (std::abs(sum - 1.0) > kProbTol) {
                std::ostringstream os;
                os.precision(12);
                os << "row (s=" << s << ", a=" << a << ") sums to " << sum;
                add(Violation::Kind::row_sum, s, a, sum, os.str());
            }
            if (mdp.is_terminal(s) && std::abs(mdp.prob(s, a, s) - 1.0) > kProbTol) {
                std::ostringstream os;
                os.precision(12);
                os << "terminal state " << s << " is not absorbing under action " << a
                   << " (self-transition " << mdp.prob(s, a, s) << ")";
                add(Violation::Kind::non_absorbing_terminal, s, a, mdp.prob(s, a, s), os.str());
            }
        }
    }

    std::vector<std::vector<std::size_t>> predecessors(S);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            for (const auto& succ : mdp.successors(s, a))
                if (succ.prob > 0.0 && succ.state != s) predecessors[succ.state].push_back(s);

    std::vector<char> reaches(S, 0);
    std::deque<std::size_t> frontier;
    for (std::size_t s = 0; s < S; ++s) {
        if (mdp.is_terminal(s)) {
            reaches[s] = 1;
            frontier.push_back(s);
        }
    }
    const bool any_terminal = !frontier.empty();
    if (!any_terminal)
        add(Violation::Kind::no_terminal, std::nullopt, std::nullopt, 0.0,
            "MDP has no terminal state");
    while (!frontier.empty()) {
        const std::size_t t = frontier.front();
        frontier.pop_front();
        for (std::size_t p : predecessors[t]) {
            if (!reaches[p]) {
                reaches[p] = 1;
                frontier.push_back(p);
            }
        }
    }
    if (any_terminal) {
        for (std::size_t s = 0; s < S; ++s)
            if (!reaches[s])
                add(Violation::Kind::unreachable_terminal, s, std::nullopt, 0.0,
                    "no terminal state is reachable from state " + std::to_string(s));
    }
    return rep;
}

inline void require_valid(const TabularMDP& mdp) {
    const auto rep = validate_mdp(mdp);
    if (!rep.ok()) throw InvalidMDP(rep.to_string());
}

/// Rescales rows whose sum is within kProbTol of 1 so they sum to 1 exactly
/// (up to rounding). Rows further off are left untouched for validation to reject.
inline void normalize_rows_within_tolerance(std::vector<double>& transition, std::size_t n_states) {
    for (std::size_t off = 0; off + n_states <= transition.size(); off += n_states) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n_states; ++i) sum += transition[off + i];
        if (sum != 1.0 && std::abs(sum - 1.0) <= kProbTol)
            for (std::size_t i = 0; i < n_states; ++i) transition[off + i] /= sum;
    }
}

/// Same dynamics, dual rewards of `kind`, undiscounted.
inline TabularMDP build_dual_mdp(const TabularMDP& mdp, DualKind kind) {
    require_valid(mdp);
    return TabularMDP(mdp.n_states(), mdp.n_actions(), mdp.transition(), mdp.terminal_kinds(),
                      1.0, kind);
}

/// Row-stochastic state x action matrix.
struct PolicyMatrix {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<double> probs;

    PolicyMatrix() = default;
    PolicyMatrix(std::size_t ns, std::size_t na, double fill = 0.0)
        : n_states(ns), n_actions(na), probs(ns * na, fill) {}

    [[nodiscard]] std::span<double> row(std::size_t s) {
        return {probs.data() + s * n_actions, n_actions};
    }
    [[nodiscard]] std::span<const double> row(std::size_t s) const {
        return {probs.data() + s * n_actions, n_actions};
    }
    double& operator()(std::size_t s, std::size_t a) { return probs[s * n_actions + a]; }
    double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }
};

inline PolicyMatrix uniform_policy(std::size_t n_states, std::size_t n_actions) {
    return PolicyMatrix(n_states, n_actions, 1.0 / static_cast<double>(n_actions));
}

// ---------------------------------------------------------------------------
// Offline experience records

/// One recorded step: the state (tabular) and/or observation (vector) at time
/// t, the action taken, the reward received, and the terminal label of the
/// state entered. The successor of step t is step t+1.
struct Step {
    std::optional<std::size_t> state;
    std::vector<double> obs;
    std::size_t action = 0;
    double reward = 0.0;
    TerminalKind terminal = TerminalKind::none;

    bool operator==(const Step&) const = default;
};

struct Trajectory {
    std::string id;
    std::vector<Step> steps;
    TerminalKind outcome = TerminalKind::none;

    bool operator==(const Trajectory&) const = default;

    [[nodiscard]] std::size_t size() const noexcept { return steps.size(); }
    [[nodiscard]] bool terminated() const {
        return !steps.empty() && steps.back().terminal != TerminalKind::none;
    }
};

/// Materialized (s, a, r, s', terminal) view of step `step_index` of a trajectory.
struct Transition {
    std::optional<std::size_t> state;
    std::vector<double> obs;
    std::size_t action = 0;
    double reward = 0.0;
    std::optional<std::size_t> next_state;
    std::vector<double> next_obs;
    TerminalKind terminal = TerminalKind::none;
    std::size_t step_index = 0;
};

inline Transition transition_at(const Trajectory& traj, std::size_t t) {
    const Step& st = traj.steps.at(t);
    Transition tr{st.state, st.obs, st.action, st.reward, std::nullopt, {}, st.terminal, t};
    if (t + 1 < traj.steps.size()) {
        tr.next_state = traj.steps[t + 1].state;
        tr.next_obs = traj.steps[t + 1].obs;
    }
    return tr;
}

/// Empty string when the trajectory satisfies its invariants, else a description.
inline std::string check_trajectory(const Trajectory& traj) {
    if (traj.steps.empty()) return "trajectory '" + traj.id + "' is empty";
    for (std::size_t t = 0; t + 1 < traj.steps.size(); ++t)
        if (traj.steps[t].terminal != TerminalKind::none)
            return "trajectory '" + traj.id + "' has a terminal label at step " +
                   std::to_string(t) + " before its last step";
    if (traj.outcome == TerminalKind::none) return "trajectory '" + traj.id + "' has no outcome";
    if (traj.steps.back().terminal != TerminalKind::none &&
        traj.steps.back().terminal != traj.outcome)
        return "trajectory '" + traj.id + "' outcome does not match its final terminal label";
    return {};
}

/// Undiscounted dual return: -1/0 for D, 0/+1 for R.
inline double trajectory_return(const Trajectory& traj, DualKind kind) {
    if (!traj.terminated())
        throw Unterminated("trajectory '" + traj.id + "' does not end in a terminal state");
    double g = 0.0;
    for (const auto& st : traj.steps) g += dual_reward(kind, TerminalKind::none, st.terminal);
    return g;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const TabularMDP& mdp) {
    using nlohmann::json;
    json j;
    j["n_states"] = mdp.n_states();
    j["n_actions"] = mdp.n_actions();
    json kinds = json::array();
    for (auto k : mdp.terminal_kinds()) kinds.push_back(std::string(to_string(k)));
    j["terminal_kind"] = kinds;
    json t = json::array();
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        json per_action = json::array();
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            const auto r = mdp.row(s, a);
            per_action.push_back(std::vector<double>(r.begin(), r.end()));
        }
        t.push_back(std::move(per_action));
    }
    j["transition"] = std::move(t);
    j["discount"] = mdp.discount();
    return j;
}

inline TabularMDP mdp_from_json(const nlohmann::json& j) {
    try {
        const auto S = j.at("n_states").get<std::size_t>();
        const auto A = j.at("n_actions").get<std::size_t>();
        std::vector<TerminalKind> kinds;
        for (const auto& k : j.at("terminal_kind")) kinds.push_back(terminal_kind_from_string(k.get<std::string>()));
        const auto& t = j.at("transition");
        if (t.size() != S) throw InvalidMDP("transition has " + std::to_string(t.size()) + " state blocks");
        std::vector<double> flat;
        flat.reserve(S * A * S);
        for (const auto& per_action : t) {
            if (per_action.size() != A) throw InvalidMDP("transition block has wrong action count");
            for (const auto& row : per_action) {
                if (row.size() != S) throw InvalidMDP("transition row has wrong length");
                for (const auto& p : row) flat.push_back(p.get<double>());
            }
        }
        normalize_rows_within_tolerance(flat, S);
        const double discount = j.value("discount", 1.0);
        return TabularMDP(S, A, std::move(flat), std::move(kinds), discount);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidMDP(std::string("malformed MDP document: ") + e.what());
    }
}

} // namespace ded
