#pragma once

#include "ded/ded_engine.hpp"
#include "ded/errors.hpp"
#include "ded/exact_solver.hpp"
#include "ded/mdp.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ded {

/// Everything the exact oracles compute for one MDP.
struct ExactSolution {
    QTable q_d;
    QTable q_r;
    SpecialStateSets sets;
    OutcomeProbs oracle;
};

inline ExactSolution solve_exact(const TabularMDP& mdp, const ValueIterationOptions& vi = {}) {
    ExactSolution sol;
    sol.q_d = value_iteration(mdp, DualKind::D, vi);
    sol.q_r = value_iteration(mdp, DualKind::R, vi);
    sol.sets = classify_special_states(mdp);
    sol.oracle = outcome_probabilities(mdp, sol.sets, sol.q_d, sol.q_r);
    return sol;
}

struct TheoremCheck {
    std::string name;
    bool passed = true;
    std::size_t failures = 0;
    std::string detail;
};

/// Realized threshold between the certain cluster (values at -1 or +1) and
/// the closest other value. Undefined when either side is empty.
struct Separation {
    std::optional<double> threshold;
    std::optional<double> margin;
    std::size_t cluster_size = 0;
    std::size_t other_size = 0;
};

struct TheoremReport {
    std::vector<TheoremCheck> checks;
    Separation separation_d;
    Separation separation_r;
    std::size_t n_dead_ends = 0;
    std::size_t n_rescues = 0;
    std::vector<std::size_t> infeasible_states;
    std::size_t greedy_ties_d = 0;
    std::size_t greedy_ties_r = 0;
    double max_lemma2_error_d = 0.0;
    double max_lemma2_error_r = 0.0;

    [[nodiscard]] bool passed() const {
        return std::all_of(checks.begin(), checks.end(),
                           [](const TheoremCheck& c) { return c.passed; });
    }

    [[nodiscard]] const TheoremCheck* find(std::string_view name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }

    [[nodiscard]] std::string to_text() const {
        std::ostringstream os;
        os.precision(6);
        for (const auto& c : checks) {
            os << (c.passed ? "PASS " : "FAIL ") << c.name;
            if (!c.detail.empty()) os << "  " << c.detail;
            os << '\n';
        }
        auto sep = [&](const char* label, const Separation& s) {
            os << label << ": ";
            if (s.threshold)
                os << "threshold " << *s.threshold << " margin " << *s.margin;
            else
                os << "undefined";
            os << " (cluster " << s.cluster_size << ", other " << s.other_size << ")\n";
        };
        sep("separation D", separation_d);
        sep("separation R", separation_r);
        os << "dead-ends " << n_dead_ends << ", rescues " << n_rescues << ", infeasible rows "
           << infeasible_states.size() << ", greedy ties D/R " << greedy_ties_d << '/'
           << greedy_ties_r << '\n';
        return os.str();
    }
};

inline nlohmann::json to_json(const TheoremReport& r) {
    using nlohmann::json;
    json checks = json::array();
    for (const auto& c : r.checks)
        checks.push_back(
            {{"name", c.name}, {"passed", c.passed}, {"failures", c.failures}, {"detail", c.detail}});
    auto sep = [](const Separation& s) {
        json j{{"cluster_size", s.cluster_size}, {"other_size", s.other_size}};
        j["threshold"] = s.threshold ? json(*s.threshold) : json(nullptr);
        j["margin"] = s.margin ? json(*s.margin) : json(nullptr);
        return j;
    };
    return {{"passed", r.passed()},
            {"checks", std::move(checks)},
            {"separation_d", sep(r.separation_d)},
            {"separation_r", sep(r.separation_r)},
            {"n_dead_ends", r.n_dead_ends},
            {"n_rescues", r.n_rescues},
            {"infeasible_states", r.infeasible_states},
            {"greedy_ties_d", r.greedy_ties_d},
            {"greedy_ties_r", r.greedy_ties_r},
            {"max_lemma2_error_d", r.max_lemma2_error_d},
            {"max_lemma2_error_r", r.max_lemma2_error_r}};
}

struct TheoremOptions {
    double tol = 1e-6;
    double security_tol = 1e-9;
    /// Policy to secure and certify; uniform when absent.
    std::optional<PolicyMatrix> policy;
    /// Also run the rescue-floor check on the floored policy.
    bool check_rescue_floor = false;
};

namespace detail {

inline std::size_t count_ties(const QTable& q, const TabularMDP& mdp) {
    std::size_t ties = 0;
    for (std::size_t s = 0; s < q.n_states; ++s) {
        if (mdp.is_terminal(s)) continue;
        const double best = q.state_value(s);
        std::size_t hits = 0;
        for (double v : q.row(s)) hits += v == best;
        ties += hits > 1;
    }
    return ties;
}

inline Separation separation(const std::vector<double>& cluster, const std::vector<double>& other,
                             bool cluster_is_low) {
    Separation sep;
    sep.cluster_size = cluster.size();
    sep.other_size = other.size();
    if (cluster.empty() || other.empty()) return sep;
    if (cluster_is_low) {
        const double hi = *std::max_element(cluster.begin(), cluster.end());
        const double lo = *std::min_element(other.begin(), other.end());
        sep.threshold = 0.5 * (hi + lo);
        sep.margin = 0.5 * (lo - hi);
    } else {
        const double lo = *std::min_element(cluster.begin(), cluster.end());
        const double hi = *std::max_element(other.begin(), other.end());
        sep.threshold = 0.5 * (hi + lo);
        sep.margin = 0.5 * (lo - hi);
    }
    return sep;
}

} // namespace detail

/// Runs the exact oracles and cross-checks every claim of the dual-value
/// theory pointwise. Never throws for a malformed or improper MDP; the
/// failure is recorded as a check instead.
inline TheoremReport verify_theorem1(const TabularMDP& mdp, const TheoremOptions& opt = {}) {
    TheoremReport rep;
    auto add = [&](std::string name, std::size_t failures, std::string detail = {}) {
        rep.checks.push_back({std::move(name), failures == 0, failures, std::move(detail)});
    };

    const auto validation = validate_mdp(mdp);
    add("valid", validation.violations.size(), validation.ok() ? "" : validation.to_string());
    if (!validation.ok()) return rep;

    const bool proper =
        confirm_termination(mdp, mdp.non_terminal_states(), TerminationMode::worst_case);
    add("proper", proper ? 0 : 1, proper ? "" : "some policy does not terminate w.p.1");
    if (!proper) return rep;

    ExactSolution sol;
    try {
        sol = solve_exact(mdp);
    } catch (const Error& e) {
        add("exact_solve", 1, e.what());
        return rep;
    }
    const auto& [q_d, q_r, sets, oracle] = sol;
    rep.n_dead_ends = sets.dead_ends.size();
    rep.n_rescues = sets.rescues.size();
    rep.greedy_ties_d = detail::count_ties(q_d, mdp);
    rep.greedy_ties_r = detail::count_ties(q_r, mdp);

    const std::size_t S = mdp.n_states(), A = mdp.n_actions();
    const double tol = opt.tol;

    std::size_t l1d = 0, l1r = 0, disjoint = 0;
    for (std::size_t s = 0; s < S; ++s) {
        if (mdp.is_terminal(s)) continue;
        const bool vd_low = q_d.state_value(s) <= -1.0 + tol;
        const bool vr_high = q_r.state_value(s) >= 1.0 - tol;
        l1d += vd_low != sets.is_dead_end(s);
        l1r += vr_high != sets.is_rescue(s);
        disjoint += sets.is_dead_end(s) && sets.is_rescue(s);
    }
    add("lemma1_dead_end", l1d);
    add("lemma1_rescue", l1r);
    add("sets_disjoint", disjoint);

    std::size_t l2d = 0, l2r = 0, t1 = 0, t2 = 0;
    std::vector<double> cluster_d, other_d, cluster_r, other_r;
    for (std::size_t s = 0; s < S; ++s) {
        if (mdp.is_terminal(s)) continue;
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t i = oracle.idx(s, a);
            const double lam_d = oracle.p_dead[i] + oracle.f_neg[i];
            const double lam_r = oracle.p_rescue[i] + oracle.f_pos[i];
            const double err_d = std::abs(-q_d(s, a) - (lam_d + oracle.m_neg[i]));
            const double err_r = std::abs(q_r(s, a) - (lam_r + oracle.m_pos[i]));
            rep.max_lemma2_error_d = std::max(rep.max_lemma2_error_d, err_d);
            rep.max_lemma2_error_r = std::max(rep.max_lemma2_error_r, err_r);
            l2d += !(err_d < tol);
            l2r += !(err_r < tol);
            const bool certain_d = lam_d >= 1.0 - tol;
            const bool certain_r = lam_r >= 1.0 - tol;
            t1 += certain_d != (q_d(s, a) <= -1.0 + tol);
            t2 += certain_r != (q_r(s, a) >= 1.0 - tol);
            (certain_d ? cluster_d : other_d).push_back(q_d(s, a));
            (certain_r ? cluster_r : other_r).push_back(q_r(s, a));
        }
    }
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(3);
        os << std::scientific << v;
        return os.str();
    };
    add("lemma2_D", l2d, "max error " + fmt(rep.max_lemma2_error_d));
    add("lemma2_R", l2r, "max error " + fmt(rep.max_lemma2_error_r));
    add("T1", t1);
    add("T2", t2);

    rep.separation_d = detail::separation(cluster_d, other_d, true);
    rep.separation_r = detail::separation(cluster_r, other_r, false);
    auto sep_failures = [](const Separation& s) -> std::size_t {
        return s.margin && !(*s.margin > 0.0) ? 1 : 0;
    };
    add("T3", sep_failures(rep.separation_d), rep.separation_d.margin ? "" : "vacuous");
    add("T4", sep_failures(rep.separation_r), rep.separation_r.margin ? "" : "vacuous");

    const PolicyMatrix pi = opt.policy ? *opt.policy : uniform_policy(S, A);
    const auto secured = secure_policy_matrix(mdp, pi, q_d);
    rep.infeasible_states = secured.infeasible_states;
    SecurityOptions sec;
    sec.tol = opt.security_tol;
    const auto t5 = certify_security(mdp, secured.policy, oracle, sec);
    add("T5", t5.cap_violations(),
        std::to_string(t5.pairs_checked) + " pairs, " +
            std::to_string(secured.infeasible_states.size()) + " infeasible rows");

    if (opt.check_rescue_floor) {
        PolicyMatrix floored = pi;
        for (std::size_t s = 0; s < S; ++s) {
            if (mdp.is_terminal(s)) continue;
            const auto row = apply_rescue_floor(pi.row(s), q_r.row(s));
            std::copy(row.begin(), row.end(), floored.row(s).begin());
        }
        sec.rescue_floor = &q_r;
        const auto t6 = certify_security(mdp, floored, oracle, sec);
        add("T6", t6.violations.size() - t6.cap_violations(),
            std::to_string(t6.floor_pairs_checked) + " floored pairs");
    }
    return rep;
}

} // namespace ded
