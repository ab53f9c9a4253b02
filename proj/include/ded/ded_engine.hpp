#pragma once

#include "ded/errors.hpp"
#include "ded/exact_solver.hpp"
#include "ded/mdp.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ded {

struct ThresholdPair {
    double d;
    double r;
    bool operator==(const ThresholdPair&) const = default;
};

struct Thresholds {
    ThresholdPair red{-0.25, 0.75};
    ThresholdPair yellow{-0.15, 0.85};

    void validate() const {
        const bool ok = -1.0 < red.d && red.d <= yellow.d && yellow.d < 0.0 && 0.0 < red.r &&
                        red.r <= yellow.r && yellow.r < 1.0;
        if (!ok)
            throw ConfigError("thresholds must satisfy -1 < red.d <= yellow.d < 0 and "
                              "0 < red.r <= yellow.r < 1");
    }
};

inline nlohmann::json to_json(const Thresholds& th) {
    return {{"red", {{"d", th.red.d}, {"r", th.red.r}}},
            {"yellow", {{"d", th.yellow.d}, {"r", th.yellow.r}}}};
}

enum class Flag : std::uint8_t { none = 0, yellow = 1, red = 2 };
enum class FlagBasis : std::uint8_t { state_median, treatment };

struct FlagLevel {
    Flag level = Flag::none;
    FlagBasis basis = FlagBasis::state_median;
    bool operator==(const FlagLevel&) const = default;
};

inline std::string_view to_string(Flag f) {
    switch (f) {
    case Flag::red: return "red";
    case Flag::yellow: return "yellow";
    default: return "none";
    }
}

inline Flag flag_from_string(std::string_view s) {
    if (s == "none") return Flag::none;
    if (s == "yellow") return Flag::yellow;
    if (s == "red") return Flag::red;
    throw ConfigError("unknown flag level '" + std::string(s) + "'");
}

/// Median; an even count averages the two middle values.
inline double median(std::span<const double> xs) {
    if (xs.empty()) throw EmptyRow("median of an empty row");
    std::vector<double> v(xs.begin(), xs.end());
    const std::size_t n = v.size(), mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// Concurrent-threshold rule shared by state and treatment flags (strict <).
inline Flag flag_level(double qd, double qr, const Thresholds& th) {
    if (qd < th.red.d && qr < th.red.r) return Flag::red;
    if (qd < th.yellow.d && qr < th.yellow.r) return Flag::yellow;
    return Flag::none;
}

inline FlagLevel flag_state(std::span<const double> qd_row, std::span<const double> qr_row,
                            const Thresholds& th = {}) {
    if (qd_row.empty() || qr_row.empty()) throw EmptyRow("flag_state needs at least one action");
    if (qd_row.size() != qr_row.size())
        throw ShapeMismatch("flag_state: D and R rows differ in length");
    return {flag_level(median(qd_row), median(qr_row), th), FlagBasis::state_median};
}

inline FlagLevel flag_treatment(double qd, double qr, const Thresholds& th = {}) {
    if (!(qd >= -1.0 && qd <= 0.0))
        throw OutOfRange("Q_D value " + std::to_string(qd) + " outside [-1,0]");
    if (!(qr >= 0.0 && qr <= 1.0))
        throw OutOfRange("Q_R value " + std::to_string(qr) + " outside [0,1]");
    return {flag_level(qd, qr, th), FlagBasis::treatment};
}

/// Caps each action at 1 + Q_D and re-forms a distribution by proportional
/// water-filling: clipped excess goes to unsaturated actions in proportion to
/// their original probability (or to their headroom when that is all zero).
inline std::vector<double> secure_policy(std::span<const double> pi_row,
                                         std::span<const double> qd_row) {
    const std::size_t n = pi_row.size();
    if (n == 0) throw EmptyRow("secure_policy on an empty row");
    if (qd_row.size() != n) throw ShapeMismatch("secure_policy: pi and Q_D rows differ in length");
    double pi_sum = 0.0;
    for (double p : pi_row) {
        if (!(p >= 0.0)) throw OutOfRange("secure_policy: negative probability");
        pi_sum += p;
    }
    if (std::abs(pi_sum - 1.0) > kProbTol)
        throw OutOfRange("secure_policy: policy row sums to " + std::to_string(pi_sum));
    std::vector<double> cap(n);
    double cap_sum = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        if (!(qd_row[a] >= -1.0 && qd_row[a] <= 0.0))
            throw OutOfRange("secure_policy: Q_D value " + std::to_string(qd_row[a]) +
                             " outside [-1,0]");
        cap[a] = 1.0 + qd_row[a];
        cap_sum += cap[a];
    }
    if (cap_sum < 1.0 - 1e-12) {
        if (cap_sum == 0.0)
            throw DeadEndState("every action has Q_D = -1; no secure distribution exists");
        throw DeadEndState("caps 1 + Q_D sum to " + std::to_string(cap_sum) +
                           " < 1; no secure distribution exists");
    }

    std::vector<char> fixed(n, 0);
    std::vector<double> out(n, 0.0);
    for (std::size_t iter = 0; iter <= n; ++iter) {
        double remaining = 1.0, weight = 0.0, headroom = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (fixed[a]) {
                remaining -= cap[a];
            } else {
                weight += pi_row[a];
                headroom += cap[a];
            }
        }
        remaining = std::max(remaining, 0.0);
        const bool by_pi = weight > 0.0;
        bool clipped = false;
        for (std::size_t a = 0; a < n; ++a) {
            if (fixed[a]) {
                out[a] = cap[a];
                continue;
            }
            out[a] = by_pi ? remaining * pi_row[a] / weight
                           : (headroom > 0.0 ? remaining * cap[a] / headroom : 0.0);
        }
        for (std::size_t a = 0; a < n; ++a) {
            if (!fixed[a] && out[a] > cap[a]) {
                fixed[a] = 1;
                clipped = true;
            }
        }
        if (!clipped) break;
    }
    return out;
}

struct SecuredPolicy {
    PolicyMatrix policy;
    /// Non-terminal states whose caps admit no distribution. Their rows hold
    /// the capped sub-distribution min(pi, 1 + Q_D), which may sum below 1.
    std::vector<std::size_t> infeasible_states;
};

/// Applies secure_policy to every non-terminal row; terminal rows are copied.
inline SecuredPolicy secure_policy_matrix(const TabularMDP& mdp, const PolicyMatrix& pi,
                                          const QTable& q_d) {
    if (pi.n_states != mdp.n_states() || pi.n_actions != mdp.n_actions() ||
        q_d.n_states != mdp.n_states() || q_d.n_actions != mdp.n_actions())
        throw ShapeMismatch("secure_policy_matrix: policy/Q_D shape does not match the MDP");
    SecuredPolicy out{pi, {}};
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        if (mdp.is_terminal(s)) continue;
        auto row = out.policy.row(s);
        try {
            const auto secured = secure_policy(pi.row(s), q_d.row(s));
            std::copy(secured.begin(), secured.end(), row.begin());
        } catch (const DeadEndState&) {
            out.infeasible_states.push_back(s);
            for (std::size_t a = 0; a < mdp.n_actions(); ++a)
                row[a] = std::min(pi(s, a), std::max(0.0, 1.0 + q_d(s, a)));
        }
    }
    return out;
}

/// Floors each action at Q_R and renormalizes the remaining mass over the
/// other actions in proportion to pi. Ships separately from secure_policy:
/// the floor and the caps can contradict each other on the same row.
inline std::vector<double> apply_rescue_floor(std::span<const double> pi_row,
                                              std::span<const double> qr_row) {
    const std::size_t n = pi_row.size();
    if (qr_row.size() != n) throw ShapeMismatch("apply_rescue_floor: row length mismatch");
    double floor_sum = 0.0;
    for (double q : qr_row) floor_sum += q;
    std::vector<double> out(pi_row.begin(), pi_row.end());
    if (floor_sum > 1.0 + 1e-12) return out;
    std::vector<char> fixed(n, 0);
    for (std::size_t iter = 0; iter <= n; ++iter) {
        double remaining = 1.0, weight = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (fixed[a]) remaining -= qr_row[a];
            else weight += pi_row[a];
        }
        bool raised = false;
        for (std::size_t a = 0; a < n; ++a) {
            if (fixed[a]) {
                out[a] = qr_row[a];
                continue;
            }
            out[a] = weight > 0.0 ? std::max(remaining, 0.0) * pi_row[a] / weight : 0.0;
        }
        for (std::size_t a = 0; a < n; ++a) {
            if (!fixed[a] && out[a] < qr_row[a]) {
                fixed[a] = 1;
                raised = true;
            }
        }
        if (!raised) break;
    }
    return out;
}

struct SecurityViolation {
    std::size_t state;
    std::size_t action;
    double pi;
    double bound;
    bool rescue_floor = false;
};

struct SecurityOptions {
    double tol = 1e-9;
    /// Slack for dead-end values only known to reach -(1 - epsilon).
    double epsilon = 0.0;
    /// When set, pairs with pi(s,a) >= Q_R(s,a) must also satisfy
    /// pi(s,a) >= P_R + F_R (the rescue-floor check).
    const QTable* rescue_floor = nullptr;
};

struct SecurityReport {
    std::vector<SecurityViolation> violations;
    std::size_t pairs_checked = 0;
    std::size_t floor_pairs_checked = 0;
    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
    [[nodiscard]] std::size_t cap_violations() const {
        return static_cast<std::size_t>(std::count_if(
            violations.begin(), violations.end(),
            [](const SecurityViolation& v) { return !v.rescue_floor; }));
    }
};

/// Pointwise check pi(s,a) <= 1 - (1 - epsilon) * (P_D + F_D) over
/// non-terminal states, plus the optional rescue-floor check.
inline SecurityReport certify_security(const TabularMDP& mdp, const PolicyMatrix& pi,
                                       const OutcomeProbs& oracle,
                                       const SecurityOptions& opt = {}) {
    if (pi.n_states != mdp.n_states() || pi.n_actions != mdp.n_actions() ||
        oracle.n_states != mdp.n_states() || oracle.n_actions != mdp.n_actions())
        throw StaleInputs("certify_security: policy/oracle shape does not match the MDP");
    if (opt.rescue_floor && (opt.rescue_floor->n_states != mdp.n_states() ||
                             opt.rescue_floor->n_actions != mdp.n_actions()))
        throw StaleInputs("certify_security: rescue-floor table shape does not match the MDP");
    SecurityReport rep;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        if (mdp.is_terminal(s)) continue;
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            ++rep.pairs_checked;
            const double bound = 1.0 - (1.0 - opt.epsilon) * oracle.lambda(s, a);
            if (pi(s, a) > bound + opt.tol) rep.violations.push_back({s, a, pi(s, a), bound});
            if (opt.rescue_floor && pi(s, a) >= (*opt.rescue_floor)(s, a) - opt.tol) {
                ++rep.floor_pairs_checked;
                const std::size_t i = oracle.idx(s, a);
                const double floor = oracle.p_rescue[i] + oracle.f_pos[i];
                if (pi(s, a) < floor - opt.tol)
                    rep.violations.push_back({s, a, pi(s, a), floor, true});
            }
        }
    }
    return rep;
}

/// One row of the per-step flag report.
struct FlagRecord {
    std::string traj_id;
    std::size_t step = 0;
    Flag flag_state = Flag::none;
    Flag flag_treatment = Flag::none;
    double qd_median = 0.0;
    double qr_median = 0.0;
    double qd_admin = 0.0;
    double qr_admin = 0.0;
};

inline FlagRecord make_flag_record(std::string traj_id, std::size_t step,
                                   std::span<const double> qd_row, std::span<const double> qr_row,
                                   std::size_t admin_action, const Thresholds& th) {
    if (admin_action >= qd_row.size()) throw BadIndex("administered action out of range");
    FlagRecord r;
    r.traj_id = std::move(traj_id);
    r.step = step;
    r.qd_median = median(qd_row);
    r.qr_median = median(qr_row);
    r.flag_state = flag_state(qd_row, qr_row, th).level;
    r.qd_admin = qd_row[admin_action];
    r.qr_admin = qr_row[admin_action];
    r.flag_treatment = flag_treatment(r.qd_admin, r.qr_admin, th).level;
    return r;
}

} // namespace ded
