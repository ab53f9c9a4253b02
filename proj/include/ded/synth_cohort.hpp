#pragma once

#include "ded/dataset.hpp"
#include "ded/errors.hpp"
#include "ded/exact_solver.hpp"
#include "ded/format.hpp"
#include "ded/mdp.hpp"
#include "ded/rng.hpp"
#include "ded/theorems.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ded {

struct CohortSpec {
    std::size_t n_states = 30; // non-terminal states; two terminals are appended
    std::size_t n_actions = 5;
    double dead_end_fraction = 0.2;
    std::size_t branching = 3;
    std::size_t obs_dim = 8;
    double obs_noise_sd = 0.1;
    std::size_t max_len = 18;
    std::uint64_t seed = 0;
    /// Chance that an ordinary (s,a) row leaks into the planted region.
    double harmful_action_prob = 0.3;
    /// Chance that an ordinary row has direct mass on the negative terminal.
    double direct_death_prob = 0.1;
    /// Chance that an ordinary row has discharge mass on the positive terminal.
    double discharge_prob = 0.7;
    /// Chance that an ordinary row discharges with certainty.
    double sure_discharge_prob = 0.05;

    void validate() const {
        if (n_states == 0 || n_actions == 0 || branching == 0 || obs_dim == 0 || max_len == 0)
            throw ConfigError("cohort counts must be positive");
        for (double f : {dead_end_fraction, harmful_action_prob, direct_death_prob, discharge_prob,
                         sure_discharge_prob})
            if (!(f >= 0.0 && f < 1.0)) throw ConfigError("cohort fractions must lie in [0,1)");
        if (!(obs_noise_sd >= 0.0)) throw ConfigError("obs_noise_sd must be non-negative");
    }
};

struct SyntheticMDP {
    TabularMDP mdp;
    std::vector<std::size_t> planted;
    SpecialStateSets truth;
    std::size_t positive_terminal = 0;
    std::size_t negative_terminal = 0;
    std::size_t attempts = 1;
};

namespace detail {

inline std::vector<std::size_t> pick_distinct(Rng& rng, std::size_t lo, std::size_t hi,
                                              std::size_t k) {
    std::vector<std::size_t> pool(hi - lo);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = lo + i;
    k = std::min(k, pool.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::optional<SyntheticMDP> try_generate(const CohortSpec& spec, std::size_t attempt) {
    Rng rng(derive_seed(spec.seed, 0x6d6470, attempt));
    const std::size_t N = spec.n_states, A = spec.n_actions, S = N + 2;
    const std::size_t pos = N, neg = N + 1;
    std::size_t k = static_cast<std::size_t>(std::llround(spec.dead_end_fraction * static_cast<double>(N)));
    if (spec.dead_end_fraction > 0.0 && k == 0 && N > 1) k = 1;
    k = std::min(k, N - 1);
    const std::size_t first_planted = N - k;

    std::vector<double> T(S * A * S, 0.0);
    auto p = [&](std::size_t s, std::size_t a, std::size_t next) -> double& {
        return T[(s * A + a) * S + next];
    };
    for (std::size_t a = 0; a < A; ++a) {
        p(pos, a, pos) = 1.0;
        p(neg, a, neg) = 1.0;
    }

    for (std::size_t s = 0; s < N; ++s) {
        const bool planted = s >= first_planted;
        for (std::size_t a = 0; a < A; ++a) {
            if (planted) {
                const double death = uniform_in(rng, 0.15, 0.35);
                const auto succ = pick_distinct(rng, first_planted, N, spec.branching);
                std::vector<double> w(succ.size());
                double total = 0.0;
                for (auto& x : w) total += (x = uniform_in(rng, 0.2, 1.0));
                for (std::size_t i = 0; i < succ.size(); ++i)
                    p(s, a, succ[i]) += (1.0 - death) * w[i] / total;
                p(s, a, neg) += death;
                continue;
            }
            if (uniform01(rng) < spec.sure_discharge_prob) {
                p(s, a, pos) = 1.0;
                continue;
            }
            double special = 0.0;
            if (uniform01(rng) < spec.discharge_prob) {
                const double m = uniform_in(rng, 0.05, 0.2);
                p(s, a, pos) += m;
                special += m;
            }
            if (k > 0 && uniform01(rng) < spec.harmful_action_prob) {
                const double m = uniform_in(rng, 0.2, 0.6);
                p(s, a, first_planted + uniform_index(rng, k)) += m;
                special += m;
            }
            if (uniform01(rng) < spec.direct_death_prob) {
                const double m = uniform_in(rng, 0.05, 0.15);
                p(s, a, neg) += m;
                special += m;
            }
            // Every ordinary row keeps some discharge mass: all policies
            // terminate and no ordinary state becomes a dead-end by accident.
            if (p(s, a, pos) == 0.0) {
                p(s, a, pos) += 0.02;
                special += 0.02;
            }
            const auto succ = pick_distinct(rng, 0, first_planted, spec.branching);
            std::vector<double> w(succ.size());
            double total = 0.0;
            for (auto& x : w) total += (x = uniform_in(rng, 0.2, 1.0));
            for (std::size_t i = 0; i < succ.size(); ++i)
                p(s, a, succ[i]) += (1.0 - special) * w[i] / total;
        }
    }

    std::vector<TerminalKind> kinds(S, TerminalKind::none);
    kinds[pos] = TerminalKind::positive;
    kinds[neg] = TerminalKind::negative;
    normalize_rows_within_tolerance(T, S);
    SyntheticMDP out;
    out.mdp = TabularMDP(S, A, std::move(T), std::move(kinds), 1.0);
    out.positive_terminal = pos;
    out.negative_terminal = neg;
    for (std::size_t s = first_planted; s < N; ++s) out.planted.push_back(s);
    if (!validate_mdp(out.mdp).ok()) return std::nullopt;
    if (!confirm_termination(out.mdp, out.mdp.non_terminal_states(), TerminationMode::worst_case))
        return std::nullopt;
    try {
        out.truth = classify_special_states(out.mdp);
    } catch (const NonTerminatingRegion&) {
        return std::nullopt;
    }
    for (std::size_t s : out.planted)
        if (!out.truth.is_dead_end(s)) return std::nullopt;
    out.attempts = attempt + 1;
    return out;
}

} // namespace detail

/// Random sparse MDP with a planted dead-end region (the last
/// round(dead_end_fraction * n_states) non-terminal states, every action of
/// which stays inside the region or dies), one positive and one negative
/// terminal, and oracle ground truth attached.
inline SyntheticMDP generate_synthetic(const CohortSpec& spec, std::size_t max_attempts = 16) {
    spec.validate();
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt)
        if (auto g = detail::try_generate(spec, attempt)) return std::move(*g);
    throw GenerationFailed("no valid MDP after " + std::to_string(max_attempts) + " attempts");
}

inline TabularMDP generate_mdp(const CohortSpec& spec) { return generate_synthetic(spec).mdp; }

/// Seed-drawn MDP shape for the randomized oracle suite: up to 48
/// non-terminal states (50 with terminals), 1 to 5 actions, varied planted
/// fraction and branching.
inline CohortSpec random_suite_spec(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7375697465));
    CohortSpec spec;
    spec.seed = seed;
    spec.n_states = 2 + uniform_index(rng, 47);
    spec.n_actions = 1 + uniform_index(rng, 5);
    spec.branching = 1 + uniform_index(rng, 4);
    spec.dead_end_fraction = uniform01(rng) < 0.2 ? 0.0 : 0.4 * uniform01(rng);
    spec.harmful_action_prob = 0.5 * uniform01(rng);
    spec.direct_death_prob = 0.3 * uniform01(rng);
    spec.discharge_prob = 0.9 * uniform01(rng);
    spec.sure_discharge_prob = 0.15 * uniform01(rng);
    return spec;
}

/// Fixed Gaussian emission per state: mean + N(0, noise_sd^2) per coordinate.
struct Emitter {
    std::size_t obs_dim = 0;
    double noise_sd = 0.0;
    std::vector<std::vector<double>> means;

    [[nodiscard]] std::vector<double> emit(std::size_t s, Rng& rng) const {
        std::vector<double> o = means.at(s);
        if (noise_sd > 0.0) {
            std::normal_distribution<double> noise(0.0, noise_sd);
            for (auto& x : o) x += noise(rng);
        }
        return o;
    }
};

/// Means drawn from N(0, I) and rejection-sampled to keep every pair at least
/// `min_distance` apart; the closest candidate so far is kept if the budget runs out.
inline Emitter emit_observations(const TabularMDP& mdp, const CohortSpec& spec,
                                 double min_distance = 1.0) {
    if (spec.obs_dim == 0) throw ConfigError("obs_dim must be at least 1");
    Emitter e;
    e.obs_dim = spec.obs_dim;
    e.noise_sd = spec.obs_noise_sd;
    Rng rng(derive_seed(spec.seed, 0x656d6974));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto nearest = [&](const std::vector<double>& m) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& other : e.means) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i) d2 += (m[i] - other[i]) * (m[i] - other[i]);
            best = std::min(best, std::sqrt(d2));
        }
        return best;
    };
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        std::vector<double> best_m;
        double best_d = -1.0;
        for (int tries = 0; tries < 1000; ++tries) {
            std::vector<double> m(spec.obs_dim);
            for (auto& x : m) x = normal(rng);
            const double d = nearest(m);
            if (d > best_d) {
                best_d = d;
                best_m = std::move(m);
            }
            if (best_d >= min_distance) break;
        }
        e.means.push_back(std::move(best_m));
    }
    return e;
}

inline nlohmann::json to_json(const Emitter& e) {
    return {{"obs_dim", e.obs_dim}, {"noise_sd", e.noise_sd}, {"means", e.means}};
}

inline Emitter emitter_from_json(const nlohmann::json& j) {
    Emitter e;
    e.obs_dim = j.at("obs_dim").get<std::size_t>();
    e.noise_sd = j.at("noise_sd").get<double>();
    e.means = j.at("means").get<std::vector<std::vector<double>>>();
    return e;
}

/// Environment for offline data collection. Without an emitter, steps carry
/// only tabular states.
struct Env {
    TabularMDP mdp;
    std::vector<std::size_t> start_states;
    std::optional<Emitter> emitter;
    std::size_t max_len = 18;
};

struct RolloutOptions {
    std::size_t max_attempts_per_trajectory = 200;
    std::size_t id_offset = 0;
};

struct RolloutResult {
    std::vector<Trajectory> trajectories;
    std::size_t discarded = 0;
};

inline std::string trajectory_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%06zu", i);
    return buf;
}

/// Rolls out `policy` from uniformly drawn start states. Trajectory i uses
/// child seed derive_seed(seed, i, attempt); truncated runs are discarded
/// and regenerated with the next attempt index.
inline RolloutResult rollout_behavior(const Env& env, const PolicyMatrix& policy,
                                      std::size_t n_trajectories, std::uint64_t seed,
                                      const RolloutOptions& opt = {}) {
    const auto& mdp = env.mdp;
    if (policy.n_states != mdp.n_states() || policy.n_actions != mdp.n_actions())
        throw ShapeMismatch("rollout policy shape does not match the MDP");
    if (n_trajectories > 0 && env.start_states.empty())
        throw ConfigError("environment has no start states");
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        if (mdp.is_terminal(s)) continue;
        double sum = 0.0;
        for (double x : policy.row(s)) sum += x;
        if (std::abs(sum - 1.0) > kProbTol)
            throw ConfigError("policy row " + std::to_string(s) + " is not a distribution");
    }
    RolloutResult out;
    out.trajectories.reserve(n_trajectories);
    for (std::size_t i = 0; i < n_trajectories; ++i) {
        bool done = false;
        for (std::size_t attempt = 0; attempt < opt.max_attempts_per_trajectory && !done; ++attempt) {
            Rng rng(derive_seed(seed, i, attempt));
            Trajectory t;
            t.id = trajectory_id(opt.id_offset + i);
            std::size_t s = env.start_states[uniform_index(rng, env.start_states.size())];
            for (std::size_t step = 0; step < env.max_len; ++step) {
                Step st;
                st.state = s;
                if (env.emitter) st.obs = env.emitter->emit(s, rng);
                st.action = sample_discrete(rng, policy.row(s));
                const std::size_t next = sample_discrete(rng, mdp.row(s, st.action));
                st.terminal = mdp.terminal_kind(next);
                st.reward = st.terminal == TerminalKind::positive
                                ? 1.0
                                : (st.terminal == TerminalKind::negative ? -1.0 : 0.0);
                t.steps.push_back(std::move(st));
                if (mdp.is_terminal(next)) {
                    t.outcome = mdp.terminal_kind(next);
                    done = true;
                    break;
                }
                s = next;
            }
            if (done) out.trajectories.push_back(std::move(t));
            else ++out.discarded;
        }
        if (!done)
            throw YieldTooLow("trajectory " + std::to_string(i) + " did not terminate within " +
                              std::to_string(env.max_len) + " steps after " +
                              std::to_string(opt.max_attempts_per_trajectory) + " attempts");
    }
    return out;
}

/// Rolls out trajectories (same seeding as rollout_behavior) until at least
/// `min_transitions` steps have been collected.
inline RolloutResult rollout_until(const Env& env, const PolicyMatrix& policy,
                                   std::size_t min_transitions, std::uint64_t seed,
                                   const RolloutOptions& opt = {}) {
    RolloutResult out;
    std::size_t steps = 0;
    for (std::size_t i = 0; steps < min_transitions; ++i) {
        RolloutOptions one = opt;
        one.id_offset = opt.id_offset + i;
        auto r = rollout_behavior(env, policy, 1, derive_seed(seed, 0x756e74, i), one);
        out.discarded += r.discarded;
        steps += r.trajectories.front().steps.size();
        out.trajectories.push_back(std::move(r.trajectories.front()));
    }
    return out;
}

/// Greedy with respect to `q` (lowest-index ties) with probability 1 - eps,
/// uniform otherwise.
inline PolicyMatrix epsilon_greedy_policy(const QTable& q, double eps) {
    PolicyMatrix pi(q.n_states, q.n_actions, eps / static_cast<double>(q.n_actions));
    for (std::size_t s = 0; s < q.n_states; ++s) pi(s, q.greedy_action(s)) += 1.0 - eps;
    return pi;
}

/// Uniform, but actions with positive dead-end entry probability get weight
/// 1 + bias.
inline PolicyMatrix harmful_biased_policy(const OutcomeProbs& oracle, double bias) {
    PolicyMatrix pi(oracle.n_states, oracle.n_actions, 0.0);
    for (std::size_t s = 0; s < oracle.n_states; ++s) {
        double total = 0.0;
        for (std::size_t a = 0; a < oracle.n_actions; ++a)
            total += pi(s, a) = oracle.p_dead[oracle.idx(s, a)] > 0.0 ? 1.0 + bias : 1.0;
        for (std::size_t a = 0; a < oracle.n_actions; ++a) pi(s, a) /= total;
    }
    return pi;
}

/// Non-terminal states outside the dead-end set.
inline std::vector<std::size_t> safe_start_states(const TabularMDP& mdp,
                                                  const SpecialStateSets& truth) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
        if (!mdp.is_terminal(s) && !truth.is_dead_end(s)) out.push_back(s);
    return out;
}

inline nlohmann::json truth_json(const SyntheticMDP& g, const ExactSolution* sol = nullptr) {
    nlohmann::json j = to_json(g.truth);
    j["planted"] = g.planted;
    j["positive_terminal"] = g.positive_terminal;
    j["negative_terminal"] = g.negative_terminal;
    if (sol) {
        j["v_d"] = sol->q_d.state_values();
        j["v_r"] = sol->q_r.state_values();
    }
    return j;
}

/// Writes mdp.json, emissions.json, truth.json and trajectories.jsonl.
inline void write_cohort_bundle(const std::filesystem::path& dir, const SyntheticMDP& g,
                                const Emitter& emitter, const std::vector<Trajectory>& trajectories,
                                const ExactSolution* sol = nullptr) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "mdp.json", to_json(g.mdp).dump() + "\n");
    write_text_file(dir / "emissions.json", to_json(emitter).dump() + "\n");
    write_text_file(dir / "truth.json", truth_json(g, sol).dump(2) + "\n");
    save_jsonl(dir / "trajectories.jsonl", trajectories);
}

} // namespace ded
