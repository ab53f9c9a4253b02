#pragma once

#include "ded/errors.hpp"
#include "ded/format.hpp"
#include "ded/mdp.hpp"
#include "ded/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace ded {

struct SplitSpec {
    double train = 0.75;
    double val = 0.05;
    double test = 0.20;
    std::uint64_t seed = 0;

    void validate() const {
        if (train < 0.0 || val < 0.0 || test < 0.0)
            throw ConfigError("split fractions must be non-negative");
        if (std::abs(train + val + test - 1.0) > 1e-9)
            throw ConfigError("split fractions must sum to 1");
    }
};

struct SplitResult {
    std::vector<Trajectory> train;
    std::vector<Trajectory> val;
    std::vector<Trajectory> test;
    std::vector<std::string> warnings;
};

namespace detail {

/// Largest-remainder apportionment of n items over fractions; ties go to the
/// earlier part.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& frac) {
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = frac[i] * static_cast<double>(n);
        count[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - static_cast<double>(count[i]);
        used += count[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; used < n; k = (k + 1) % 3, ++used) ++count[order[k]];
    return count;
}

} // namespace detail

/// Trajectory-level split, stratified by outcome: each stratum is shuffled
/// with its own seed stream and apportioned by largest remainder. Each output
/// list keeps the input order.
inline SplitResult split(const std::vector<Trajectory>& trajectories, const SplitSpec& spec) {
    spec.validate();
    if (trajectories.empty()) throw EmptyCohort("cannot split an empty cohort");
    std::array<std::vector<std::size_t>, 3> strata;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        strata[static_cast<std::size_t>(trajectories[i].outcome)].push_back(i);

    std::vector<int> part(trajectories.size(), 0);
    for (std::size_t k = 0; k < strata.size(); ++k) {
        auto& idx = strata[k];
        if (idx.empty()) continue;
        Rng rng(derive_seed(spec.seed, 0x5711, k));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto c = detail::apportion(idx.size(), {spec.train, spec.val, spec.test});
        for (std::size_t j = 0; j < idx.size(); ++j)
            part[idx[j]] = j < c[0] ? 0 : (j < c[0] + c[1] ? 1 : 2);
    }
    SplitResult out;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        auto& dst = part[i] == 0 ? out.train : (part[i] == 1 ? out.val : out.test);
        dst.push_back(trajectories[i]);
    }
    if (out.val.empty()) out.warnings.emplace_back("validation split is empty");
    if (out.test.empty()) out.warnings.emplace_back("test split is empty");
    return out;
}

struct TransitionRef {
    std::size_t traj = 0;
    std::size_t step = 0;
    bool operator==(const TransitionRef&) const = default;
};

/// Index views over a fixed trajectory list.
struct TransitionBuffers {
    std::vector<TransitionRef> main;
    std::vector<TransitionRef> terminal_negative;
};

inline TransitionBuffers build_buffers(const std::vector<Trajectory>& trajectories) {
    TransitionBuffers b;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& t = trajectories[i];
        for (std::size_t k = 0; k < t.steps.size(); ++k) b.main.push_back({i, k});
        if (!t.steps.empty() && t.outcome == TerminalKind::negative)
            b.terminal_negative.push_back({i, t.steps.size() - 1});
    }
    return b;
}

struct MinibatchOptions {
    std::size_t main_draws = 62;
    std::size_t terminal_draws = 2;
    /// Draw the whole batch from main when terminal_negative is empty.
    bool fallback_to_main = false;
};

/// Uniform with-replacement draws: main first, then the terminal-negative slots.
inline std::vector<TransitionRef> stratified_minibatch(const TransitionBuffers& buffers, Rng& rng,
                                                       const MinibatchOptions& opt = {}) {
    if (buffers.main.empty()) throw EmptyBuffer("main transition buffer is empty");
    const bool use_terminal = !buffers.terminal_negative.empty();
    if (!use_terminal && !opt.fallback_to_main && opt.terminal_draws > 0)
        throw EmptyBuffer("terminal-negative buffer is empty");
    std::vector<TransitionRef> batch;
    batch.reserve(opt.main_draws + opt.terminal_draws);
    const std::size_t n_main = use_terminal ? opt.main_draws : opt.main_draws + opt.terminal_draws;
    for (std::size_t i = 0; i < n_main; ++i)
        batch.push_back(buffers.main[uniform_index(rng, buffers.main.size())]);
    if (use_terminal)
        for (std::size_t i = 0; i < opt.terminal_draws; ++i)
            batch.push_back(
                buffers.terminal_negative[uniform_index(rng, buffers.terminal_negative.size())]);
    return batch;
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::json to_json(const Trajectory& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : t.steps) {
        nlohmann::json j;
        if (!st.obs.empty()) j["obs"] = st.obs;
        if (st.state) j["state"] = *st.state;
        j["action"] = st.action;
        j["reward"] = st.reward;
        j["terminal"] = std::string(to_string(st.terminal));
        steps.push_back(std::move(j));
    }
    return {{"id", t.id}, {"outcome", std::string(to_string(t.outcome))}, {"steps", std::move(steps)}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.id = j.at("id").get<std::string>();
    const auto outcome = j.at("outcome").get<std::string>();
    if (outcome != "positive" && outcome != "negative")
        throw InvalidMDP("outcome must be positive or negative");
    t.outcome = terminal_kind_from_string(outcome);
    for (const auto& js : j.at("steps")) {
        Step st;
        if (js.contains("obs")) st.obs = js.at("obs").get<std::vector<double>>();
        if (js.contains("state")) st.state = js.at("state").get<std::size_t>();
        if (st.obs.empty() && !st.state) throw InvalidMDP("step carries neither obs nor state");
        st.action = js.at("action").get<std::size_t>();
        st.reward = js.at("reward").get<double>();
        st.terminal = terminal_kind_from_string(js.at("terminal").get<std::string>());
        t.steps.push_back(std::move(st));
    }
    if (const auto problem = check_trajectory(t); !problem.empty()) throw InvalidMDP(problem);
    return t;
}

inline void write_jsonl(std::ostream& os, const std::vector<Trajectory>& trajectories) {
    for (const auto& t : trajectories) os << to_json(t).dump() << '\n';
}

inline std::vector<Trajectory> read_jsonl(std::istream& is) {
    std::vector<Trajectory> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        } catch (const InvalidMDP& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return out;
}

inline void save_jsonl(const std::filesystem::path& path,
                       const std::vector<Trajectory>& trajectories) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    write_jsonl(f, trajectories);
    if (!f) throw IoError("write to '" + path.string() + "' failed");
}

inline std::vector<Trajectory> load_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
    return read_jsonl(f);
}

/// Outcome counts (positive, negative).
inline std::pair<std::size_t, std::size_t> outcome_counts(const std::vector<Trajectory>& ts) {
    std::size_t pos = 0, neg = 0;
    for (const auto& t : ts) {
        pos += t.outcome == TerminalKind::positive;
        neg += t.outcome == TerminalKind::negative;
    }
    return {pos, neg};
}

inline std::size_t transition_count(const std::vector<Trajectory>& ts) {
    return std::accumulate(ts.begin(), ts.end(), std::size_t{0},
                           [](std::size_t n, const Trajectory& t) { return n + t.steps.size(); });
}

} // namespace ded
