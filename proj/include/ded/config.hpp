#pragma once

#include "ded/dataset.hpp"
#include "ded/ded_engine.hpp"
#include "ded/errors.hpp"
#include "ded/format.hpp"
#include "ded/learner.hpp"
#include "ded/state_construction.hpp"
#include "ded/synth_cohort.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace ded {

struct LifeGateConfig {
    std::string layout = "default"; // "default" or a path to a layout file
    double death_drift = 0.4;
    double deadend_drift_right = 0.7;
    std::size_t transitions = 200000; // offline dataset size for tabular learning
};

struct AnalysisConfig {
    std::size_t horizon = 18;
    int hours_per_step = 4;
    std::size_t duration_k = 6;
    std::size_t pre_steps = 6;
    std::size_t post_steps = 4;
    double k_frac = 0.2;
};

/// Every tunable of a pipeline run. A config file holds any subset of these
/// keys; missing keys keep their defaults and unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    Thresholds thresholds{};
    CohortSpec cohort{};
    std::size_t n_trajectories = 10000;
    /// Extra weight of actions with dead-end entry risk in the behavior policy.
    double behavior_bias = 1.0;
    SplitSpec split{};
    EncoderConfig encoder{};
    DQNConfig dqn{};
    TabularQConfig tabular{};
    LifeGateConfig lifegate{};
    AnalysisConfig analysis{};
    std::size_t verify_seeds = 100;

    /// Propagates the master seed into every component.
    void set_seed(std::uint64_t s) {
        seed = s;
        cohort.seed = split.seed = encoder.seed = dqn.seed = tabular.seed = s;
    }

    void validate() const {
        thresholds.validate();
        cohort.validate();
        split.validate();
        encoder.validate();
        dqn.validate();
        if (n_trajectories == 0) throw ConfigError("n_trajectories must be positive");
        if (!(behavior_bias >= 0.0)) throw ConfigError("behavior_bias must be non-negative");
        if (!(analysis.k_frac > 0.0 && analysis.k_frac <= 1.0)) throw ConfigError("k_frac must lie in (0,1]");
        if (!(tabular.lr > 0.0) || !(tabular.omega > 0.0)) throw ConfigError("tabular lr and omega must be positive");
    }
};

inline nlohmann::json to_json(const RunConfig& c) {
    const auto& co = c.cohort;
    const auto& tq = c.tabular;
    return {
        {"seed", c.seed},
        {"thresholds", to_json(c.thresholds)},
        {"cohort",
         {{"n_states", co.n_states}, {"n_actions", co.n_actions}, {"dead_end_fraction", co.dead_end_fraction},
          {"branching", co.branching}, {"obs_dim", co.obs_dim}, {"obs_noise_sd", co.obs_noise_sd},
          {"max_len", co.max_len}, {"seed", co.seed}, {"harmful_action_prob", co.harmful_action_prob},
          {"direct_death_prob", co.direct_death_prob}, {"discharge_prob", co.discharge_prob},
          {"sure_discharge_prob", co.sure_discharge_prob}, {"n_trajectories", c.n_trajectories},
          {"behavior_bias", c.behavior_bias}}},
        {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}, {"seed", c.split.seed}}},
        {"encoder", to_json(c.encoder)},
        {"dqn", to_json(c.dqn)},
        {"tabular",
         {{"lr", tq.lr}, {"schedule", tq.schedule == LrSchedule::constant ? "constant" : "visit_decay"},
          {"omega", tq.omega}, {"sweeps", tq.sweeps}, {"init", tq.init}, {"seed", tq.seed},
          {"checkpoint_every", tq.checkpoint_every}}},
        {"lifegate",
         {{"layout", c.lifegate.layout}, {"death_drift", c.lifegate.death_drift},
          {"deadend_drift_right", c.lifegate.deadend_drift_right}, {"transitions", c.lifegate.transitions}}},
        {"analysis",
         {{"horizon", c.analysis.horizon}, {"hours_per_step", c.analysis.hours_per_step},
          {"duration_k", c.analysis.duration_k}, {"pre_steps", c.analysis.pre_steps},
          {"post_steps", c.analysis.post_steps}, {"k_frac", c.analysis.k_frac}}},
        {"verify_seeds", c.verify_seeds}};
}

namespace detail {

/// Overlays `patch` onto `base`, rejecting keys that `base` does not have.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("'" + path + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
        auto& slot = base[key];
        if (slot.is_object()) merge_strict(slot, value, where);
        else slot = value;
    }
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& patch) {
    nlohmann::json j = to_json(RunConfig{});
    detail::merge_strict(j, patch, "");
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& th = j.at("thresholds");
        c.thresholds.red = {th.at("red").at("d").get<double>(), th.at("red").at("r").get<double>()};
        c.thresholds.yellow = {th.at("yellow").at("d").get<double>(), th.at("yellow").at("r").get<double>()};

        const auto& co = j.at("cohort");
        c.cohort.n_states = co.at("n_states").get<std::size_t>();
        c.cohort.n_actions = co.at("n_actions").get<std::size_t>();
        c.cohort.dead_end_fraction = co.at("dead_end_fraction").get<double>();
        c.cohort.branching = co.at("branching").get<std::size_t>();
        c.cohort.obs_dim = co.at("obs_dim").get<std::size_t>();
        c.cohort.obs_noise_sd = co.at("obs_noise_sd").get<double>();
        c.cohort.max_len = co.at("max_len").get<std::size_t>();
        c.cohort.seed = co.at("seed").get<std::uint64_t>();
        c.cohort.harmful_action_prob = co.at("harmful_action_prob").get<double>();
        c.cohort.direct_death_prob = co.at("direct_death_prob").get<double>();
        c.cohort.discharge_prob = co.at("discharge_prob").get<double>();
        c.cohort.sure_discharge_prob = co.at("sure_discharge_prob").get<double>();
        c.n_trajectories = co.at("n_trajectories").get<std::size_t>();
        c.behavior_bias = co.at("behavior_bias").get<double>();

        const auto& sp = j.at("split");
        c.split = {sp.at("train").get<double>(), sp.at("val").get<double>(), sp.at("test").get<double>(),
                   sp.at("seed").get<std::uint64_t>()};

        const auto& en = j.at("encoder");
        c.encoder.embed_dim = en.at("embed_dim").get<std::size_t>();
        c.encoder.window = en.at("window").get<std::size_t>();
        c.encoder.hidden = en.at("hidden").get<std::vector<std::size_t>>();
        c.encoder.decoder_hidden = en.at("decoder_hidden").get<std::size_t>();
        c.encoder.lr = en.at("lr").get<double>();
        c.encoder.epochs = en.at("epochs").get<std::size_t>();
        c.encoder.steps_per_epoch = en.at("steps_per_epoch").get<std::size_t>();
        c.encoder.batch = en.at("batch").get<std::size_t>();
        c.encoder.seed = en.at("seed").get<std::uint64_t>();

        const auto& dq = j.at("dqn");
        c.dqn.hidden = dq.at("hidden").get<std::size_t>();
        c.dqn.lr = dq.at("lr").get<double>();
        c.dqn.target_sync = dq.at("target_sync").get<std::size_t>();
        c.dqn.updates = dq.at("updates").get<std::size_t>();
        c.dqn.batch.main_draws = dq.at("main_draws").get<std::size_t>();
        c.dqn.batch.terminal_draws = dq.at("terminal_draws").get<std::size_t>();
        c.dqn.batch.fallback_to_main = dq.at("fallback_to_main").get<bool>();
        c.dqn.seed = dq.at("seed").get<std::uint64_t>();
        c.dqn.log_every = dq.at("log_every").get<std::size_t>();

        const auto& tq = j.at("tabular");
        c.tabular.lr = tq.at("lr").get<double>();
        const auto sched = tq.at("schedule").get<std::string>();
        if (sched == "constant") c.tabular.schedule = LrSchedule::constant;
        else if (sched == "visit_decay") c.tabular.schedule = LrSchedule::visit_decay;
        else throw ConfigError("tabular.schedule must be 'constant' or 'visit_decay'");
        c.tabular.omega = tq.at("omega").get<double>();
        c.tabular.sweeps = tq.at("sweeps").get<std::size_t>();
        c.tabular.init = tq.at("init").get<double>();
        c.tabular.seed = tq.at("seed").get<std::uint64_t>();
        c.tabular.checkpoint_every = tq.at("checkpoint_every").get<std::size_t>();

        const auto& lg = j.at("lifegate");
        c.lifegate.layout = lg.at("layout").get<std::string>();
        c.lifegate.death_drift = lg.at("death_drift").get<double>();
        c.lifegate.deadend_drift_right = lg.at("deadend_drift_right").get<double>();
        c.lifegate.transitions = lg.at("transitions").get<std::size_t>();

        const auto& an = j.at("analysis");
        c.analysis.horizon = an.at("horizon").get<std::size_t>();
        c.analysis.hours_per_step = an.at("hours_per_step").get<int>();
        c.analysis.duration_k = an.at("duration_k").get<std::size_t>();
        c.analysis.pre_steps = an.at("pre_steps").get<std::size_t>();
        c.analysis.post_steps = an.at("post_steps").get<std::size_t>();
        c.analysis.k_frac = an.at("k_frac").get<double>();

        c.verify_seeds = j.at("verify_seeds").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
    // A top-level seed reaches every section that does not pin its own.
    if (patch.contains("seed")) {
        auto pinned = [&](const char* section) {
            return patch.contains(section) && patch.at(section).contains("seed");
        };
        if (!pinned("cohort")) c.cohort.seed = c.seed;
        if (!pinned("split")) c.split.seed = c.seed;
        if (!pinned("encoder")) c.encoder.seed = c.seed;
        if (!pinned("dqn")) c.dqn.seed = c.seed;
        if (!pinned("tabular")) c.tabular.seed = c.seed;
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
    }
    return run_config_from_json(j);
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& c) {
    write_text_file(dir / "config.json", to_json(c).dump(2) + "\n");
}

} // namespace ded
