#pragma once

#include "ded/analysis.hpp"
#include "ded/config.hpp"
#include "ded/dataset.hpp"
#include "ded/learner.hpp"
#include "ded/lifegate.hpp"
#include "ded/state_construction.hpp"
#include "ded/synth_cohort.hpp"
#include "ded/theorems.hpp"

#include <optional>
#include <variant>

namespace ded {

/// A fitted D or R estimator: a Q table over tabular states or a network over
/// encoder embeddings.
using ValueModel = std::variant<QTable, QNetwork>;

inline DualKind model_kind(const ValueModel& m) {
    return std::visit([](const auto& x) { return x.kind; }, m);
}

inline std::size_t model_actions(const ValueModel& m) {
    if (const auto* t = std::get_if<QTable>(&m)) return t->n_actions;
    return std::get<QNetwork>(m).n_actions();
}

/// Reads either checkpoint schema: a QTable document or {"config", "layers"}.
inline ValueModel value_model_from_json(const nlohmann::json& j) {
    if (j.contains("layers")) return qnet_from_checkpoint(j);
    return qtable_from_json(j);
}

/// Per-step values of every trajectory under the D and R models. Network
/// models need the encoder; table models need tabular states.
inline std::vector<FlaggedTrajectory> flag_cohort(const std::vector<Trajectory>& trajs,
                                                  const ValueModel& qd, const ValueModel& qr,
                                                  const StateEncoder* encoder = nullptr) {
    if (model_kind(qd) != DualKind::D || model_kind(qr) != DualKind::R)
        throw ShapeMismatch("flag_cohort expects a D model and an R model");
    if (model_actions(qd) != model_actions(qr))
        throw ShapeMismatch("D and R models disagree on the action count (" +
                            std::to_string(model_actions(qd)) + " vs " + std::to_string(model_actions(qr)) + ")");
    const std::size_t A = model_actions(qd);
    const bool networks = std::holds_alternative<QNetwork>(qd) || std::holds_alternative<QNetwork>(qr);
    std::optional<EmbeddedCohort> emb;
    if (networks) {
        if (!encoder) throw ConfigError("network models need a state-construction checkpoint");
        for (const auto* m : {&qd, &qr})
            if (const auto* n = std::get_if<QNetwork>(m); n && n->input_dim() != encoder->embed_dim())
                throw ShapeMismatch("Q network expects " + std::to_string(n->input_dim()) +
                                    " inputs but the encoder embeds to " + std::to_string(encoder->embed_dim()));
        emb = embed_cohort(*encoder, trajs);
    }
    auto values = [&](const ValueModel& m, std::size_t i, std::size_t k) {
        const Step& st = trajs[i].steps[k];
        if (const auto* t = std::get_if<QTable>(&m)) {
            if (!st.state) throw NonTabularData("table model needs tabular states in '" + trajs[i].id + "'");
            return q_values(*t, *st.state);
        }
        return q_values(std::get<QNetwork>(m), nn::Vector(emb->embeddings.col(emb->column(i, k))));
    };
    std::vector<FlaggedTrajectory> out;
    out.reserve(trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        FlaggedTrajectory ft{trajs[i].id, trajs[i].outcome, {}};
        for (std::size_t k = 0; k < trajs[i].steps.size(); ++k) {
            const Step& st = trajs[i].steps[k];
            if (st.action >= A) throw BadIndex("action out of range in '" + trajs[i].id + "'");
            ft.steps.push_back({values(qd, i, k), values(qr, i, k), st.action, st.obs});
        }
        out.push_back(std::move(ft));
    }
    return out;
}

/// Synthetic POMDP cohort: generator, emitter, exact solution, and the
/// behavior rollouts.
struct SyntheticCohort {
    SyntheticMDP generated;
    Emitter emitter;
    ExactSolution exact;
    std::vector<Trajectory> trajectories;
    std::size_t discarded = 0;
};

inline SyntheticCohort make_synthetic_cohort(const RunConfig& cfg) {
    SyntheticCohort c;
    c.generated = generate_synthetic(cfg.cohort);
    c.emitter = emit_observations(c.generated.mdp, cfg.cohort);
    c.exact = solve_exact(c.generated.mdp);
    Env env{c.generated.mdp, safe_start_states(c.generated.mdp, c.generated.truth), c.emitter,
            cfg.cohort.max_len};
    auto r = rollout_behavior(env, harmful_biased_policy(c.exact.oracle, cfg.behavior_bias),
                              cfg.n_trajectories, cfg.cohort.seed);
    c.trajectories = std::move(r.trajectories);
    c.discarded = r.discarded;
    return c;
}

/// Everything the learned-model route produces, end to end in one process.
struct LearnedRun {
    SyntheticCohort cohort;
    SplitResult split;
    SCTrainResult sc;
    FitResult fit_d, fit_r;
    std::vector<FlaggedTrajectory> flagged; // test split
    std::vector<EmergenceRow> emergence;
};

inline LearnedRun run_learned_pipeline(const RunConfig& cfg) {
    cfg.validate();
    LearnedRun run;
    run.cohort = make_synthetic_cohort(cfg);
    run.split = split(run.cohort.trajectories, cfg.split);
    const std::size_t A = cfg.cohort.n_actions;
    run.sc = train_sc(run.split.train, A, cfg.encoder, &run.split.val);
    const auto emb = embed_cohort(run.sc.model.encoder, run.split.train);
    run.fit_d = fit_double_q(run.split.train, emb, A, cfg.dqn, DualKind::D);
    run.fit_r = fit_double_q(run.split.train, emb, A, cfg.dqn, DualKind::R);
    run.flagged = flag_cohort(run.split.test, run.fit_d.online, run.fit_r.online, &run.sc.model.encoder);
    run.emergence = flag_emergence(run.flagged, cfg.thresholds, cfg.analysis.horizon, cfg.analysis.hours_per_step);
    return run;
}

/// Life-Gate layout named by the config, with its drift parameters applied.
inline LifeGateLayout configured_layout(const LifeGateConfig& c) {
    LifeGateLayout layout = c.layout == "default" ? default_layout() : load_layout(c.layout);
    layout.death_drift = c.death_drift;
    layout.deadend_drift_right = c.deadend_drift_right;
    layout.validate();
    return layout;
}

/// Uniform-behavior offline dataset on Life-Gate, started from black cells.
inline std::vector<Trajectory> lifegate_dataset(const LifeGate& g, std::size_t transitions,
                                                std::uint64_t seed) {
    Env env{g.mdp, g.black_states, std::nullopt, 100000};
    return rollout_until(env, uniform_policy(g.mdp.n_states(), g.mdp.n_actions()), transitions, seed)
        .trajectories;
}

} // namespace ded
