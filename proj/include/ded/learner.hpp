#pragma once

#include "ded/dataset.hpp"
#include "ded/errors.hpp"
#include "ded/exact_solver.hpp"
#include "ded/mdp.hpp"
#include "ded/nn.hpp"
#include "ded/rng.hpp"
#include "ded/state_construction.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ded {

/// Dual reward of a recorded step, from its terminal label.
inline double step_dual_reward(const Step& st, DualKind kind) {
    return dual_reward(kind, TerminalKind::none, st.terminal);
}

// ---------------------------------------------------------------------------
// Tabular Q-learning

enum class LrSchedule { constant, visit_decay };

struct TabularQConfig {
    double lr = 0.1;
    LrSchedule schedule = LrSchedule::constant;
    /// Exponent of the visit-decay schedule: alpha = n(s,a)^-omega.
    double omega = 0.6;
    std::size_t sweeps = 40;
    double init = 0.0;
    std::uint64_t seed = 0;
    /// Invoke `on_checkpoint` every this many updates (0 disables).
    std::size_t checkpoint_every = 0;
    std::function<void(std::size_t updates, const QTable&)> on_checkpoint;
};

/// Sample-based model of the dataset: successor counts per (s,a), with
/// terminal outcomes kept as labels (the terminal state index is not recorded).
struct EmpiricalModel {
    std::size_t n_states = 0, n_actions = 0;
    std::vector<std::size_t> visits;
    std::vector<std::map<std::size_t, std::size_t>> next_counts;
    std::vector<std::size_t> pos_counts, neg_counts;

    [[nodiscard]] std::size_t idx(std::size_t s, std::size_t a) const { return s * n_actions + a; }
};

inline void require_tabular(const std::vector<Trajectory>& trajs, std::size_t n_states,
                            std::size_t n_actions) {
    for (const auto& t : trajs) {
        for (const auto& st : t.steps) {
            if (!st.state) throw NonTabularData("trajectory '" + t.id + "' has a step without a state index");
            if (*st.state >= n_states) throw BadIndex("state index out of range in '" + t.id + "'");
            if (st.action >= n_actions) throw BadIndex("action index out of range in '" + t.id + "'");
        }
    }
}

inline EmpiricalModel empirical_model(const std::vector<Trajectory>& trajs, std::size_t n_states,
                                      std::size_t n_actions) {
    require_tabular(trajs, n_states, n_actions);
    EmpiricalModel m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.visits.assign(n_states * n_actions, 0);
    m.next_counts.resize(n_states * n_actions);
    m.pos_counts.assign(n_states * n_actions, 0);
    m.neg_counts.assign(n_states * n_actions, 0);
    for (const auto& t : trajs) {
        for (std::size_t k = 0; k < t.steps.size(); ++k) {
            const auto& st = t.steps[k];
            const std::size_t i = m.idx(*st.state, st.action);
            ++m.visits[i];
            if (st.terminal == TerminalKind::positive) ++m.pos_counts[i];
            else if (st.terminal == TerminalKind::negative) ++m.neg_counts[i];
            else if (k + 1 < t.steps.size()) ++m.next_counts[i][*t.steps[k + 1].state];
        }
    }
    return m;
}

/// Sup-norm Bellman residual of `q` under the empirical model, over visited pairs.
inline double empirical_residual(const EmpiricalModel& m, const QTable& q) {
    double r = 0.0;
    for (std::size_t s = 0; s < m.n_states; ++s) {
        for (std::size_t a = 0; a < m.n_actions; ++a) {
            const std::size_t i = m.idx(s, a);
            if (m.visits[i] == 0) continue;
            const double n = static_cast<double>(m.visits[i]);
            double backup = dual_reward(q.kind, TerminalKind::none, TerminalKind::positive) * m.pos_counts[i] / n +
                            dual_reward(q.kind, TerminalKind::none, TerminalKind::negative) * m.neg_counts[i] / n;
            for (const auto& [next, c] : m.next_counts[i]) backup += q.state_value(next) * c / n;
            r = std::max(r, std::abs(clamp_value(q.kind, backup) - q(s, a)));
        }
    }
    return r;
}

struct TabularQResult {
    QTable q;
    std::vector<std::size_t> visits;
    std::vector<double> sweep_residual; // empirical-model residual after each sweep
    std::size_t updates = 0;
};

/// Offline Q-learning over shuffled sweeps of every recorded transition,
/// undiscounted, with dual rewards and range clamping after each update.
inline TabularQResult tabular_q_learning(const std::vector<Trajectory>& trajs, std::size_t n_states,
                                         std::size_t n_actions, DualKind kind,
                                         const TabularQConfig& cfg = {}) {
    if (!(cfg.lr >= 0.0)) throw ConfigError("lr must be non-negative");
    const auto model = empirical_model(trajs, n_states, n_actions);
    std::vector<TransitionRef> refs;
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (std::size_t k = 0; k < trajs[i].steps.size(); ++k) refs.push_back({i, k});

    TabularQResult res;
    res.q = QTable(n_states, n_actions, kind, clamp_value(kind, cfg.init));
    res.visits.assign(n_states * n_actions, 0);
    for (std::size_t sweep = 0; sweep < cfg.sweeps; ++sweep) {
        Rng rng(derive_seed(cfg.seed, 0x71, sweep));
        std::shuffle(refs.begin(), refs.end(), rng);
        for (const auto& r : refs) {
            const auto& t = trajs[r.traj];
            const auto& st = t.steps[r.step];
            const std::size_t s = *st.state, a = st.action;
            double y = step_dual_reward(st, kind);
            if (st.terminal == TerminalKind::none && r.step + 1 < t.steps.size())
                y += res.q.state_value(*t.steps[r.step + 1].state);
            const std::size_t n = ++res.visits[s * n_actions + a];
            const double alpha = cfg.schedule == LrSchedule::constant
                                     ? cfg.lr
                                     : std::pow(static_cast<double>(n), -cfg.omega);
            res.q(s, a) = clamp_value(kind, res.q(s, a) + alpha * (y - res.q(s, a)));
            ++res.updates;
            if (cfg.checkpoint_every && cfg.on_checkpoint && res.updates % cfg.checkpoint_every == 0)
                cfg.on_checkpoint(res.updates, res.q);
        }
        res.sweep_residual.push_back(empirical_residual(model, res.q));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Fitted double-Q network

struct DQNConfig {
    std::size_t hidden = 64;
    double lr = 1e-4;
    std::size_t target_sync = 2000;
    std::size_t updates = 20000;
    MinibatchOptions batch{};
    std::uint64_t seed = 0;
    /// Average the training loss over this many updates per curve point.
    std::size_t log_every = 500;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (target_sync == 0) throw ConfigError("target_sync must be at least 1");
        if (hidden == 0) throw ConfigError("hidden width must be positive");
        if (log_every == 0) throw ConfigError("log_every must be positive");
    }
};

inline nlohmann::json to_json(const DQNConfig& c) {
    return {{"hidden", c.hidden},
            {"lr", c.lr},
            {"target_sync", c.target_sync},
            {"updates", c.updates},
            {"main_draws", c.batch.main_draws},
            {"terminal_draws", c.batch.terminal_draws},
            {"fallback_to_main", c.batch.fallback_to_main},
            {"seed", c.seed},
            {"log_every", c.log_every}};
}

/// Value network for one dual kind: input -> hidden (ReLU) -> one value per action.
struct QNetwork {
    nn::MLP net;
    DualKind kind = DualKind::D;

    QNetwork() = default;
    QNetwork(std::size_t input_dim, std::size_t n_actions, std::size_t hidden, DualKind k, Rng& rng)
        : net({input_dim, hidden, n_actions}, rng), kind(k) {}

    [[nodiscard]] std::size_t input_dim() const { return net.input_dim(); }
    [[nodiscard]] std::size_t n_actions() const { return net.output_dim(); }

    [[nodiscard]] nn::Matrix raw(const nn::Matrix& x) const { return net.forward(x); }

    /// Clamped values, n_actions x batch.
    [[nodiscard]] nn::Matrix values(const nn::Matrix& x) const {
        const auto r = value_range(kind);
        return net.forward(x).cwiseMax(r.lo).cwiseMin(r.hi);
    }
};

inline std::vector<double> q_values(const QNetwork& q, const nn::Vector& x) {
    if (static_cast<std::size_t>(x.size()) != q.input_dim())
        throw ShapeMismatch("q_values: input has " + std::to_string(x.size()) + " entries, expected " +
                            std::to_string(q.input_dim()));
    const nn::Matrix v = q.values(x);
    return {v.data(), v.data() + v.size()};
}

inline std::vector<double> q_values(const QTable& q, std::size_t s) {
    if (s >= q.n_states) throw ShapeMismatch("q_values: state index out of range");
    std::vector<double> out(q.row(s).begin(), q.row(s).end());
    for (auto& v : out) v = clamp_value(q.kind, v);
    return out;
}

/// Lowest-index argmax per column.
inline std::vector<std::size_t> argmax_columns(const nn::Matrix& m) {
    std::vector<std::size_t> out(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < m.rows(); ++r)
            if (m(r, c) > m(best, c)) best = r;
        out[static_cast<std::size_t>(c)] = static_cast<std::size_t>(best);
    }
    return out;
}

/// Regression batch for the Q network: inputs, taken actions, fixed targets.
struct QBatch {
    nn::Matrix x;
    std::vector<std::size_t> actions;
    std::vector<double> targets;
};

/// 0.5 * sum_i (Q(x_i, a_i) - y_i)^2 scaled by `scale` (1/B gives the mean).
inline double q_loss(const QNetwork& q, const QBatch& b, double scale, nn::Cache* cache = nullptr,
                     nn::Matrix* d_out = nullptr) {
    const nn::Matrix out = q.net.forward(b.x, cache);
    double loss = 0.0;
    if (d_out) *d_out = nn::Matrix::Zero(out.rows(), out.cols());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
        const auto a = static_cast<Eigen::Index>(b.actions[static_cast<std::size_t>(c)]);
        const double diff = out(a, c) - b.targets[static_cast<std::size_t>(c)];
        loss += 0.5 * diff * diff;
        if (d_out) (*d_out)(a, c) = diff * scale;
    }
    return loss * scale;
}

inline nn::Gradients q_gradients(const QNetwork& q, const QBatch& b, double scale) {
    nn::Cache cache;
    nn::Matrix d_out;
    q_loss(q, b, scale, &cache, &d_out);
    return q.net.backward(cache, d_out);
}

/// What one double-Q update saw, for instrumentation.
struct UpdateTrace {
    std::size_t update = 0;
    std::vector<std::size_t> online_argmax;  // per batch row, for non-terminal rows
    std::vector<std::size_t> target_argmax;
    std::vector<std::size_t> used_action;    // action whose target value entered y
    std::vector<char> terminal;
};

struct FitResult {
    QNetwork online;
    std::vector<double> loss_curve;
    std::size_t updates = 0;
};

/// Fitted double-Q on embedded transitions. For a batch row at step t:
/// y = r_t when t is terminal, else r_t + clamp(Q_target(x_{t+1}, argmax_a Q_online(x_{t+1}, a))).
/// Loss is the batch mean of 0.5 (Q_online(x_t, a_t) - y)^2.
inline FitResult fit_double_q(const std::vector<Trajectory>& trajs, const EmbeddedCohort& emb,
                              std::size_t n_actions, const DQNConfig& cfg, DualKind kind,
                              const std::function<void(const UpdateTrace&)>& on_update = {}) {
    cfg.validate();
    if (emb.offsets.size() != trajs.size()) throw ShapeMismatch("embeddings do not match trajectories");
    const auto buffers = build_buffers(trajs);
    for (const auto& t : trajs)
        for (const auto& st : t.steps)
            if (st.action >= n_actions) throw BadIndex("action index out of range in '" + t.id + "'");

    Rng init_rng(derive_seed(cfg.seed, 0xd9, static_cast<std::uint64_t>(kind)));
    FitResult res;
    res.online = QNetwork(static_cast<std::size_t>(emb.embeddings.rows()), n_actions, cfg.hidden, kind, init_rng);
    QNetwork target = res.online;
    nn::Adam opt(res.online.net, {cfg.lr});
    Rng rng(derive_seed(cfg.seed, 0xd9, 100 + static_cast<std::uint64_t>(kind)));

    const auto D = emb.embeddings.rows();
    double running = 0.0;
    std::size_t in_window = 0;
    for (std::size_t u = 0; u < cfg.updates; ++u) {
        const auto refs = stratified_minibatch(buffers, rng, cfg.batch);
        const auto B = static_cast<Eigen::Index>(refs.size());
        QBatch b{nn::Matrix(D, B), std::vector<std::size_t>(refs.size()),
                 std::vector<double>(refs.size(), 0.0)};
        std::vector<Eigen::Index> next_cols;
        std::vector<std::size_t> next_rows;
        UpdateTrace trace;
        trace.update = u;
        trace.terminal.assign(refs.size(), 0);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const auto& t = trajs[refs[i].traj];
            const auto& st = t.steps[refs[i].step];
            b.x.col(static_cast<Eigen::Index>(i)) = emb.embeddings.col(emb.column(refs[i].traj, refs[i].step));
            b.actions[i] = st.action;
            b.targets[i] = step_dual_reward(st, kind);
            if (st.terminal == TerminalKind::none && refs[i].step + 1 < t.steps.size()) {
                next_cols.push_back(emb.column(refs[i].traj, refs[i].step + 1));
                next_rows.push_back(i);
            } else {
                trace.terminal[i] = 1;
            }
        }
        if (!next_cols.empty()) {
            nn::Matrix xn(D, static_cast<Eigen::Index>(next_cols.size()));
            for (std::size_t k = 0; k < next_cols.size(); ++k)
                xn.col(static_cast<Eigen::Index>(k)) = emb.embeddings.col(next_cols[k]);
            const auto sel = argmax_columns(res.online.raw(xn));
            const nn::Matrix tv = target.values(xn);
            if (on_update) {
                trace.online_argmax = sel;
                trace.target_argmax = argmax_columns(target.raw(xn));
                trace.used_action = sel;
            }
            for (std::size_t k = 0; k < next_rows.size(); ++k)
                b.targets[next_rows[k]] += tv(static_cast<Eigen::Index>(sel[k]), static_cast<Eigen::Index>(k));
        }
        if (on_update) on_update(trace);

        nn::Cache cache;
        nn::Matrix d_out;
        const double loss = q_loss(res.online, b, 1.0 / static_cast<double>(B), &cache, &d_out);
        if (!std::isfinite(loss))
            throw Diverged("double-Q loss became non-finite at update " + std::to_string(u));
        opt.step(res.online.net, res.online.net.backward(cache, d_out));
        running += loss;
        if (++in_window == cfg.log_every) {
            res.loss_curve.push_back(running / static_cast<double>(in_window));
            running = 0.0;
            in_window = 0;
        }
        if ((u + 1) % cfg.target_sync == 0) target = res.online;
        ++res.updates;
    }
    if (in_window) res.loss_curve.push_back(running / static_cast<double>(in_window));
    return res;
}

inline nlohmann::json qnet_checkpoint(const QNetwork& q, const DQNConfig& cfg) {
    nlohmann::json c = to_json(cfg);
    c["kind"] = std::string(to_string(q.kind));
    c["input_dim"] = q.input_dim();
    c["n_actions"] = q.n_actions();
    return {{"config", std::move(c)}, {"layers", nn::layers_to_json(q.net)}};
}

inline QNetwork qnet_from_checkpoint(const nlohmann::json& j) {
    try {
        QNetwork q;
        q.kind = dual_kind_from_string(j.at("config").at("kind").get<std::string>());
        q.net = nn::MLP(nn::layers_from_json(j.at("layers")));
        return q;
    } catch (const nlohmann::json::exception& e) {
        throw ShapeMismatch(std::string("malformed Q-network checkpoint: ") + e.what());
    }
}

} // namespace ded
