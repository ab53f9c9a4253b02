#pragma once

#include "ded/dataset.hpp"
#include "ded/errors.hpp"
#include "ded/mdp.hpp"
#include "ded/nn.hpp"
#include "ded/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace ded {

struct EncoderConfig {
    std::size_t embed_dim = 64;
    std::size_t window = 8;
    std::vector<std::size_t> hidden{128};
    std::size_t decoder_hidden = 64;
    double lr = 5e-4;
    std::size_t epochs = 600;
    /// Minibatch updates per epoch.
    std::size_t steps_per_epoch = 20;
    std::size_t batch = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (embed_dim == 0) throw ConfigError("embed_dim must be at least 1");
        if (window == 0) throw ConfigError("window must be at least 1");
        if (!(lr > 0.0)) throw ConfigError("encoder lr must be positive");
        if (batch == 0 || steps_per_epoch == 0) throw ConfigError("batch and steps_per_epoch must be positive");
    }
};

inline nlohmann::json to_json(const EncoderConfig& c) {
    return {{"embed_dim", c.embed_dim}, {"window", c.window},       {"hidden", c.hidden},
            {"decoder_hidden", c.decoder_hidden}, {"lr", c.lr},    {"epochs", c.epochs},
            {"steps_per_epoch", c.steps_per_epoch}, {"batch", c.batch}, {"seed", c.seed}};
}

/// Maps an observation-action history window to a fixed embedding. In
/// one-hot mode (tabular data) the embedding is the indicator of the current
/// state and the history is ignored.
class StateEncoder {
public:
    enum class Mode { window_mlp, one_hot };

    StateEncoder() = default;

    static StateEncoder one_hot(std::size_t n_states) {
        StateEncoder e;
        e.mode_ = Mode::one_hot;
        e.n_states_ = n_states;
        return e;
    }

    static StateEncoder windowed(std::size_t obs_dim, std::size_t n_actions, EncoderConfig cfg,
                                 Rng& rng) {
        cfg.validate();
        StateEncoder e;
        e.mode_ = Mode::window_mlp;
        e.obs_dim_ = obs_dim;
        e.n_actions_ = n_actions;
        e.cfg_ = cfg;
        std::vector<std::size_t> sizes{e.input_dim()};
        sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
        sizes.push_back(cfg.embed_dim);
        e.net_ = nn::MLP(sizes, rng);
        return e;
    }

    static StateEncoder from_parts(std::size_t obs_dim, std::size_t n_actions, EncoderConfig cfg,
                                   nn::MLP net) {
        StateEncoder e;
        e.mode_ = Mode::window_mlp;
        e.obs_dim_ = obs_dim;
        e.n_actions_ = n_actions;
        e.cfg_ = std::move(cfg);
        e.net_ = std::move(net);
        if (e.net_.input_dim() != e.input_dim() || e.net_.output_dim() != e.cfg_.embed_dim)
            throw ShapeMismatch("encoder network does not match its configuration");
        return e;
    }

    [[nodiscard]] Mode mode() const { return mode_; }
    [[nodiscard]] std::size_t obs_dim() const { return obs_dim_; }
    [[nodiscard]] std::size_t n_actions() const { return n_actions_; }
    [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
    [[nodiscard]] nn::MLP& net() { return net_; }
    [[nodiscard]] const nn::MLP& net() const { return net_; }

    /// Per-step slot: observation then a one-hot of the previous action with
    /// a final "no previous action" slot.
    [[nodiscard]] std::size_t step_width() const { return obs_dim_ + n_actions_ + 1; }
    [[nodiscard]] std::size_t input_dim() const { return cfg_.window * step_width(); }
    [[nodiscard]] std::size_t embed_dim() const {
        return mode_ == Mode::one_hot ? n_states_ : cfg_.embed_dim;
    }

    /// Window ending at step t, oldest step first; positions before the
    /// episode start are zero observations with the null action.
    [[nodiscard]] nn::Vector window_input(const Trajectory& traj, std::size_t t) const {
        if (t >= traj.steps.size()) throw BadIndex("window_input: step out of range");
        nn::Vector x = nn::Vector::Zero(static_cast<Eigen::Index>(input_dim()));
        const std::size_t W = cfg_.window, w = step_width();
        for (std::size_t k = 0; k < W; ++k) {
            const long tau = static_cast<long>(t) - static_cast<long>(W - 1 - k);
            const Eigen::Index base = static_cast<Eigen::Index>(k * w);
            if (tau < 0) {
                x(base + static_cast<Eigen::Index>(obs_dim_ + n_actions_)) = 1.0;
                continue;
            }
            const auto& st = traj.steps[static_cast<std::size_t>(tau)];
            if (st.obs.size() != obs_dim_)
                throw ShapeMismatch("observation has " + std::to_string(st.obs.size()) +
                                    " entries, expected " + std::to_string(obs_dim_));
            for (std::size_t i = 0; i < obs_dim_; ++i) x(base + static_cast<Eigen::Index>(i)) = st.obs[i];
            const std::size_t prev = tau == 0 ? n_actions_ : traj.steps[static_cast<std::size_t>(tau - 1)].action;
            if (prev > n_actions_) throw BadIndex("action index out of range");
            x(base + static_cast<Eigen::Index>(obs_dim_ + prev)) = 1.0;
        }
        return x;
    }

    [[nodiscard]] nn::Vector encode(const Trajectory& traj, std::size_t t) const {
        if (mode_ == Mode::one_hot) {
            const auto& st = traj.steps.at(t);
            if (!st.state) throw NonTabularData("one-hot encoder needs state indices");
            if (*st.state >= n_states_) throw BadIndex("state index out of range");
            nn::Vector e = nn::Vector::Zero(static_cast<Eigen::Index>(n_states_));
            e(static_cast<Eigen::Index>(*st.state)) = 1.0;
            return e;
        }
        return net_.forward(window_input(traj, t));
    }

    /// Embeds a prepared window batch (input_dim x batch).
    [[nodiscard]] nn::Matrix encode_windows(const nn::Matrix& windows) const {
        if (mode_ == Mode::one_hot) throw ConfigError("one-hot encoder has no window input");
        return net_.forward(windows);
    }

private:
    Mode mode_ = Mode::one_hot;
    std::size_t n_states_ = 0;
    std::size_t obs_dim_ = 0;
    std::size_t n_actions_ = 0;
    EncoderConfig cfg_;
    nn::MLP net_;
};

/// Embeddings of every step of a trajectory list, one column per step.
struct EmbeddedCohort {
    nn::Matrix embeddings; // embed_dim x total_steps
    std::vector<std::size_t> offsets;

    [[nodiscard]] Eigen::Index column(std::size_t traj, std::size_t step) const {
        return static_cast<Eigen::Index>(offsets[traj] + step);
    }
};

inline EmbeddedCohort embed_cohort(const StateEncoder& enc, const std::vector<Trajectory>& trajs) {
    EmbeddedCohort out;
    std::size_t total = 0;
    for (const auto& t : trajs) {
        out.offsets.push_back(total);
        total += t.steps.size();
    }
    out.embeddings.resize(static_cast<Eigen::Index>(enc.embed_dim()), static_cast<Eigen::Index>(total));
    if (enc.mode() == StateEncoder::Mode::one_hot) {
        out.embeddings.setZero();
        for (std::size_t i = 0; i < trajs.size(); ++i)
            for (std::size_t k = 0; k < trajs[i].steps.size(); ++k)
                out.embeddings.col(out.column(i, k)) = enc.encode(trajs[i], k);
        return out;
    }
    constexpr std::size_t chunk = 1024;
    nn::Matrix windows(static_cast<Eigen::Index>(enc.input_dim()), static_cast<Eigen::Index>(chunk));
    std::size_t filled = 0, start = 0;
    auto flush = [&] {
        if (filled == 0) return;
        out.embeddings.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(filled)) =
            enc.encode_windows(windows.leftCols(static_cast<Eigen::Index>(filled)));
        start += filled;
        filled = 0;
    };
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        for (std::size_t k = 0; k < trajs[i].steps.size(); ++k) {
            windows.col(static_cast<Eigen::Index>(filled++)) = enc.window_input(trajs[i], k);
            if (filled == chunk) flush();
        }
    }
    flush();
    return out;
}

/// Encoder plus next-observation decoder: [embedding ; one-hot(a_t)] -> mean of O_{t+1}.
struct SCModel {
    StateEncoder encoder;
    nn::MLP decoder;
};

/// Loss terms of one batch. nll is the mean unit-variance Gaussian negative
/// log density evaluated from the general formula; sse is the mean summed
/// squared error.
struct SCBatchLoss {
    double nll = 0.0;
    double sse = 0.0;
    std::size_t obs_dim = 0;

    /// nll - 0.5 d log(2 pi) - 0.5 sse; zero up to rounding.
    [[nodiscard]] double identity_error() const {
        return nll - 0.5 * static_cast<double>(obs_dim) * std::log(2.0 * std::numbers::pi) - 0.5 * sse;
    }
};

inline double gaussian_nll(double x, double mean, double sigma) {
    const double z = (x - mean) / sigma;
    return 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) + 0.5 * z * z;
}

/// Prepared decoder training batch.
struct SCBatch {
    nn::Matrix windows;   // encoder input x B
    nn::Matrix actions;   // n_actions x B one-hot of a_t
    nn::Matrix targets;   // obs_dim x B, O_{t+1}
};

struct SCForward {
    nn::Cache enc_cache, dec_cache;
    nn::Matrix prediction;
};

inline SCBatchLoss sc_loss(const SCModel& m, const SCBatch& b, SCForward* fwd = nullptr) {
    SCForward local;
    SCForward& f = fwd ? *fwd : local;
    const nn::Matrix emb = m.encoder.net().forward(b.windows, &f.enc_cache);
    nn::Matrix dec_in(emb.rows() + b.actions.rows(), emb.cols());
    dec_in << emb, b.actions;
    f.prediction = m.decoder.forward(dec_in, &f.dec_cache);
    SCBatchLoss loss;
    loss.obs_dim = static_cast<std::size_t>(b.targets.rows());
    const double B = static_cast<double>(b.targets.cols());
    for (Eigen::Index c = 0; c < b.targets.cols(); ++c) {
        for (Eigen::Index r = 0; r < b.targets.rows(); ++r) {
            const double d = b.targets(r, c) - f.prediction(r, c);
            loss.nll += gaussian_nll(b.targets(r, c), f.prediction(r, c), 1.0);
            loss.sse += d * d;
        }
    }
    loss.nll /= B;
    loss.sse /= B;
    return loss;
}

struct SCGradients {
    nn::Gradients encoder, decoder;
};

/// Gradient of the mean NLL with respect to every encoder and decoder parameter.
inline SCGradients sc_gradients(const SCModel& m, const SCBatch& b, const SCForward& f) {
    const double B = static_cast<double>(b.targets.cols());
    const nn::Matrix d_pred = (f.prediction - b.targets) / B;
    nn::Matrix d_dec_in;
    SCGradients g;
    g.decoder = m.decoder.backward(f.dec_cache, d_pred, &d_dec_in);
    const auto E = static_cast<Eigen::Index>(m.encoder.embed_dim());
    g.encoder = m.encoder.net().backward(f.enc_cache, d_dec_in.topRows(E));
    return g;
}

/// Sampling index over non-final steps: only those have an observed O_{t+1}.
inline std::vector<TransitionRef> sc_transitions(const std::vector<Trajectory>& trajs) {
    std::vector<TransitionRef> out;
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (std::size_t k = 0; k + 1 < trajs[i].steps.size(); ++k) out.push_back({i, k});
    return out;
}

inline SCBatch make_sc_batch(const StateEncoder& enc, const std::vector<Trajectory>& trajs,
                             const std::vector<TransitionRef>& refs) {
    const auto B = static_cast<Eigen::Index>(refs.size());
    SCBatch b{nn::Matrix(static_cast<Eigen::Index>(enc.input_dim()), B),
              nn::Matrix::Zero(static_cast<Eigen::Index>(enc.n_actions()), B),
              nn::Matrix(static_cast<Eigen::Index>(enc.obs_dim()), B)};
    for (Eigen::Index c = 0; c < B; ++c) {
        const auto& r = refs[static_cast<std::size_t>(c)];
        const auto& t = trajs[r.traj];
        b.windows.col(c) = enc.window_input(t, r.step);
        const std::size_t a = t.steps[r.step].action;
        if (a >= enc.n_actions()) throw BadIndex("action index out of range");
        b.actions(static_cast<Eigen::Index>(a), c) = 1.0;
        const auto& next = t.steps[r.step + 1].obs;
        if (next.size() != enc.obs_dim()) throw ShapeMismatch("observation width mismatch");
        for (std::size_t i = 0; i < next.size(); ++i) b.targets(static_cast<Eigen::Index>(i), c) = next[i];
    }
    return b;
}

struct SCTrainResult {
    SCModel model;
    std::vector<double> epoch_nll;     // mean NLL over the epoch's batches
    std::vector<double> val_sse;       // mean squared error on validation, per epoch
    double max_identity_error = 0.0;   // over every training batch
};

inline std::size_t infer_obs_dim(const std::vector<Trajectory>& trajs) {
    for (const auto& t : trajs)
        for (const auto& s : t.steps)
            if (!s.obs.empty()) return s.obs.size();
    return 0;
}

/// Trains encoder and decoder jointly on next-observation NLL with Adam.
/// The decoder output layer starts at zero weights with bias equal to the
/// training mean of O_{t+1}.
inline SCTrainResult train_sc(const std::vector<Trajectory>& train, std::size_t n_actions,
                              const EncoderConfig& cfg,
                              const std::vector<Trajectory>* val = nullptr) {
    cfg.validate();
    const std::size_t d = infer_obs_dim(train);
    if (d == 0) throw NonTabularData("train_sc needs vector observations");
    const auto refs = sc_transitions(train);
    if (refs.empty()) throw EmptyBuffer("no transitions with an observed next observation");

    Rng rng(derive_seed(cfg.seed, 0x5c));
    SCTrainResult res;
    res.model.encoder = StateEncoder::windowed(d, n_actions, cfg, rng);
    res.model.decoder = nn::MLP({cfg.embed_dim + n_actions, cfg.decoder_hidden, d}, rng);
    {
        nn::Vector mean = nn::Vector::Zero(static_cast<Eigen::Index>(d));
        for (const auto& r : refs) {
            const auto& o = train[r.traj].steps[r.step + 1].obs;
            for (std::size_t i = 0; i < d; ++i) mean(static_cast<Eigen::Index>(i)) += o[i];
        }
        mean /= static_cast<double>(refs.size());
        auto& out = res.model.decoder.layers().back();
        out.W.setZero();
        out.b = mean;
    }
    nn::Adam enc_opt(res.model.encoder.net(), {cfg.lr});
    nn::Adam dec_opt(res.model.decoder, {cfg.lr});

    std::optional<SCBatch> val_batch;
    if (val) {
        const auto vrefs = sc_transitions(*val);
        if (!vrefs.empty()) val_batch = make_sc_batch(res.model.encoder, *val, vrefs);
    }

    Rng batch_rng(derive_seed(cfg.seed, 0x5c, 1));
    std::vector<TransitionRef> picked(cfg.batch);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0;
        for (std::size_t k = 0; k < cfg.steps_per_epoch; ++k) {
            for (auto& p : picked) p = refs[uniform_index(batch_rng, refs.size())];
            const auto batch = make_sc_batch(res.model.encoder, train, picked);
            SCForward f;
            const auto loss = sc_loss(res.model, batch, &f);
            if (!std::isfinite(loss.nll))
                throw Diverged("state-construction loss became non-finite at epoch " +
                               std::to_string(epoch));
            res.max_identity_error = std::max(res.max_identity_error, std::abs(loss.identity_error()));
            total += loss.nll;
            const auto g = sc_gradients(res.model, batch, f);
            enc_opt.step(res.model.encoder.net(), g.encoder);
            dec_opt.step(res.model.decoder, g.decoder);
        }
        res.epoch_nll.push_back(total / static_cast<double>(cfg.steps_per_epoch));
        if (val_batch) res.val_sse.push_back(sc_loss(res.model, *val_batch).sse);
    }
    return res;
}

inline nlohmann::json sc_checkpoint(const SCModel& m) {
    nlohmann::json cfg = to_json(m.encoder.config());
    cfg["obs_dim"] = m.encoder.obs_dim();
    cfg["n_actions"] = m.encoder.n_actions();
    cfg["encoder_layers"] = m.encoder.net().layers().size();
    nlohmann::json layers = nn::layers_to_json(m.encoder.net());
    for (auto& l : nn::layers_to_json(m.decoder)) layers.push_back(std::move(l));
    return {{"config", std::move(cfg)}, {"layers", std::move(layers)}};
}

inline SCModel sc_from_checkpoint(const nlohmann::json& j) {
    try {
        const auto& c = j.at("config");
        EncoderConfig cfg;
        cfg.embed_dim = c.at("embed_dim").get<std::size_t>();
        cfg.window = c.at("window").get<std::size_t>();
        cfg.hidden = c.at("hidden").get<std::vector<std::size_t>>();
        cfg.decoder_hidden = c.at("decoder_hidden").get<std::size_t>();
        cfg.lr = c.at("lr").get<double>();
        cfg.epochs = c.at("epochs").get<std::size_t>();
        cfg.steps_per_epoch = c.at("steps_per_epoch").get<std::size_t>();
        cfg.batch = c.at("batch").get<std::size_t>();
        cfg.seed = c.at("seed").get<std::uint64_t>();
        auto layers = nn::layers_from_json(j.at("layers"));
        const auto n_enc = c.at("encoder_layers").get<std::size_t>();
        if (n_enc >= layers.size()) throw ShapeMismatch("checkpoint has no decoder layers");
        std::vector<nn::Dense> dec(layers.begin() + static_cast<std::ptrdiff_t>(n_enc), layers.end());
        layers.resize(n_enc);
        SCModel m;
        m.encoder = StateEncoder::from_parts(c.at("obs_dim").get<std::size_t>(),
                                             c.at("n_actions").get<std::size_t>(), cfg,
                                             nn::MLP(std::move(layers)));
        m.decoder = nn::MLP(std::move(dec));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ShapeMismatch(std::string("malformed encoder checkpoint: ") + e.what());
    }
}

} // namespace ded
