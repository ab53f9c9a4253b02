#pragma once

#include "ded/errors.hpp"
#include "ded/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace ded::nn {

using Matrix = Eigen::MatrixXd; // column-major; batches are features x batch
using Vector = Eigen::VectorXd;

struct Dense {
    Matrix W; // out x in
    Vector b; // out

    [[nodiscard]] std::size_t in() const { return static_cast<std::size_t>(W.cols()); }
    [[nodiscard]] std::size_t out() const { return static_cast<std::size_t>(W.rows()); }
};

/// Parameter-shaped gradient storage.
struct Gradients {
    std::vector<Matrix> dW;
    std::vector<Vector> db;
};

/// Values kept from a forward pass for backprop.
struct Cache {
    std::vector<Matrix> inputs; // input of every layer
    std::vector<Matrix> pre;    // pre-activation of every layer
};

/// Feedforward network: ReLU after every layer except the last, which is linear.
class MLP {
public:
    MLP() = default;

    /// He-initialized weights (N(0, 2/fan_in)), zero biases.
    MLP(const std::vector<std::size_t>& sizes, Rng& rng) {
        if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
            if (sizes[i] == 0 || sizes[i + 1] == 0) throw ConfigError("layer sizes must be positive");
            std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(sizes[i])));
            Dense d{Matrix(sizes[i + 1], sizes[i]), Vector::Zero(static_cast<Eigen::Index>(sizes[i + 1]))};
            for (Eigen::Index c = 0; c < d.W.cols(); ++c)
                for (Eigen::Index r = 0; r < d.W.rows(); ++r) d.W(r, c) = init(rng);
            layers_.push_back(std::move(d));
        }
    }

    explicit MLP(std::vector<Dense> layers) : layers_(std::move(layers)) {
        for (std::size_t i = 1; i < layers_.size(); ++i)
            if (layers_[i].in() != layers_[i - 1].out())
                throw ShapeMismatch("consecutive layer shapes do not chain");
    }

    [[nodiscard]] std::size_t input_dim() const { return layers_.front().in(); }
    [[nodiscard]] std::size_t output_dim() const { return layers_.back().out(); }
    [[nodiscard]] const std::vector<Dense>& layers() const { return layers_; }
    [[nodiscard]] std::vector<Dense>& layers() { return layers_; }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.W.size() + l.b.size());
        return n;
    }

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
        check_input(x);
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        Matrix h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            Matrix z = layers_[i].W * h;
            z.colwise() += layers_[i].b;
            if (cache) {
                cache->inputs.push_back(h);
                cache->pre.push_back(z);
            }
            h = i + 1 < layers_.size() ? Matrix(z.cwiseMax(0.0)) : z;
        }
        return h;
    }

    /// Backprop of dL/d(output). Returns parameter gradients; writes dL/d(input)
    /// when `d_input` is given.
    Gradients backward(const Cache& cache, const Matrix& d_out, Matrix* d_input = nullptr) const {
        Gradients g;
        g.dW.resize(layers_.size());
        g.db.resize(layers_.size());
        Matrix delta = d_out;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            if (i + 1 < layers_.size())
                delta = delta.cwiseProduct((cache.pre[i].array() > 0.0).cast<double>().matrix());
            g.dW[i] = delta * cache.inputs[i].transpose();
            g.db[i] = delta.rowwise().sum();
            if (i > 0 || d_input) delta = layers_[i].W.transpose() * delta;
        }
        if (d_input) *d_input = delta;
        return g;
    }

    /// ReLU on/off pattern of every hidden unit for the batch.
    [[nodiscard]] std::vector<char> relu_pattern(const Matrix& x) const {
        Cache c;
        forward(x, &c);
        std::vector<char> out;
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
            for (Eigen::Index k = 0; k < c.pre[i].size(); ++k) out.push_back(c.pre[i](k) > 0.0);
        return out;
    }

    /// Pointers to every scalar parameter, layer by layer (W column-major, then b).
    std::vector<double*> parameter_pointers() {
        std::vector<double*> out;
        for (auto& l : layers_) {
            for (Eigen::Index k = 0; k < l.W.size(); ++k) out.push_back(l.W.data() + k);
            for (Eigen::Index k = 0; k < l.b.size(); ++k) out.push_back(l.b.data() + k);
        }
        return out;
    }

private:
    void check_input(const Matrix& x) const {
        if (layers_.empty()) throw ShapeMismatch("network has no layers");
        if (static_cast<std::size_t>(x.rows()) != input_dim())
            throw ShapeMismatch("input has " + std::to_string(x.rows()) + " features, expected " +
                                std::to_string(input_dim()));
    }

    std::vector<Dense> layers_;
};

/// Flattens gradients in parameter_pointers() order.
inline std::vector<double> flatten(const Gradients& g) {
    std::vector<double> out;
    for (std::size_t i = 0; i < g.dW.size(); ++i) {
        out.insert(out.end(), g.dW[i].data(), g.dW[i].data() + g.dW[i].size());
        out.insert(out.end(), g.db[i].data(), g.db[i].data() + g.db[i].size());
    }
    return out;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(const MLP& net, AdamConfig cfg) : cfg_(cfg) {
        for (const auto& l : net.layers()) {
            mW_.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
            vW_.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
            mb_.push_back(Vector::Zero(l.b.size()));
            vb_.push_back(Vector::Zero(l.b.size()));
        }
    }

    void step(MLP& net, const Gradients& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto& layers = net.layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            update(layers[i].W, g.dW[i], mW_[i], vW_[i], c1, c2);
            update(layers[i].b, g.db[i], mb_[i], vb_[i], c1, c2);
        }
    }

    [[nodiscard]] std::size_t steps() const { return t_; }

private:
    template <class P, class G>
    void update(P& p, const G& g, P& m, P& v, double c1, double c2) {
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }

    AdamConfig cfg_;
    std::vector<Matrix> mW_, vW_;
    std::vector<Vector> mb_, vb_;
    std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // perturbation flipped a ReLU unit
};

/// Central finite differences on up to `max_params` randomly chosen scalars.
/// Relative error is |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
inline GradCheckResult gradient_check(const std::vector<double*>& params,
                                      const std::vector<double>& analytic,
                                      const std::function<double()>& loss,
                                      const std::function<std::vector<char>()>& pattern,
                                      std::size_t max_params = 64, std::uint64_t seed = 0,
                                      double step = 1e-5) {
    if (params.size() != analytic.size())
        throw ShapeMismatch("gradient_check: parameter and gradient counts differ");
    std::vector<std::size_t> order(params.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(max_params, order.size()));

    GradCheckResult res;
    const auto base_pattern = pattern ? pattern() : std::vector<char>{};
    for (std::size_t i : order) {
        double& p = *params[i];
        const double saved = p;
        p = saved + step;
        const double up = loss();
        const bool flip_up = pattern && pattern() != base_pattern;
        p = saved - step;
        const double down = loss();
        const bool flip_down = pattern && pattern() != base_pattern;
        p = saved;
        if (flip_up || flip_down) {
            ++res.skipped;
            continue;
        }
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-6);
        res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric) / denom);
        ++res.checked;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Serialization: {"rows", "cols", "weights": row-major, "bias"} per layer

inline nlohmann::json layers_to_json(const MLP& net) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.W.size()));
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) w.push_back(l.W(r, c));
        out.push_back({{"rows", l.W.rows()},
                       {"cols", l.W.cols()},
                       {"weights", std::move(w)},
                       {"bias", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
    }
    return out;
}

inline std::vector<Dense> layers_from_json(const nlohmann::json& arr) {
    std::vector<Dense> layers;
    for (const auto& j : arr) {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const auto w = j.at("weights").get<std::vector<double>>();
        const auto b = j.at("bias").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
            static_cast<Eigen::Index>(b.size()) != rows)
            throw ShapeMismatch("layer weights/bias do not match rows x cols");
        Dense d{Matrix(rows, cols), Vector(rows)};
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c)
                d.W(r, c) = w[static_cast<std::size_t>(r * cols + c)];
            d.b(r) = b[static_cast<std::size_t>(r)];
        }
        layers.push_back(std::move(d));
    }
    return layers;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

} // namespace ded::nn
