#pragma once

// Minimal dense-network substrate: affine layers with rectifier hidden
// activations and a linear output, exact gradients, plain SGD.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tcto/common.hpp"

namespace tcto::nn {

struct DenseLayer {
    Matrix weight;  // out x in
    std::vector<double> bias;

    std::size_t in() const { return weight.cols; }
    std::size_t out() const { return weight.rows; }
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot(std::size_t out, std::size_t in, Rng& rng) {
    Matrix w(out, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& x : w.data) x = rng.uniform(-limit, limit);
    return w;
}

class DenseNet {
public:
    DenseNet() = default;

    /// dims = {input, hidden..., output}; zero biases.
    DenseNet(const std::vector<std::size_t>& dims, Rng& rng) {
        if (dims.size() < 2) throw std::invalid_argument("DenseNet needs at least input and output dims");
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            layers_.push_back({glorot(dims[l + 1], dims[l], rng), std::vector<double>(dims[l + 1], 0.0)});
    }

    explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (layers_[l].bias.size() != layers_[l].out()) throw std::invalid_argument("bias size mismatch");
            if (l > 0 && layers_[l].in() != layers_[l - 1].out())
                throw std::invalid_argument("layer dims do not chain");
        }
    }

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::size_t input_dim() const { return layers_.front().in(); }
    std::size_t output_dim() const { return layers_.back().out(); }

    bool same_shape(const DenseNet& o) const {
        if (layers_.size() != o.layers_.size()) return false;
        for (std::size_t l = 0; l < layers_.size(); ++l)
            if (layers_[l].in() != o.layers_[l].in() || layers_[l].out() != o.layers_[l].out()) return false;
        return true;
    }

    friend bool operator==(const DenseNet&, const DenseNet&) = default;

private:
    std::vector<DenseLayer> layers_;
};

/// Activations of every layer; acts[0] is the input, acts.back() the output.
struct ForwardCache {
    std::vector<std::vector<double>> acts;
    const std::vector<double>& output() const { return acts.back(); }
};

inline ForwardCache forward_cached(const DenseNet& net, const std::vector<double>& x) {
    if (x.size() != net.input_dim()) throw std::invalid_argument("DenseNet input dim mismatch");
    ForwardCache c;
    c.acts.push_back(x);
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const auto& in = c.acts.back();
        std::vector<double> out(L.bias);
        for (std::size_t i = 0; i < L.out(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < L.in(); ++j) s += L.weight(i, j) * in[j];
            out[i] += s;
        }
        if (l + 1 < layers.size())
            for (double& v : out) v = v > 0.0 ? v : 0.0;
        c.acts.push_back(std::move(out));
    }
    return c;
}

inline std::vector<double> forward(const DenseNet& net, const std::vector<double>& x) {
    return forward_cached(net, x).acts.back();
}

/// Parameter-shaped gradient container.
struct Gradients {
    std::vector<DenseLayer> layers;

    static Gradients zeros_like(const DenseNet& net) {
        Gradients g;
        for (const auto& L : net.layers()) g.layers.push_back({Matrix(L.out(), L.in()), std::vector<double>(L.out(), 0.0)});
        return g;
    }

    void scale(double a) {
        for (auto& L : layers) {
            for (double& x : L.weight.data) x *= a;
            for (double& x : L.bias) x *= a;
        }
    }

    double norm() const {
        double sq = 0.0;
        for (const auto& L : layers) {
            for (double x : L.weight.data) sq += x * x;
            for (double x : L.bias) sq += x * x;
        }
        return std::sqrt(sq);
    }

    /// Rescales to L2 norm `max_norm` when larger; returns the factor used.
    double clip(double max_norm) {
        const double n = norm();
        if (!(n > max_norm)) return 1.0;
        scale(max_norm / n);
        return max_norm / n;
    }

    void accumulate(const Gradients& o) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (std::size_t i = 0; i < layers[l].weight.data.size(); ++i) layers[l].weight.data[i] += o.layers[l].weight.data[i];
            for (std::size_t i = 0; i < layers[l].bias.size(); ++i) layers[l].bias[i] += o.layers[l].bias[i];
        }
    }
};

struct Backward {
    Gradients grads;
    std::vector<double> input_grad;
};

/// Backpropagates dL/d(output) through a cached forward pass.
inline Backward backward(const DenseNet& net, const ForwardCache& cache, std::vector<double> delta) {
    const auto& layers = net.layers();
    if (delta.size() != net.output_dim()) throw std::invalid_argument("output gradient dim mismatch");
    Backward b{Gradients::zeros_like(net), {}};
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& L = layers[l];
        const auto& in = cache.acts[l];
        auto& G = b.grads.layers[l];
        for (std::size_t i = 0; i < L.out(); ++i) {
            G.bias[i] = delta[i];
            if (delta[i] == 0.0) continue;
            for (std::size_t j = 0; j < L.in(); ++j) G.weight(i, j) = delta[i] * in[j];
        }
        std::vector<double> prev(L.in(), 0.0);
        for (std::size_t i = 0; i < L.out(); ++i) {
            if (delta[i] == 0.0) continue;
            for (std::size_t j = 0; j < L.in(); ++j) prev[j] += L.weight(i, j) * delta[i];
        }
        // rectifier derivative of the layer below (hidden activations only)
        if (l > 0)
            for (std::size_t j = 0; j < prev.size(); ++j)
                if (in[j] <= 0.0) prev[j] = 0.0;
        delta = std::move(prev);
    }
    b.input_grad = std::move(delta);
    return b;
}

struct LossAndGrads {
    double loss;
    Gradients grads;
};

/// Summed squared error against `target` with its exact gradient.
inline LossAndGrads backward_mse(const DenseNet& net, const std::vector<double>& x, const std::vector<double>& target) {
    const auto cache = forward_cached(net, x);
    const auto& y = cache.output();
    if (target.size() != y.size()) throw std::invalid_argument("target dim mismatch");
    double loss = 0.0;
    std::vector<double> delta(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - target[i];
        loss += r * r;
        delta[i] = 2.0 * r;
    }
    return {loss, backward(net, cache, std::move(delta)).grads};
}

inline void sgd_step(DenseNet& net, const Gradients& g, double lr) {
    auto& layers = net.layers();
    if (g.layers.size() != layers.size()) throw std::invalid_argument("gradient shape mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& W = layers[l].weight.data;
        const auto& dW = g.layers[l].weight.data;
        if (dW.size() != W.size()) throw std::invalid_argument("gradient shape mismatch");
        for (std::size_t i = 0; i < W.size(); ++i) W[i] -= lr * dW[i];
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i) layers[l].bias[i] -= lr * g.layers[l].bias[i];
    }
}

inline void copy_params(const DenseNet& src, DenseNet& dst) {
    if (!src.same_shape(dst)) throw std::invalid_argument("copy_params shape mismatch");
    dst = src;
}

}  // namespace tcto::nn
