#pragma once

// Two-layer relational graph convolution over the roadmap, with cluster,
// global and operation representations built on top of it.
//
// Each node aggregates, per relation, the degree-normalized transforms of its
// incoming neighbours. Relations are the 17 operations (parent -> child
// messages) plus a self-loop relation, so isolated roots still carry their
// own statistics forward.

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tcto/nnsub.hpp"
#include "tcto/opset.hpp"
#include "tcto/roadmap.hpp"

namespace tcto {

inline constexpr std::size_t kSelfRelation = kNumOps;
inline constexpr std::size_t kNumRelations = kNumOps + 1;
inline constexpr std::size_t kHiddenDim = 32;
inline constexpr std::size_t kEmbedDim = 64;

/// Typed multigraph used by the encoder. incoming[i] lists (relation, source).
struct RelGraph {
    std::size_t relations = 0;
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> incoming;

    std::size_t nodes() const { return incoming.size(); }
};

using Rows = std::vector<std::vector<double>>;

/// Signed log compression applied to node statistics before encoding, so
/// columns with very large magnitudes do not saturate the networks.
inline double squash(double x) { return std::copysign(std::log1p(std::abs(x)), x); }

struct EncoderInput {
    RelGraph graph;
    Rows features;              // alive nodes, 7 squashed stats each
    std::vector<NodeId> ids;    // alive ids, row order
};

/// Graph over the alive nodes: one self loop per node plus an edge of the
/// producing operation's relation from each alive parent.
inline EncoderInput encoder_input(const Roadmap& r) {
    EncoderInput in;
    in.ids = r.alive_ids();
    std::map<NodeId, std::size_t> pos;
    for (std::size_t i = 0; i < in.ids.size(); ++i) pos[in.ids[i]] = i;
    in.graph.relations = kNumRelations;
    in.graph.incoming.resize(in.ids.size());
    for (std::size_t i = 0; i < in.ids.size(); ++i) {
        const auto& n = r.node(in.ids[i]);
        in.graph.incoming[i].emplace_back(kSelfRelation, i);
        if (!n.is_root())
            for (NodeId p : n.parents)
                if (r.is_alive(p)) in.graph.incoming[i].emplace_back(static_cast<std::size_t>(*n.op), pos.at(p));
        std::vector<double> f(kStatDim);
        for (std::size_t t = 0; t < kStatDim; ++t) f[t] = squash(n.stats[t]);
        in.features.push_back(std::move(f));
    }
    return in;
}

struct RgcnParams {
    /// weights[layer][relation], each out x in.
    std::vector<std::vector<Matrix>> weights;

    static RgcnParams random(const std::vector<std::size_t>& dims, std::size_t relations, Rng& rng) {
        RgcnParams p;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            std::vector<Matrix> layer;
            for (std::size_t r = 0; r < relations; ++r) layer.push_back(nn::glorot(dims[l + 1], dims[l], rng));
            p.weights.push_back(std::move(layer));
        }
        return p;
    }

    static RgcnParams zeros(const std::vector<std::size_t>& dims, std::size_t relations) {
        RgcnParams p;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            p.weights.emplace_back(relations, Matrix(dims[l + 1], dims[l]));
        return p;
    }

    static RgcnParams standard(Rng& rng) { return random({kStatDim, kHiddenDim, kEmbedDim}, kNumRelations, rng); }

    std::size_t layers() const { return weights.size(); }
    friend bool operator==(const RgcnParams&, const RgcnParams&) = default;
};

struct RgcnCache {
    std::vector<Rows> inputs;  // inputs[l] = node states entering layer l
    std::vector<Rows> pre;     // pre-activation sums of every layer
    Rows output;
};

namespace detail {

inline std::vector<std::vector<double>> relation_norms(const RelGraph& g) {
    std::vector<std::vector<double>> c(g.nodes(), std::vector<double>(g.relations, 0.0));
    for (std::size_t i = 0; i < g.nodes(); ++i)
        for (const auto& [r, j] : g.incoming[i]) c[i][r] += 1.0;
    return c;
}

inline void add_scaled_matvec(std::vector<double>& out, const Matrix& w, const std::vector<double>& v, double a) {
    for (std::size_t o = 0; o < w.rows; ++o) {
        double s = 0.0;
        for (std::size_t t = 0; t < w.cols; ++t) s += w(o, t) * v[t];
        out[o] += a * s;
    }
}

}  // namespace detail

/// Forward pass; rectifier between layers, identity on the last layer.
inline RgcnCache rgcn_forward_cached(const RelGraph& g, const Rows& x, const RgcnParams& p) {
    if (x.size() != g.nodes()) throw std::invalid_argument("rgcn: feature rows do not match graph");
    const auto c = detail::relation_norms(g);
    RgcnCache cache;
    Rows h = x;
    for (std::size_t l = 0; l < p.layers(); ++l) {
        const auto& W = p.weights[l];
        if (W.size() != g.relations) throw std::invalid_argument("rgcn: relation count mismatch");
        const std::size_t out_dim = W.front().rows;
        Rows pre(g.nodes(), std::vector<double>(out_dim, 0.0));
        for (std::size_t i = 0; i < g.nodes(); ++i)
            for (const auto& [r, j] : g.incoming[i]) detail::add_scaled_matvec(pre[i], W[r], h[j], 1.0 / c[i][r]);
        cache.inputs.push_back(std::move(h));
        Rows next = pre;
        if (l + 1 < p.layers())
            for (auto& row : next)
                for (double& v : row) v = v > 0.0 ? v : 0.0;
        cache.pre.push_back(std::move(pre));
        h = std::move(next);
    }
    cache.output = std::move(h);
    return cache;
}

inline Rows rgcn_forward(const RelGraph& g, const Rows& x, const RgcnParams& p) {
    return rgcn_forward_cached(g, x, p).output;
}

/// Node embeddings of the roadmap's alive nodes (alive-id order).
inline Rows encode_roadmap(const Roadmap& r, const RgcnParams& p) {
    const auto in = encoder_input(r);
    return rgcn_forward(in.graph, in.features, p);
}

/// Gradient of a scalar loss w.r.t. every relation weight, given dL/d(output).
inline RgcnParams rgcn_backward(const RelGraph& g, const RgcnCache& cache, const RgcnParams& p, const Rows& d_out) {
    const auto c = detail::relation_norms(g);
    RgcnParams grads;
    for (const auto& layer : p.weights) {
        std::vector<Matrix> z;
        for (const auto& w : layer) z.emplace_back(w.rows, w.cols);
        grads.weights.push_back(std::move(z));
    }
    Rows delta = d_out;
    for (std::size_t l = p.layers(); l-- > 0;) {
        const auto& W = p.weights[l];
        const auto& in = cache.inputs[l];
        const std::size_t in_dim = W.front().cols;
        Rows d_in(g.nodes(), std::vector<double>(in_dim, 0.0));
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            for (const auto& [r, j] : g.incoming[i]) {
                const double a = 1.0 / c[i][r];
                auto& G = grads.weights[l][r];
                for (std::size_t o = 0; o < W[r].rows; ++o) {
                    const double d = a * delta[i][o];
                    if (d == 0.0) continue;
                    for (std::size_t t = 0; t < in_dim; ++t) {
                        G(o, t) += d * in[j][t];
                        d_in[j][t] += d * W[r](o, t);
                    }
                }
            }
        }
        if (l > 0) {
            const auto& pre_below = cache.pre[l - 1];
            for (std::size_t j = 0; j < g.nodes(); ++j)
                for (std::size_t t = 0; t < in_dim; ++t)
                    if (pre_below[j][t] <= 0.0) d_in[j][t] = 0.0;
        }
        delta = std::move(d_in);
    }
    return grads;
}

inline void sgd_step(RgcnParams& p, const RgcnParams& g, double lr) {
    for (std::size_t l = 0; l < p.weights.size(); ++l)
        for (std::size_t r = 0; r < p.weights[l].size(); ++r)
            for (std::size_t i = 0; i < p.weights[l][r].data.size(); ++i)
                p.weights[l][r].data[i] -= lr * g.weights[l][r].data[i];
}

// --- representations ---------------------------------------------------------

inline std::vector<double> mean_rows(const Rows& emb, const std::vector<std::size_t>& members) {
    if (members.empty()) throw std::invalid_argument("mean over an empty set");
    std::vector<double> m(emb.at(members.front()).size(), 0.0);
    for (std::size_t i : members)
        for (std::size_t t = 0; t < m.size(); ++t) m[t] += emb[i][t];
    for (double& v : m) v /= static_cast<double>(members.size());
    return m;
}

/// Mean of the member rows of one cluster.
inline std::vector<double> cluster_rep(const Rows& emb, const std::vector<std::size_t>& cluster) {
    return mean_rows(emb, cluster);
}

/// Mean over all rows.
inline std::vector<double> global_rep(const Rows& emb) {
    std::vector<std::size_t> all(emb.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return mean_rows(emb, all);
}

/// One-hot(17) -> embedding lookup table.
struct OpEmbedParams {
    Matrix table;  // 17 x dim

    static OpEmbedParams random(std::size_t dim, Rng& rng) { return {nn::glorot(kNumOps, dim, rng)}; }
    friend bool operator==(const OpEmbedParams&, const OpEmbedParams&) = default;
};

/// one_hot(op)^T * table.
inline std::vector<double> op_rep(const Operation& op, const OpEmbedParams& p) {
    const auto e = op_one_hot(op);
    std::vector<double> v(p.table.cols, 0.0);
    for (std::size_t r = 0; r < p.table.rows; ++r) {
        if (e[r] == 0.0) continue;
        for (std::size_t t = 0; t < p.table.cols; ++t) v[t] += e[r] * p.table(r, t);
    }
    return v;
}

}  // namespace tcto
