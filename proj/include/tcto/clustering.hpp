#pragma once

// Roadmap clustering: cosine similarity of node embeddings plus structural
// adjacency feed an enhanced Laplacian; nodes are embedded in its low
// spectrum and merged agglomeratively with average linkage.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "tcto/common.hpp"
#include "tcto/roadmap.hpp"

namespace tcto {

struct ClusterAssignment {
    std::size_t k = 0;
    /// Cluster index per input row (alive-id order when built from a roadmap).
    std::vector<std::size_t> membership;
    std::vector<NodeId> node_ids;

    std::vector<std::vector<std::size_t>> groups() const {
        std::vector<std::vector<std::size_t>> g(k);
        for (std::size_t i = 0; i < membership.size(); ++i) g[membership[i]].push_back(i);
        return g;
    }
};

inline constexpr double kZeroNorm = 1e-12;

inline Matrix cosine_similarity_matrix(const std::vector<std::vector<double>>& emb) {
    const std::size_t m = emb.size();
    Matrix s(m, m);
    if (m == 0) return s;
    const std::size_t dim = emb[0].size();
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (emb[i].size() != dim) throw std::invalid_argument("embedding dimension mismatch");
        double ss = 0.0;
        for (double x : emb[i]) ss += x * x;
        norms[i] = std::sqrt(ss);
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i; j < m; ++j) {
            double v = 0.0;
            if (norms[i] >= kZeroNorm && norms[j] >= kZeroNorm) {
                double dot = 0.0;
                for (std::size_t t = 0; t < dim; ++t) dot += emb[i][t] * emb[j][t];
                v = dot / (norms[i] * norms[j]);
            }
            s(i, j) = s(j, i) = v;
        }
    }
    return s;
}

/// S = D - (max(A, A^T) + sim), D = diag of the row sums of the bracket.
/// Passing an empty matrix for either term drops it.
inline Matrix enhanced_laplacian(const Matrix& adjacency, const Matrix& similarity) {
    const bool has_a = adjacency.rows > 0;
    const bool has_s = similarity.rows > 0;
    const std::size_t m = has_a ? adjacency.rows : similarity.rows;
    if ((has_a && adjacency.cols != m) || (has_s && (similarity.rows != m || similarity.cols != m)))
        throw std::invalid_argument("enhanced_laplacian shape mismatch");
    Matrix w(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (has_a) w(i, j) += std::max(adjacency(i, j), adjacency(j, i));
            if (has_s) w(i, j) += similarity(i, j);
        }
    Matrix s(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < m; ++j) deg += w(i, j);
        for (std::size_t j = 0; j < m; ++j) s(i, j) = -w(i, j);
        s(i, i) += deg;
    }
    return s;
}

struct EigenDecomposition {
    std::vector<double> values;  // ascending
    Matrix vectors;              // column t is the eigenvector of values[t]
};

/// Cyclic Jacobi rotations for a symmetric matrix. Converges when the
/// off-diagonal Frobenius norm drops below 1e-10 of the total norm; gives up
/// after 10*m^2 sweeps.
inline EigenDecomposition symmetric_eigen(const Matrix& input) {
    const std::size_t m = input.rows;
    if (input.cols != m) throw std::invalid_argument("symmetric_eigen needs a square matrix");
    Matrix a = input;
    Matrix v = Matrix::identity(m);
    double total = 0.0;
    for (double x : a.data) total += x * x;
    total = std::sqrt(total);
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };
    const std::size_t max_sweeps = std::max<std::size_t>(10 * m * m, 10);
    std::size_t sweep = 0;
    while (off_norm() > 1e-10 * total && total > 0.0) {
        if (sweep++ >= max_sweeps) throw NumericalError("Jacobi eigensolver did not converge");
        for (std::size_t p = 0; p + 1 < m; ++p) {
            for (std::size_t q = p + 1; q < m; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < m; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < m; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < m; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
    EigenDecomposition out{std::vector<double>(m), Matrix(m, m)};
    for (std::size_t t = 0; t < m; ++t) {
        out.values[t] = a(order[t], order[t]);
        // sign convention: first entry of non-negligible magnitude is positive
        double sign = 1.0;
        for (std::size_t k = 0; k < m; ++k)
            if (std::abs(v(k, order[t])) > 1e-12) {
                sign = v(k, order[t]) < 0.0 ? -1.0 : 1.0;
                break;
            }
        for (std::size_t k = 0; k < m; ++k) out.vectors(k, t) = sign * v(k, order[t]);
    }
    return out;
}

/// Row i holds node i's coordinates in the eigenvectors of the `dims`
/// smallest eigenvalues.
inline std::vector<std::vector<double>> spectral_embed(const Matrix& s, std::size_t dims) {
    const auto eig = symmetric_eigen(s);
    dims = std::min(dims, s.rows);
    std::vector<std::vector<double>> rows(s.rows, std::vector<double>(dims));
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t t = 0; t < dims; ++t) rows[i][t] = eig.vectors(i, t);
    return rows;
}

/// Average-linkage agglomerative clustering down to k clusters. Ties on
/// distance go to the pair whose smallest members are lowest. Cluster
/// indices are numbered by smallest member.
inline ClusterAssignment hierarchical_cluster(const std::vector<std::vector<double>>& rows, std::size_t k) {
    const std::size_t n = rows.size();
    if (k < 1 || k > n) throw std::invalid_argument("hierarchical_cluster: k out of range");
    // pairwise distance sums between active clusters
    Matrix sum(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = 0.0;
            for (std::size_t t = 0; t < rows[i].size(); ++t) d += (rows[i][t] - rows[j][t]) * (rows[i][t] - rows[j][t]);
            sum(i, j) = sum(j, i) = std::sqrt(d);
        }
    // cluster c is represented by its smallest member index
    std::vector<std::size_t> size(n, 1), owner(n);
    std::iota(owner.begin(), owner.end(), std::size_t{0});
    std::vector<char> active(n, 1);
    for (std::size_t clusters = n; clusters > k; --clusters) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const double avg = sum(i, j) / static_cast<double>(size[i] * size[j]);
                if (avg < best) {
                    best = avg;
                    bi = i;
                    bj = j;
                }
            }
        }
        for (std::size_t t = 0; t < n; ++t) {
            if (!active[t] || t == bi || t == bj) continue;
            sum(bi, t) = sum(t, bi) = sum(bi, t) + sum(bj, t);
        }
        size[bi] += size[bj];
        active[bj] = 0;
        for (std::size_t t = 0; t < n; ++t)
            if (owner[t] == bj) owner[t] = bi;
    }
    ClusterAssignment out;
    out.k = k;
    out.membership.resize(n);
    std::map<std::size_t, std::size_t> label;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, inserted] = label.emplace(owner[i], label.size());
        out.membership[i] = it->second;
    }
    return out;
}

inline std::size_t cluster_count_for(std::size_t alive) {
    if (alive <= 1) return 1;
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(alive))));
    return std::min(alive, std::max<std::size_t>(2, k));
}

struct ClusteringOptions {
    bool use_similarity = true;
    bool use_structure = true;
};

/// Clusters the roadmap's alive nodes; `embeddings` must be aligned with
/// `r.alive_ids()`.
inline ClusterAssignment cluster_roadmap(const Roadmap& r, const std::vector<std::vector<double>>& embeddings,
                                         ClusteringOptions opts = {}) {
    const auto ids = r.alive_ids();
    if (embeddings.size() != ids.size())
        throw std::invalid_argument("cluster_roadmap: embeddings not aligned with alive nodes");
    const std::size_t m = ids.size();
    const std::size_t k = cluster_count_for(m);
    ClusterAssignment out;
    if (m <= 1) {
        out.k = 1;
        out.membership.assign(m, 0);
    } else {
        const Matrix adj = opts.use_structure ? r.adjacency() : Matrix{};
        const Matrix sim = opts.use_similarity ? cosine_similarity_matrix(embeddings) : Matrix{};
        Matrix s = (adj.rows == 0 && sim.rows == 0) ? Matrix(m, m) : enhanced_laplacian(adj, sim);
        out = hierarchical_cluster(spectral_embed(s, k), k);
    }
    out.node_ids = ids;
    return out;
}

}  // namespace tcto
