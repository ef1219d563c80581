#pragma once

// Shared fixtures for the test binaries.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tcto/tcto.hpp"

namespace tcto::testing {

/// y = sin(x0) + x1*x2 + N(0, noise), features uniform on [-3, 3]. The
/// product term is left out below three features.
inline Dataset synthetic_regression(std::size_t n, std::size_t features, std::uint64_t seed, double noise = 0.05) {
    Rng rng(seed);
    FeatureMatrix cols(features, Column(n));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < features; ++j) cols[j][i] = -3.0 + 6.0 * rng.uniform();
        y[i] = std::sin(cols[0][i]) + (features >= 3 ? cols[1][i] * cols[2][i] : 0.0) + noise * rng.normal();
    }
    std::vector<std::string> names;
    for (std::size_t j = 0; j < features; ++j) names.push_back("x" + std::to_string(j));
    return Dataset(names, cols, y, TaskKind::regression);
}

/// Balanced binary labels driven by the sign of x0*x1.
inline Dataset synthetic_classification(std::size_t n, std::size_t features, std::uint64_t seed) {
    Rng rng(seed);
    FeatureMatrix cols(features, Column(n));
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < features; ++j) cols[j][i] = rng.normal();
        y[i] = cols[0][i] * cols[1][i] > 0.0 ? 1.0 : 0.0;
    }
    std::vector<std::string> names;
    for (std::size_t j = 0; j < features; ++j) names.push_back("f" + std::to_string(j));
    return Dataset(names, cols, y, TaskKind::classification);
}

/// Random roadmap growth that tracks node values incrementally, the way the
/// pipeline does, so replay can be compared against it.
struct GrowingRoadmap {
    Roadmap roadmap;
    std::map<NodeId, Column> values;

    explicit GrowingRoadmap(const Dataset& d) : roadmap(init_roadmap(d)) {
        for (std::size_t j = 0; j < d.features(); ++j) values[static_cast<NodeId>(j)] = d.column(j);
    }

    /// One random op on random alive parents. Returns true if a node was
    /// added or revived.
    bool grow(Rng& rng) {
        const auto alive = roadmap.alive_ids();
        const Operation& op = kOperations[rng.index(kNumOps)];
        std::vector<NodeId> parents{alive[rng.index(alive.size())]};
        if (op.binary()) parents.push_back(alive[rng.index(alive.size())]);
        if (op.binary() && parents[0] == parents[1]) return false;
        if (auto id = roadmap.find(op, parents); id && roadmap.is_alive(*id)) return false;
        auto v = op.binary() ? apply_binary(op, values.at(parents[0]), values.at(parents[1]))
                             : apply_unary(op, values.at(parents[0]));
        if (!v) return false;
        const auto res = roadmap.add_node(op, parents, *v);
        values[res.id] = *v;
        return true;
    }

    FeatureMatrix matrix() const {
        FeatureMatrix m;
        for (NodeId id : roadmap.alive_ids()) m.push_back(values.at(id));
        return m;
    }
};

inline double max_abs_diff(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.size() != b.size()) return INFINITY;
    double d = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j].size() != b[j].size()) return INFINITY;
        for (std::size_t i = 0; i < a[j].size(); ++i) d = std::max(d, std::abs(a[j][i] - b[j][i]));
    }
    return d;
}

}  // namespace tcto::testing
