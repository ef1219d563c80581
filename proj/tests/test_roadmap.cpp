#include <cmath>
#include <regex>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace tcto;
using tcto::testing::GrowingRoadmap;

namespace {

Dataset with_features(std::size_t features, std::size_t n = 30) {
    Rng rng(2);
    FeatureMatrix cols(features, Column(n));
    std::vector<double> y(n);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < features; ++j) {
        names.push_back("c" + std::to_string(j));
        for (double& x : cols[j]) x = rng.normal();
    }
    for (double& v : y) v = rng.normal();
    return Dataset(names, cols, y, TaskKind::regression);
}

const Operation& op(OpId id) { return operation(id); }

}  // namespace

TEST(Roadmap, InitThirteenRoots) {
    const auto d = with_features(13);
    const auto r = init_roadmap(d);
    EXPECT_EQ(r.size(), 13u);
    EXPECT_EQ(r.root_count(), 13u);
    for (const auto& n : r.nodes()) {
        EXPECT_TRUE(n.is_root());
        EXPECT_EQ(n.depth, 0);
        EXPECT_TRUE(n.parents.empty());
        EXPECT_EQ(n.stats, column_stats(d.column(static_cast<std::size_t>(n.id))));
    }
    EXPECT_TRUE(r.alive_edges().empty());
}

TEST(Roadmap, SingleFeature) {
    const auto r = init_roadmap(with_features(1));
    EXPECT_EQ(r.size(), 1u);
    EXPECT_TRUE(r.alive_edges().empty());
    EXPECT_EQ(r.adjacency().rows, 1u);
}

TEST(Signature, CanonicalForms) {
    EXPECT_EQ(signature(op(OpId::add), {7, 3}), signature(op(OpId::add), {3, 7}));
    EXPECT_EQ(signature(op(OpId::multiply), {7, 3}), "multiply(3,7)");
    EXPECT_NE(signature(op(OpId::subtract), {7, 3}), signature(op(OpId::subtract), {3, 7}));
    EXPECT_EQ(signature(op(OpId::sqrt), {5}), "sqrt(5)");
    EXPECT_THROW(signature(op(OpId::sqrt), {1, 2}), std::invalid_argument);
    EXPECT_THROW(signature(op(OpId::add), {1}), std::invalid_argument);
}

TEST(Roadmap, AddDuplicateAndDepth) {
    const auto d = with_features(6);
    auto r = init_roadmap(d);
    const auto v5 = *apply_unary(op(OpId::sqrt), d.column(5));
    const auto first = r.add_node(op(OpId::sqrt), {5}, v5);
    EXPECT_EQ(first.status, AddStatus::added);
    EXPECT_EQ(r.alive_edges().size(), 1u);
    const auto second = r.add_node(op(OpId::sqrt), {5}, v5);
    EXPECT_EQ(second.status, AddStatus::duplicate);
    EXPECT_EQ(second.id, first.id);
    EXPECT_EQ(r.alive_edges().size(), 1u);

    // depth 1 -> 2, then (2, 0) -> 3
    const auto d2 = r.add_node(op(OpId::sin), {first.id}, v5);
    EXPECT_EQ(r.node(d2.id).depth, 2);
    const auto d3 = r.add_node(op(OpId::add), {d2.id, 0}, v5);
    EXPECT_EQ(r.node(d3.id).depth, 3);
    EXPECT_EQ(r.alive_edges().size(), 4u);  // binary adds two edges

    const auto comm = r.add_node(op(OpId::add), {0, d2.id}, v5);
    EXPECT_EQ(comm.status, AddStatus::duplicate);
    EXPECT_EQ(comm.id, d3.id);
}

TEST(Roadmap, AddErrors) {
    const auto d = with_features(3);
    auto r = init_roadmap(d);
    EXPECT_THROW(r.add_node(op(OpId::sin), {9}, d.column(0)), std::invalid_argument);
    EXPECT_THROW(r.add_node(op(OpId::add), {0}, d.column(0)), std::invalid_argument);
    const auto a = r.add_node(op(OpId::sin), {0}, d.column(0));
    auto snap = init_roadmap(d).take_snapshot(0.0);
    r.restore(snap);
    EXPECT_THROW(r.add_node(op(OpId::cos), {a.id}, d.column(0)), std::invalid_argument);
}

TEST(Roadmap, AdjacencyMatchesEdges) {
    const auto d = with_features(4);
    GrowingRoadmap g(d);
    Rng rng(3);
    for (int i = 0; i < 30; ++i) g.grow(rng);
    const auto a = g.roadmap.adjacency();
    const auto ids = g.roadmap.alive_ids();
    std::size_t ones = 0;
    for (double v : a.data) ones += v == 1.0;
    std::set<std::pair<NodeId, NodeId>> pairs;
    for (const auto& e : g.roadmap.alive_edges()) pairs.insert({e.from, e.to});
    EXPECT_EQ(ones, pairs.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j)
            EXPECT_EQ(a(i, j) == 1.0, pairs.count({ids[i], ids[j]}) == 1);
}

TEST(Roadmap, DagInvariants) {
    const auto d = with_features(5);
    GrowingRoadmap g(d);
    Rng rng(4);
    for (int i = 0; i < 60; ++i) g.grow(rng);
    std::set<std::string> sigs;
    for (const auto& n : g.roadmap.nodes()) {
        if (n.is_root()) continue;
        int depth = 0;
        for (NodeId p : n.parents) {
            EXPECT_LT(p, n.id);
            depth = std::max(depth, g.roadmap.node(p).depth);
        }
        EXPECT_EQ(n.depth, depth + 1);
        sigs.insert(signature(operation(*n.op), n.parents));
    }
    EXPECT_EQ(sigs.size(), g.roadmap.signature_index().size());
}

TEST(Materialize, FreshRoadmapIsIdentity) {
    const auto d = with_features(4);
    EXPECT_EQ(materialize(init_roadmap(d), d), d.columns());
}

TEST(Materialize, MatchesIncrementalValues) {
    const auto d = with_features(6, 50);
    GrowingRoadmap g(d);
    Rng rng(5);
    for (int i = 0; i < 25; ++i) g.grow(rng);
    EXPECT_LE(tcto::testing::max_abs_diff(materialize(g.roadmap, d), g.matrix()), 1e-9);
}

TEST(Materialize, DeadAncestorsRecomputed) {
    const auto d = with_features(3);
    auto r = init_roadmap(d);
    const auto a = r.add_node(op(OpId::square), {0}, *apply_unary(op(OpId::square), d.column(0)));
    const auto b_vals = *apply_unary(op(OpId::sin), *apply_unary(op(OpId::square), d.column(0)));
    const auto b = r.add_node(op(OpId::sin), {a.id}, b_vals);
    // kill the intermediate only
    Snapshot s = r.take_snapshot(0.0);
    s.alive = {0, 1, 2, b.id};
    r.restore(s);
    const auto m = materialize(r, d);
    ASSERT_EQ(m.size(), 4u);
    EXPECT_EQ(m[3], b_vals);
}

TEST(Materialize, ColumnMismatch) {
    const auto r = init_roadmap(with_features(3));
    EXPECT_THROW(materialize(r, with_features(4)), DataError);
}

TEST(Prune, NoChangeWhenWithinBudget) {
    const auto d = with_features(3);
    GrowingRoadmap g(d);
    Rng rng(6);
    for (int i = 0; i < 4; ++i) g.grow(rng);
    const auto before = g.roadmap.alive_ids();
    const auto res = g.roadmap.prune_node_wise(d.labels(), d.task(), before.size(), g.matrix());
    EXPECT_TRUE(res.removed.empty());
    EXPECT_EQ(g.roadmap.alive_ids(), before);
}

TEST(Prune, KeepsTopMiAndRoots) {
    // One root (MI ~ 0) and three derived nodes built from a label-correlated
    // column with decreasing informativeness.
    const std::size_t n = 200;
    Rng rng(7);
    std::vector<double> y(n);
    Column root(n), strong(n), weak(n), mid(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<double>(i % 2);
        root[i] = rng.normal();
        strong[i] = y[i] + 0.05 * rng.normal();
        weak[i] = y[i] + 5.0 * rng.normal();
        mid[i] = y[i] + 0.6 * rng.normal();
    }
    const Dataset d({"r"}, {root}, y, TaskKind::classification);
    auto r = init_roadmap(d);
    const auto a = r.add_node(op(OpId::sin), {0}, strong).id;
    const auto b = r.add_node(op(OpId::cos), {0}, weak).id;
    const auto c = r.add_node(op(OpId::tanh), {0}, mid).id;
    const double mia = mutual_information(strong, y, d.task());
    const double mib = mutual_information(weak, y, d.task());
    const double mic = mutual_information(mid, y, d.task());
    ASSERT_GT(mia, mic);
    ASSERT_GT(mic, mib);
    const auto res = r.prune_node_wise(y, d.task(), 2, {root, strong, weak, mid});
    EXPECT_EQ(res.removed, (std::vector<NodeId>{b}));
    EXPECT_EQ(r.alive_ids(), (std::vector<NodeId>{0, a, c}));
    EXPECT_THROW(r.prune_node_wise(y, d.task(), 0, {root, strong, mid}), std::invalid_argument);
    EXPECT_THROW(r.prune_node_wise(y, d.task(), 2, {root}), std::invalid_argument);
}

TEST(Snapshot, RestoreReproducesState) {
    const auto d = with_features(4);
    GrowingRoadmap g(d);
    Rng rng(8);
    for (int i = 0; i < 10; ++i) g.grow(rng);
    const auto snap = g.roadmap.take_snapshot(0.5);
    const auto before = materialize(g.roadmap, d);
    int added = 0;
    while (added < 5)
        if (g.grow(rng)) ++added;
    g.roadmap.restore(snap);
    EXPECT_EQ(g.roadmap.alive_ids(), snap.alive);
    EXPECT_EQ(materialize(g.roadmap, d), before);
    g.roadmap.restore(snap);
    EXPECT_EQ(materialize(g.roadmap, d), before);
}

TEST(Snapshot, ForeignLineageRejected) {
    const auto d = with_features(3);
    GrowingRoadmap a(d), b(d);
    a.roadmap.add_node(op(OpId::sin), {0}, *apply_unary(op(OpId::sin), d.column(0)));
    b.roadmap.add_node(op(OpId::cos), {1}, *apply_unary(op(OpId::cos), d.column(1)));
    EXPECT_THROW(a.roadmap.restore(b.roadmap.take_snapshot(0)), std::invalid_argument);
    GrowingRoadmap c(d);
    EXPECT_THROW(c.roadmap.restore(a.roadmap.take_snapshot(0)), std::invalid_argument);
}

TEST(Snapshot, RevivesDeadSignature) {
    const auto d = with_features(3);
    auto r = init_roadmap(d);
    const auto root_only = r.take_snapshot(0);
    const auto v = *apply_unary(op(OpId::sin), d.column(0));
    const auto a = r.add_node(op(OpId::sin), {0}, v);
    r.restore(root_only);
    EXPECT_FALSE(r.is_alive(a.id));
    const auto again = r.add_node(op(OpId::sin), {0}, v);
    EXPECT_EQ(again.status, AddStatus::revived);
    EXPECT_EQ(again.id, a.id);
    EXPECT_EQ(r.size(), 4u);
}

TEST(Serialization, RoundTripFiftyNodes) {
    const auto d = with_features(6, 40);
    GrowingRoadmap g(d);
    Rng rng(9);
    while (g.roadmap.size() < 50) g.grow(rng);
    const auto back = Roadmap::import_json(g.roadmap.export_json());
    EXPECT_EQ(back, g.roadmap);
    EXPECT_EQ(materialize(back, d), materialize(g.roadmap, d));
}

TEST(Serialization, DotHasOneLinePerAliveEdge) {
    const auto d = with_features(4);
    GrowingRoadmap g(d);
    Rng rng(10);
    for (int i = 0; i < 15; ++i) g.grow(rng);
    const auto dot = g.roadmap.export_dot();
    const std::regex edge("n[0-9]+ -> n[0-9]+");
    const auto count = std::distance(std::sregex_iterator(dot.begin(), dot.end(), edge), std::sregex_iterator());
    EXPECT_EQ(static_cast<std::size_t>(count), g.roadmap.alive_edges().size());
    EXPECT_EQ(dot.rfind("digraph roadmap {", 0), 0u);
}

TEST(Serialization, MalformedInputs) {
    const auto d = with_features(3);
    GrowingRoadmap g(d);
    Rng rng(11);
    for (int i = 0; i < 6; ++i) g.grow(rng);
    const auto text = g.roadmap.export_json();
    EXPECT_THROW(Roadmap::import_json(text.substr(0, text.size() / 2)), SchemaError);
    auto j = g.roadmap.to_json();
    j["version"] = 99;
    EXPECT_THROW(Roadmap::from_json(j), SchemaError);
    auto k = g.roadmap.to_json();
    k["nodes"][3]["op"] = "pow";
    EXPECT_THROW(Roadmap::from_json(k), SchemaError);
    auto m = g.roadmap.to_json();
    m.erase("nodes");
    EXPECT_THROW(Roadmap::from_json(m), SchemaError);
    EXPECT_THROW(Roadmap::import_json("[]"), SchemaError);
}
