#pragma once

// The transformation roadmap: an append-only DAG whose nodes are feature
// states and whose edges are the operations that produced them.
//
// Nodes are never physically removed. Pruning and backtracking flip the
// `alive` flag, so ids, signatures and lineage stay stable for export and
// replay. Parents always precede children in id order, which makes id order
// a topological order.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcto/information.hpp"
#include "tcto/opset.hpp"
#include "tcto/tabular.hpp"

namespace tcto {

using NodeId = int;

struct RoadmapNode {
    NodeId id = 0;
    std::vector<NodeId> parents;
    std::optional<OpId> op;  // nullopt for roots
    int depth = 0;
    StatEmbedding stats{};
    bool alive = true;
    std::optional<std::string> origin_name;

    bool is_root() const { return !op.has_value(); }
    friend bool operator==(const RoadmapNode&, const RoadmapNode&) = default;
};

/// Canonical transformation signature, e.g. "sqrt(5)" or "add(3,7)".
/// Parents of commutative operations are sorted.
inline std::string signature(const Operation& op, std::vector<NodeId> parents) {
    if (static_cast<int>(parents.size()) != op.arity)
        throw std::invalid_argument("signature: " + std::string(op.name) + " expects " +
                                    std::to_string(op.arity) + " parent(s)");
    if (op.commutative) std::sort(parents.begin(), parents.end());
    std::string s(op.name);
    s += '(';
    for (std::size_t i = 0; i < parents.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(parents[i]);
    }
    s += ')';
    return s;
}

enum class AddStatus { added, duplicate, revived };

struct AddResult {
    AddStatus status;
    NodeId id;
};

struct Edge {
    NodeId from;
    NodeId to;
    OpId op;
};

struct Snapshot {
    std::size_t node_count = 0;
    std::vector<NodeId> alive;
    std::map<std::string, NodeId> signatures;
    double score = 0.0;
};

struct PruneResult {
    std::vector<NodeId> removed;
    /// (node id, MI score) for every node alive before pruning.
    std::vector<std::pair<NodeId, double>> scores;
};

inline constexpr int kRoadmapSchemaVersion = 1;

class Roadmap {
public:
    Roadmap() = default;

    /// One root per original column; no edges.
    static Roadmap init(const Dataset& d) {
        Roadmap r;
        r.original_columns_ = d.names();
        for (std::size_t j = 0; j < d.features(); ++j) {
            RoadmapNode n;
            n.id = static_cast<NodeId>(j);
            n.stats = column_stats(d.column(j));
            n.origin_name = d.names()[j];
            r.nodes_.push_back(std::move(n));
        }
        return r;
    }

    const std::vector<std::string>& original_columns() const { return original_columns_; }
    const std::vector<RoadmapNode>& nodes() const { return nodes_; }
    const RoadmapNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return nodes_.size(); }
    std::size_t root_count() const { return original_columns_.size(); }
    const std::map<std::string, NodeId>& signature_index() const { return signatures_; }

    bool contains(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }
    bool is_alive(NodeId id) const { return contains(id) && node(id).alive; }

    std::vector<NodeId> alive_ids() const {
        std::vector<NodeId> ids;
        for (const auto& n : nodes_)
            if (n.alive) ids.push_back(n.id);
        return ids;
    }

    std::size_t alive_count() const {
        return static_cast<std::size_t>(
            std::count_if(nodes_.begin(), nodes_.end(), [](const RoadmapNode& n) { return n.alive; }));
    }

    /// Looks up a signature without mutating.
    std::optional<NodeId> find(const Operation& op, const std::vector<NodeId>& parents) const {
        auto it = signatures_.find(signature(op, parents));
        if (it == signatures_.end()) return std::nullopt;
        return it->second;
    }

    /// Appends a node for op(parents) whose training values are `values`.
    /// An alive node with the same signature is reported as a duplicate;
    /// a dead one is brought back to life.
    AddResult add_node(const Operation& op, const std::vector<NodeId>& parents, const Column& values) {
        const std::string sig = signature(op, parents);
        for (NodeId p : parents) {
            if (!contains(p)) throw std::invalid_argument("unknown parent node " + std::to_string(p));
            if (!node(p).alive) throw std::invalid_argument("parent node " + std::to_string(p) + " is dead");
        }
        if (auto it = signatures_.find(sig); it != signatures_.end()) {
            auto& existing = nodes_[static_cast<std::size_t>(it->second)];
            if (existing.alive) return {AddStatus::duplicate, existing.id};
            existing.alive = true;
            return {AddStatus::revived, existing.id};
        }
        RoadmapNode n;
        n.id = static_cast<NodeId>(nodes_.size());
        n.parents = parents;
        n.op = op.id;
        int depth = 0;
        for (NodeId p : parents) depth = std::max(depth, node(p).depth);
        n.depth = depth + 1;
        n.stats = column_stats(values);
        signatures_.emplace(sig, n.id);
        nodes_.push_back(std::move(n));
        return {AddStatus::added, nodes_.back().id};
    }

    /// Edges whose endpoints are both alive, in child-id order.
    std::vector<Edge> alive_edges() const {
        std::vector<Edge> edges;
        for (const auto& n : nodes_) {
            if (!n.alive || n.is_root()) continue;
            for (NodeId p : n.parents)
                if (node(p).alive) edges.push_back({p, n.id, *n.op});
        }
        return edges;
    }

    /// 0/1 adjacency over alive nodes (alive-id order); A[i][j] = 1 iff i -> j.
    Matrix adjacency() const {
        const auto ids = alive_ids();
        std::map<NodeId, std::size_t> pos;
        for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;
        Matrix a(ids.size(), ids.size());
        for (const auto& e : alive_edges()) a(pos[e.from], pos[e.to]) = 1.0;
        return a;
    }

    /// Keeps the top-K alive nodes by I(v; Y) (ties: lower id) plus every
    /// root. `matrix` holds the alive nodes' columns in alive-id order.
    PruneResult prune_node_wise(const std::vector<double>& labels, TaskKind task, std::size_t k,
                                const FeatureMatrix& matrix) {
        if (k < root_count()) throw std::invalid_argument("node budget below original feature count");
        const auto ids = alive_ids();
        if (matrix.size() != ids.size())
            throw std::invalid_argument("prune_node_wise: matrix does not match alive nodes");
        PruneResult res;
        for (std::size_t i = 0; i < ids.size(); ++i)
            res.scores.emplace_back(ids[i], mutual_information(matrix[i], labels, task));
        if (ids.size() <= k) return res;
        auto ranked = res.scores;
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::set<NodeId> keep;
        for (std::size_t i = 0; i < k; ++i) keep.insert(ranked[i].first);
        for (NodeId id : ids) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (n.is_root() || keep.count(id)) continue;
            n.alive = false;
            res.removed.push_back(id);
        }
        return res;
    }

    Snapshot take_snapshot(double score) const {
        return Snapshot{nodes_.size(), alive_ids(), signatures_, score};
    }

    /// Reinstates exactly the snapshot's alive set; later nodes become dead.
    void restore(const Snapshot& s) {
        if (s.node_count > nodes_.size())
            throw std::invalid_argument("snapshot is from a different roadmap lineage");
        for (const auto& [sig, id] : s.signatures) {
            auto it = signatures_.find(sig);
            if (it == signatures_.end() || it->second != id)
                throw std::invalid_argument("snapshot is from a different roadmap lineage");
        }
        for (auto& n : nodes_) n.alive = false;
        for (NodeId id : s.alive) {
            if (!contains(id) || static_cast<std::size_t>(id) >= s.node_count)
                throw std::invalid_argument("snapshot is from a different roadmap lineage");
            nodes_[static_cast<std::size_t>(id)].alive = true;
        }
    }

    // --- serialization ----------------------------------------------------

    nlohmann::json to_json() const {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& n : nodes_) {
            nlohmann::json j{{"id", n.id},
                             {"op", n.op ? std::string(operation(*n.op).name) : std::string("root")},
                             {"parents", n.parents},
                             {"depth", n.depth},
                             {"alive", n.alive},
                             {"stats", n.stats}};
            if (n.origin_name) j["origin_name"] = *n.origin_name;
            nodes.push_back(std::move(j));
        }
        return {{"version", kRoadmapSchemaVersion}, {"original_columns", original_columns_}, {"nodes", nodes}};
    }

    std::string export_json() const { return to_json().dump(1); }

    static Roadmap from_json(const nlohmann::json& j) {
        try {
            if (!j.is_object() || !j.contains("version")) throw SchemaError("roadmap JSON lacks a version");
            if (j.at("version").get<int>() != kRoadmapSchemaVersion)
                throw SchemaError("unsupported roadmap schema version " + j.at("version").dump());
            Roadmap r;
            r.original_columns_ = j.at("original_columns").get<std::vector<std::string>>();
            for (const auto& jn : j.at("nodes")) {
                RoadmapNode n;
                n.id = jn.at("id").get<NodeId>();
                if (n.id != static_cast<NodeId>(r.nodes_.size())) throw SchemaError("node ids must be dense and ordered");
                const auto op_name = jn.at("op").get<std::string>();
                n.parents = jn.at("parents").get<std::vector<NodeId>>();
                n.depth = jn.at("depth").get<int>();
                n.alive = jn.at("alive").get<bool>();
                const auto stats = jn.at("stats").get<std::vector<double>>();
                if (stats.size() != kStatDim) throw SchemaError("stats must have 7 entries");
                std::copy(stats.begin(), stats.end(), n.stats.begin());
                if (jn.contains("origin_name")) n.origin_name = jn.at("origin_name").get<std::string>();
                if (op_name == "root") {
                    if (!n.parents.empty() || n.depth != 0) throw SchemaError("malformed root node");
                    if (static_cast<std::size_t>(n.id) >= r.original_columns_.size())
                        throw SchemaError("root count exceeds original columns");
                } else {
                    auto id = op_from_name(op_name);
                    if (!id) throw SchemaError("unknown operation '" + op_name + "'");
                    n.op = *id;
                    int depth = 0;
                    for (NodeId p : n.parents) {
                        if (p < 0 || p >= n.id) throw SchemaError("parent does not precede node");
                        depth = std::max(depth, r.nodes_[static_cast<std::size_t>(p)].depth);
                    }
                    if (n.depth != depth + 1) throw SchemaError("inconsistent node depth");
                    const std::string sig = signature(operation(*id), n.parents);
                    if (!r.signatures_.emplace(sig, n.id).second) throw SchemaError("duplicate signature " + sig);
                }
                r.nodes_.push_back(std::move(n));
            }
            if (r.nodes_.size() < r.original_columns_.size()) throw SchemaError("missing root nodes");
            for (std::size_t i = 0; i < r.original_columns_.size(); ++i)
                if (!r.nodes_[i].is_root()) throw SchemaError("roots must come first");
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("malformed roadmap JSON: ") + e.what());
        } catch (const std::invalid_argument& e) {
            throw SchemaError(std::string("malformed roadmap JSON: ") + e.what());
        }
    }

    static Roadmap import_json(const std::string& text) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("malformed roadmap JSON: ") + e.what());
        }
        return from_json(j);
    }

    /// Graphviz rendering of the alive subgraph.
    std::string export_dot() const {
        std::ostringstream os;
        os << "digraph roadmap {\n";
        for (const auto& n : nodes_) {
            if (!n.alive) continue;
            os << "  n" << n.id << " [label=\"" << n.id << ':'
               << (n.op ? std::string(operation(*n.op).name) : std::string("root"));
            if (n.origin_name) os << "\\n" << *n.origin_name;
            os << "\"];\n";
        }
        for (const auto& e : alive_edges())
            os << "  n" << e.from << " -> n" << e.to << " [label=\"" << operation(e.op).name << "\"];\n";
        os << "}\n";
        return os.str();
    }

    friend bool operator==(const Roadmap& a, const Roadmap& b) {
        return a.original_columns_ == b.original_columns_ && a.nodes_ == b.nodes_ &&
               a.signatures_ == b.signatures_;
    }

private:
    std::vector<std::string> original_columns_;
    std::vector<RoadmapNode> nodes_;
    std::map<std::string, NodeId> signatures_;
};

inline Roadmap init_roadmap(const Dataset& d) { return Roadmap::init(d); }

/// Recomputes one non-root node from its parents' columns (no rejection).
inline Column compute_node(const RoadmapNode& n, const std::vector<const Column*>& parent_values) {
    const Operation& op = operation(*n.op);
    if (op.arity == 1) return transform_unary(op, *parent_values.at(0));
    return transform_binary(op, *parent_values.at(0), *parent_values.at(1));
}

/// Replays the roadmap on `d` and returns the alive nodes' columns in id
/// order. Dead ancestors of alive nodes are recomputed as intermediates.
/// Non-finite cells (possible on data the roadmap was not grown on) are
/// replaced by 0.
inline FeatureMatrix materialize(const Roadmap& r, const Dataset& d) {
    if (d.names() != r.original_columns())
        throw DataError("dataset columns do not match the roadmap's original columns");
    const auto& nodes = r.nodes();
    std::vector<char> needed(nodes.size(), 0);
    for (std::size_t i = nodes.size(); i-- > 0;) {
        if (nodes[i].alive) needed[i] = 1;
        if (needed[i])
            for (NodeId p : nodes[i].parents) needed[static_cast<std::size_t>(p)] = 1;
    }
    std::vector<Column> values(nodes.size());
    FeatureMatrix out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!needed[i]) continue;
        const auto& n = nodes[i];
        if (n.is_root()) {
            values[i] = d.column(i);
        } else {
            std::vector<const Column*> pv;
            for (NodeId p : n.parents) pv.push_back(&values[static_cast<std::size_t>(p)]);
            values[i] = compute_node(n, pv);
        }
        if (n.alive) {
            Column c = values[i];
            for (double& x : c)
                if (!std::isfinite(x)) x = 0.0;
            out.push_back(std::move(c));
        }
    }
    return out;
}

}  // namespace tcto
