#pragma once

// JSON parameter checkpoints for the encoder, the operation embedding and
// the three agents. Doubles are written in shortest round-trip form, so a
// save/load cycle is bit-exact.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tcto/agents.hpp"
#include "tcto/encoder.hpp"

namespace tcto {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols) throw SchemaError("matrix data size does not match its shape");
    return m;
}

inline nlohmann::json net_to_json(const nn::DenseNet& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", l.bias}});
    return layers;
}

inline nn::DenseNet net_from_json(const nlohmann::json& j) {
    std::vector<nn::DenseLayer> layers;
    for (const auto& jl : j) layers.push_back({matrix_from_json(jl.at("weight")), jl.at("bias").get<std::vector<double>>()});
    return nn::DenseNet(std::move(layers));
}

/// Relation weights keyed by (layer, relation).
inline nlohmann::json rgcn_to_json(const RgcnParams& p) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t l = 0; l < p.weights.size(); ++l)
        for (std::size_t r = 0; r < p.weights[l].size(); ++r)
            arr.push_back({{"layer", l}, {"relation", r}, {"weight", matrix_to_json(p.weights[l][r])}});
    return arr;
}

inline RgcnParams rgcn_from_json(const nlohmann::json& j) {
    RgcnParams p;
    for (const auto& e : j) {
        const auto l = e.at("layer").get<std::size_t>();
        const auto r = e.at("relation").get<std::size_t>();
        if (p.weights.size() <= l) p.weights.resize(l + 1);
        if (p.weights[l].size() <= r) p.weights[l].resize(r + 1);
        p.weights[l][r] = matrix_from_json(e.at("weight"));
    }
    return p;
}

struct Checkpoint {
    RgcnParams rgcn;
    OpEmbedParams op_embed;
    std::optional<AgentBundle> agents;
};

inline nlohmann::json checkpoint_to_json(const RgcnParams& rgcn, const OpEmbedParams& op, const AgentBundle& agents) {
    nlohmann::json ja;
    for (const Agent* a : {&agents.head, &agents.operation, &agents.operand})
        ja[role_name(a->role)] = {{"prediction", net_to_json(a->prediction)}, {"target", net_to_json(a->target)}};
    return {{"version", kCheckpointVersion}, {"rgcn", rgcn_to_json(rgcn)}, {"op_embed", matrix_to_json(op.table)},
            {"agents", ja}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kCheckpointVersion) throw SchemaError("unsupported checkpoint version");
        Checkpoint c;
        c.rgcn = rgcn_from_json(j.at("rgcn"));
        c.op_embed.table = matrix_from_json(j.at("op_embed"));
        const auto& ja = j.at("agents");
        auto load = [&](AgentRole role) {
            const auto& e = ja.at(role_name(role));
            Agent a{role, net_from_json(e.at("prediction")), net_from_json(e.at("target")), ReplayBuffer{}};
            if (!a.prediction.same_shape(a.target)) throw SchemaError("prediction/target shape mismatch");
            return a;
        };
        c.agents = AgentBundle{load(AgentRole::head), load(AgentRole::operation), load(AgentRole::operand)};
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

}  // namespace tcto
