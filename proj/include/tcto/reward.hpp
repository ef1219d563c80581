#pragma once

// Dual reward: downstream performance delta plus a roadmap-simplicity term,
// shared equally among the agents that acted.

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "tcto/agents.hpp"
#include "tcto/roadmap.hpp"

namespace tcto {

struct StepReward {
    double r_p = 0.0;
    double r_c = 0.0;
    double total = 0.0;
    std::map<AgentRole, double> shares;
};

inline double performance_reward(double prev_score, double curr_score) { return curr_score - prev_score; }

/// Mean of exp(-depth) over alive nodes; 1 for an untransformed roadmap.
inline double complexity_reward(const Roadmap& r) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& node : r.nodes()) {
        if (!node.alive) continue;
        sum += std::exp(-static_cast<double>(node.depth));
        ++n;
    }
    if (n == 0) throw std::invalid_argument("complexity_reward of an empty roadmap");
    return sum / static_cast<double>(n);
}

inline std::map<AgentRole, double> split_reward(double total, const std::set<AgentRole>& acted) {
    if (acted.empty()) throw std::invalid_argument("split_reward needs at least one acting agent");
    // Equal shares; the last one absorbs rounding so the shares summed in
    // role order reproduce `total` exactly.
    std::map<AgentRole, double> shares;
    const double each = total / static_cast<double>(acted.size());
    double given = 0.0;
    std::size_t i = 0;
    for (AgentRole r : acted) {
        shares[r] = (++i == acted.size()) ? total - given : each;
        given += each;
    }
    return shares;
}

inline StepReward step_reward(double prev_score, double curr_score, const Roadmap& r, const std::set<AgentRole>& acted,
                              double w_p = 1.0, double w_c = 1.0) {
    StepReward s;
    s.r_p = performance_reward(prev_score, curr_score);
    s.r_c = complexity_reward(r);
    s.total = w_p * s.r_p + w_c * s.r_c;
    s.shares = split_reward(s.total, acted);
    return s;
}

}  // namespace tcto
