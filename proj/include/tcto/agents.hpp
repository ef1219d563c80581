#pragma once

// Cascading value-based agents: head cluster, operation, operand cluster.
//
// The head and operand agents score each candidate cluster with a shared
// scalar-output network (Q per candidate); the operation agent emits one Q
// value per operation from a single forward pass.

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcto/encoder.hpp"
#include "tcto/nnsub.hpp"
#include "tcto/opset.hpp"

namespace tcto {

enum class AgentRole { head, operation, operand };

inline const char* role_name(AgentRole r) {
    switch (r) {
    case AgentRole::head: return "head";
    case AgentRole::operation: return "operation";
    case AgentRole::operand: return "operand";
    }
    return "?";
}

inline constexpr std::size_t kAgentHidden = 100;
inline constexpr std::size_t kReplayCapacity = 16;
inline constexpr std::size_t kBatchSize = 8;
/// Upper bound on the L2 norm of one agent update.
inline constexpr double kAgentGradClip = 1.0;

struct Transition {
    std::vector<double> state_input;
    std::size_t action = 0;  // output index (always 0 for scalar-output agents)
    double reward_share = 0.0;
    std::vector<std::vector<double>> next_candidates;
    bool terminal = false;
};

/// FIFO ring of the most recent transitions.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = kReplayCapacity) : capacity_(capacity) {}

    void push(Transition t) {
        if (!t.terminal && t.next_candidates.empty())
            throw std::invalid_argument("non-terminal transition without next candidates");
        items_.push_back(std::move(t));
        while (items_.size() > capacity_) items_.pop_front();
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return items_[i]; }

private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

struct Agent {
    AgentRole role;
    nn::DenseNet prediction;
    nn::DenseNet target;
    ReplayBuffer buffer;
};

/// Input width for each role given the node-embedding width `emb` and the
/// operation-embedding width `op_dim`.
inline std::size_t agent_input_dim(AgentRole role, std::size_t emb, std::size_t op_dim) {
    switch (role) {
    case AgentRole::head:
    case AgentRole::operation: return 2 * emb;
    case AgentRole::operand: return 3 * emb + op_dim;
    }
    return 0;
}

inline Agent make_agent(AgentRole role, std::size_t emb, std::size_t op_dim, Rng& rng) {
    const std::size_t out = role == AgentRole::operation ? kNumOps : 1;
    nn::DenseNet net({agent_input_dim(role, emb, op_dim), kAgentHidden, out}, rng);
    return Agent{role, net, net, ReplayBuffer{}};
}

inline std::vector<double> concat(std::initializer_list<const std::vector<double>*> parts) {
    std::vector<double> v;
    for (const auto* p : parts) v.insert(v.end(), p->begin(), p->end());
    return v;
}

/// Lowest index among the maxima.
inline std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Epsilon-greedy over candidate scores. One uniform draw is always consumed.
inline std::size_t epsilon_greedy(const std::vector<double>& q, double epsilon, Rng& rng) {
    if (q.empty()) throw std::invalid_argument("epsilon_greedy over no candidates");
    if (rng.uniform() < epsilon) return rng.index(q.size());
    return argmax(q);
}

inline std::vector<std::vector<double>> head_inputs(const std::vector<std::vector<double>>& cluster_reps,
                                                    const std::vector<double>& global) {
    std::vector<std::vector<double>> in;
    for (const auto& c : cluster_reps) in.push_back(concat({&c, &global}));
    return in;
}

inline std::vector<double> scalar_scores(const nn::DenseNet& net, const std::vector<std::vector<double>>& inputs) {
    std::vector<double> q;
    for (const auto& x : inputs) q.push_back(nn::forward(net, x)[0]);
    return q;
}

inline std::size_t select_head(const Agent& agent, const std::vector<std::vector<double>>& cluster_reps,
                               const std::vector<double>& global, double epsilon, Rng& rng) {
    return epsilon_greedy(scalar_scores(agent.prediction, head_inputs(cluster_reps, global)), epsilon, rng);
}

inline std::vector<double> operation_input(const std::vector<double>& head_rep, const std::vector<double>& global) {
    return concat({&head_rep, &global});
}

inline OpId select_operation(const Agent& agent, const std::vector<double>& head_rep, const std::vector<double>& global,
                             double epsilon, Rng& rng) {
    const auto q = nn::forward(agent.prediction, operation_input(head_rep, global));
    return static_cast<OpId>(epsilon_greedy(q, epsilon, rng));
}

/// Unary operation with the highest Q value.
inline OpId best_unary(const Agent& agent, const std::vector<double>& head_rep, const std::vector<double>& global) {
    const auto q = nn::forward(agent.prediction, operation_input(head_rep, global));
    std::size_t best = kNumOps;
    for (std::size_t i = 0; i < kNumOps; ++i)
        if (!kOperations[i].binary() && (best == kNumOps || q[i] > q[best])) best = i;
    return static_cast<OpId>(best);
}

struct OperandCandidates {
    std::vector<std::size_t> clusters;
    std::vector<std::vector<double>> inputs;
};

inline OperandCandidates operand_inputs(const std::vector<double>& head_rep, const std::vector<double>& global,
                                        const std::vector<double>& op_embedding,
                                        const std::vector<std::vector<double>>& cluster_reps, std::size_t exclude) {
    OperandCandidates c;
    for (std::size_t i = 0; i < cluster_reps.size(); ++i) {
        if (i == exclude) continue;
        c.clusters.push_back(i);
        c.inputs.push_back(concat({&head_rep, &global, &op_embedding, &cluster_reps[i]}));
    }
    return c;
}

/// Tail cluster for a binary operation; the head cluster is never returned.
inline std::size_t select_operand(const Agent& agent, const std::vector<double>& head_rep,
                                  const std::vector<double>& global, const std::vector<double>& op_embedding,
                                  const std::vector<std::vector<double>>& cluster_reps, std::size_t exclude,
                                  double epsilon, Rng& rng) {
    const auto cands = operand_inputs(head_rep, global, op_embedding, cluster_reps, exclude);
    if (cands.clusters.empty()) throw std::invalid_argument("select_operand needs at least two clusters");
    return cands.clusters[epsilon_greedy(scalar_scores(agent.prediction, cands.inputs), epsilon, rng)];
}

inline void push_transition(Agent& agent, Transition t) { agent.buffer.push(std::move(t)); }

/// TD target: r + gamma * max over next candidates and outputs of the target net.
inline double td_target(const Agent& agent, const Transition& t, double gamma) {
    if (t.terminal || gamma == 0.0) return t.reward_share;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : t.next_candidates) {
        const auto q = nn::forward(agent.target, c);
        best = std::max(best, *std::max_element(q.begin(), q.end()));
    }
    return t.reward_share + gamma * best;
}

/// One SGD step on the mean squared TD error of a uniformly sampled batch
/// (without replacement). Returns the pre-step batch loss, or nullopt when
/// the buffer holds fewer than `batch_size` transitions. The batch gradient
/// is clipped to `clip` in L2 norm (0 disables clipping).
inline std::optional<double> train_step(Agent& agent, std::size_t batch_size, double gamma, double lr, Rng& rng,
                                        double clip = kAgentGradClip) {
    if (batch_size == 0 || agent.buffer.size() < batch_size) return std::nullopt;
    std::vector<std::size_t> idx(agent.buffer.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);

    auto total = nn::Gradients::zeros_like(agent.prediction);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const auto& t = agent.buffer[idx[b]];
        const double y = td_target(agent, t, gamma);
        const auto cache = nn::forward_cached(agent.prediction, t.state_input);
        const double r = cache.output().at(t.action) - y;
        loss += r * r * inv_b;
        std::vector<double> delta(agent.prediction.output_dim(), 0.0);
        delta[t.action] = 2.0 * r * inv_b;
        total.accumulate(nn::backward(agent.prediction, cache, std::move(delta)).grads);
    }
    if (clip > 0.0) total.clip(clip);
    nn::sgd_step(agent.prediction, total, lr);
    return loss;
}

/// d/d(input) of (Q(input)[action] - y)^2 under the prediction network.
inline std::vector<double> td_input_gradient(const Agent& agent, const std::vector<double>& input, std::size_t action,
                                             double y) {
    const auto cache = nn::forward_cached(agent.prediction, input);
    std::vector<double> delta(agent.prediction.output_dim(), 0.0);
    delta[action] = 2.0 * (cache.output().at(action) - y);
    return nn::backward(agent.prediction, cache, std::move(delta)).input_grad;
}

inline void sync_target(Agent& agent) { nn::copy_params(agent.prediction, agent.target); }

struct AgentBundle {
    Agent head;
    Agent operation;
    Agent operand;

    static AgentBundle create(std::size_t emb, std::size_t op_dim, Rng& rng) {
        Agent h = make_agent(AgentRole::head, emb, op_dim, rng);
        Agent o = make_agent(AgentRole::operation, emb, op_dim, rng);
        Agent t = make_agent(AgentRole::operand, emb, op_dim, rng);
        return {std::move(h), std::move(o), std::move(t)};
    }

    Agent& get(AgentRole r) { return r == AgentRole::head ? head : r == AgentRole::operation ? operation : operand; }
};

}  // namespace tcto
