#pragma once

// Episode/step orchestration: cluster -> encode -> decide -> cross ->
// reward -> learn -> prune, with best-roadmap tracking and run reports.
//
// One roadmap persists for the whole run. Starting an episode restores the
// root-only snapshot, so node ids, signatures and the cross-episode best
// snapshot all stay valid.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcto/agents.hpp"
#include "tcto/checkpoint.hpp"
#include "tcto/clustering.hpp"
#include "tcto/encoder.hpp"
#include "tcto/evaluator.hpp"
#include "tcto/reward.hpp"
#include "tcto/roadmap.hpp"
#include "tcto/tabular.hpp"

namespace tcto {

enum class PolicyKind { learned, random };

/// Maximum L2 norm of one encoder/operation-embedding update.
inline constexpr double kEncoderGradClip = 1.0;

struct RunConfig {
    std::size_t episodes = 50;
    std::size_t steps_per_episode = 100;
    std::size_t application_episodes = 10;
    /// Pruning budget K; 0 means node_budget_factor x original feature count.
    std::size_t node_budget = 0;
    double node_budget_factor = 4.0;
    double node_wise_phase_fraction = 0.30;
    double epsilon_start = 0.9;
    double epsilon_end = 0.05;
    double gamma = 0.95;
    double learning_rate = 0.01;
    double w_p = 1.0;
    double w_c = 1.0;
    std::size_t max_new_nodes = 64;
    std::size_t batch_size = kBatchSize;
    std::size_t target_sync_every = 10;
    std::uint64_t seed = 0;
    double test_fraction = 0.2;
    EvalConfig eval;
    bool use_similarity = true;
    bool use_structure = true;
    bool use_rgcn = true;
    bool train_encoder = true;
    PolicyKind policy = PolicyKind::learned;

    std::size_t budget_for(std::size_t original_features) const {
        if (node_budget > 0) return node_budget;
        return static_cast<std::size_t>(std::llround(node_budget_factor * static_cast<double>(original_features)));
    }

    void validate() const {
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!unit(node_wise_phase_fraction) || !unit(epsilon_start) || !unit(epsilon_end) || !unit(gamma))
            throw std::invalid_argument("RunConfig: fractions must lie in [0, 1]");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw std::invalid_argument("RunConfig: test_fraction must lie in (0, 1)");
        if (max_new_nodes == 0 || batch_size == 0 || target_sync_every == 0 || node_budget_factor <= 0.0)
            throw std::invalid_argument("RunConfig: budgets must be positive");
        eval.validate();
    }
};

/// Flat JSON view of the configuration; unknown keys are rejected.
inline nlohmann::json config_to_json(const RunConfig& c) {
    return {{"episodes", c.episodes},
            {"steps", c.steps_per_episode},
            {"application_episodes", c.application_episodes},
            {"node_budget", c.node_budget},
            {"node_budget_factor", c.node_budget_factor},
            {"node_wise_phase_fraction", c.node_wise_phase_fraction},
            {"epsilon_start", c.epsilon_start},
            {"epsilon_end", c.epsilon_end},
            {"gamma", c.gamma},
            {"learning_rate", c.learning_rate},
            {"w_p", c.w_p},
            {"w_c", c.w_c},
            {"max_new_nodes", c.max_new_nodes},
            {"batch_size", c.batch_size},
            {"target_sync_every", c.target_sync_every},
            {"seed", c.seed},
            {"test_fraction", c.test_fraction},
            {"folds", c.eval.folds},
            {"trees", c.eval.trees},
            {"max_depth", c.eval.max_depth},
            {"eval_seed", c.eval.seed},
            {"model", model_name(c.eval.model)},
            {"use_similarity", c.use_similarity},
            {"use_structure", c.use_structure},
            {"use_rgcn", c.use_rgcn},
            {"train_encoder", c.train_encoder},
            {"policy", c.policy == PolicyKind::learned ? "learned" : "random"}};
}

inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be a flat JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "episodes") c.episodes = v.get<std::size_t>();
            else if (key == "steps") c.steps_per_episode = v.get<std::size_t>();
            else if (key == "application_episodes") c.application_episodes = v.get<std::size_t>();
            else if (key == "node_budget") c.node_budget = v.get<std::size_t>();
            else if (key == "node_budget_factor") c.node_budget_factor = v.get<double>();
            else if (key == "node_wise_phase_fraction") c.node_wise_phase_fraction = v.get<double>();
            else if (key == "epsilon_start") c.epsilon_start = v.get<double>();
            else if (key == "epsilon_end") c.epsilon_end = v.get<double>();
            else if (key == "gamma") c.gamma = v.get<double>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "w_p") c.w_p = v.get<double>();
            else if (key == "w_c") c.w_c = v.get<double>();
            else if (key == "max_new_nodes") c.max_new_nodes = v.get<std::size_t>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "target_sync_every") c.target_sync_every = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "test_fraction") c.test_fraction = v.get<double>();
            else if (key == "folds") c.eval.folds = v.get<std::size_t>();
            else if (key == "trees") c.eval.trees = v.get<std::size_t>();
            else if (key == "max_depth") c.eval.max_depth = v.get<std::size_t>();
            else if (key == "eval_seed") c.eval.seed = v.get<std::uint64_t>();
            else if (key == "model") c.eval.model = parse_model(v.get<std::string>());
            else if (key == "use_similarity") c.use_similarity = v.get<bool>();
            else if (key == "use_structure") c.use_structure = v.get<bool>();
            else if (key == "use_rgcn") c.use_rgcn = v.get<bool>();
            else if (key == "train_encoder") c.train_encoder = v.get<bool>();
            else if (key == "policy") {
                const auto s = v.get<std::string>();
                if (s == "learned") c.policy = PolicyKind::learned;
                else if (s == "random") c.policy = PolicyKind::random;
                else throw std::invalid_argument("unknown policy '" + s + "'");
            } else {
                throw std::invalid_argument("unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception&) {
            throw std::invalid_argument("config key '" + key + "' has the wrong type");
        }
    }
}

enum class PruneKind { none, node_wise, backtrack };

inline const char* prune_name(PruneKind p) {
    switch (p) {
    case PruneKind::none: return "none";
    case PruneKind::node_wise: return "node_wise";
    case PruneKind::backtrack: return "backtrack";
    }
    return "?";
}

/// Wall-clock seconds per phase.
struct PhaseTiming {
    double clustering = 0.0;
    double decision = 0.0;
    double roadmap_update = 0.0;
    double reward_estimation = 0.0;
    double learning = 0.0;
    double pruning = 0.0;

    double sum() const { return clustering + decision + roadmap_update + reward_estimation + learning + pruning; }
    void add(const PhaseTiming& o) {
        clustering += o.clustering;
        decision += o.decision;
        roadmap_update += o.roadmap_update;
        reward_estimation += o.reward_estimation;
        learning += o.learning;
        pruning += o.pruning;
    }
};

struct StepRecord {
    std::string phase;  // "train" or "apply"
    std::size_t episode = 0;
    std::size_t step = 0;
    double epsilon = 0.0;
    std::size_t clusters = 0;
    std::size_t alive_before = 0;
    std::size_t head = 0;
    std::size_t head_size = 0;
    std::string op;
    std::optional<std::size_t> tail;
    std::size_t tail_size = 0;
    bool unary_fallback = false;
    std::size_t added = 0;
    std::size_t revived = 0;
    std::size_t duplicates = 0;
    std::size_t rejected = 0;
    std::size_t truncated = 0;
    double score_before = 0.0;
    double score_generated = 0.0;
    double score_after = 0.0;
    double r_p = 0.0;
    double r_c = 0.0;
    double reward = 0.0;
    std::map<AgentRole, double> shares;
    std::map<AgentRole, double> losses;
    std::size_t alive_generated = 0;
    PruneKind prune = PruneKind::none;
    std::size_t alive_after = 0;
    std::size_t budget = 0;
    double best_score = 0.0;
    PhaseTiming timing;
};

inline nlohmann::json step_to_json(const StepRecord& s, bool with_timing = true) {
    nlohmann::json shares = nlohmann::json::object(), losses = nlohmann::json::object();
    for (const auto& [r, v] : s.shares) shares[role_name(r)] = v;
    for (const auto& [r, v] : s.losses) losses[role_name(r)] = v;
    nlohmann::json j{{"phase", s.phase},
                     {"episode", s.episode},
                     {"step", s.step},
                     {"epsilon", s.epsilon},
                     {"clusters", s.clusters},
                     {"alive_before", s.alive_before},
                     {"head", s.head},
                     {"head_size", s.head_size},
                     {"op", s.op},
                     {"tail", s.tail ? nlohmann::json(*s.tail) : nlohmann::json(nullptr)},
                     {"tail_size", s.tail_size},
                     {"unary_fallback", s.unary_fallback},
                     {"added", s.added},
                     {"revived", s.revived},
                     {"duplicates", s.duplicates},
                     {"rejected", s.rejected},
                     {"truncated", s.truncated},
                     {"score_before", s.score_before},
                     {"score_generated", s.score_generated},
                     {"score_after", s.score_after},
                     {"r_p", s.r_p},
                     {"r_c", s.r_c},
                     {"reward", s.reward},
                     {"shares", shares},
                     {"losses", losses},
                     {"alive_generated", s.alive_generated},
                     {"prune", prune_name(s.prune)},
                     {"alive_after", s.alive_after},
                     {"budget", s.budget},
                     {"best_score", s.best_score}};
    if (with_timing)
        j["timing"] = {{"clustering", s.timing.clustering},
                       {"decision", s.timing.decision},
                       {"roadmap_update", s.timing.roadmap_update},
                       {"reward_estimation", s.timing.reward_estimation},
                       {"learning", s.timing.learning},
                       {"pruning", s.timing.pruning}};
    return j;
}

struct RunReport {
    std::vector<StepRecord> steps;
    double baseline_score = 0.0;
    /// Train-CV score of the roadmap the run started from.
    double start_score = 0.0;
    double best_score = 0.0;
    Snapshot best_snapshot;
    /// Full roadmap with the best snapshot's alive set.
    Roadmap best_roadmap;
    std::optional<double> test_baseline;
    std::optional<double> test_best;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t budget = 0;
    PhaseTiming timing;
    double wall_seconds = 0.0;

    /// Best score reached by the end of each episode, per phase.
    std::vector<std::pair<std::string, double>> episode_best() const {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& s : steps) {
            const std::string key = s.phase + ":" + std::to_string(s.episode);
            if (out.empty() || out.back().first != key) out.emplace_back(key, s.best_score);
            else out.back().second = s.best_score;
        }
        return out;
    }
};

inline nlohmann::json summary_to_json(const RunReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& [k, v] : r.episode_best()) eps.push_back({{"episode", k}, {"best_score", v}});
    return {{"baseline_score", r.baseline_score},
            {"start_score", r.start_score},
            {"best_score", r.best_score},
            {"best_alive_nodes", r.best_snapshot.alive.size()},
            {"test_baseline", r.test_baseline ? nlohmann::json(*r.test_baseline) : nlohmann::json(nullptr)},
            {"test_best", r.test_best ? nlohmann::json(*r.test_best) : nlohmann::json(nullptr)},
            {"train_rows", r.train_rows},
            {"test_rows", r.test_rows},
            {"budget", r.budget},
            {"steps", r.steps.size()},
            {"episodes", eps},
            {"timing",
             {{"clustering", r.timing.clustering},
              {"decision", r.timing.decision},
              {"roadmap_update", r.timing.roadmap_update},
              {"reward_estimation", r.timing.reward_estimation},
              {"learning", r.timing.learning},
              {"pruning", r.timing.pruning},
              {"wall", r.wall_seconds}}}};
}

/// Applies TCTO_SEED from the environment, when set, as the run seed.
inline void apply_seed_env(RunConfig& c) {
    if (const char* s = std::getenv("TCTO_SEED")) {
        try {
            c.seed = std::stoull(s);
        } catch (const std::exception&) {
            throw std::invalid_argument("TCTO_SEED must be an unsigned integer");
        }
    }
}

/// Train-split column values of roadmap nodes, kept in step with the
/// roadmap's alive set.
class FeatureCache {
public:
    explicit FeatureCache(const Dataset& d) : data_(&d) {
        for (std::size_t j = 0; j < d.features(); ++j) values_[static_cast<NodeId>(j)] = d.column(j);
    }

    const Column& get(const Roadmap& r, NodeId id) {
        if (auto it = values_.find(id); it != values_.end()) return it->second;
        const auto& n = r.node(id);
        Column v;
        if (n.is_root()) {
            v = data_->column(static_cast<std::size_t>(id));
        } else {
            std::vector<const Column*> pv;
            for (NodeId p : n.parents) pv.push_back(&get(r, p));
            v = compute_node(n, pv);
        }
        return values_.emplace(id, std::move(v)).first->second;
    }

    void put(NodeId id, Column v) { values_[id] = std::move(v); }

    /// Drops columns of dead nodes.
    void evict_dead(const Roadmap& r) {
        for (auto it = values_.begin(); it != values_.end();)
            it = r.is_alive(it->first) ? std::next(it) : values_.erase(it);
    }

    FeatureMatrix matrix(const Roadmap& r) {
        FeatureMatrix m;
        for (NodeId id : r.alive_ids()) m.push_back(get(r, id));
        return m;
    }

private:
    const Dataset* data_;
    std::map<NodeId, Column> values_;
};

class Pipeline {
public:
    /// `roadmap`/`checkpoint` resume from saved state; otherwise a fresh
    /// roadmap and freshly initialized networks are used.
    Pipeline(Dataset train, std::optional<Dataset> test, RunConfig cfg, std::optional<Roadmap> roadmap = std::nullopt,
             std::optional<Checkpoint> checkpoint = std::nullopt)
        : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)),
          roadmap_(roadmap ? std::move(*roadmap) : init_roadmap(train_)), cache_(train_),
          rng_(derive_seed(cfg_.seed, 101)), init_rng_(derive_seed(cfg_.seed, 202)) {
        cfg_.validate();
        if (roadmap_.original_columns() != train_.names())
            throw DataError("roadmap was built for different columns than the dataset");
        budget_ = cfg_.budget_for(train_.features());
        if (budget_ < train_.features()) throw std::invalid_argument("node budget below original feature count");
        emb_dim_ = cfg_.use_rgcn ? kEmbedDim : kStatDim;
        if (checkpoint) {
            rgcn_ = checkpoint->rgcn;
            op_embed_ = checkpoint->op_embed;
            if (!checkpoint->agents) throw SchemaError("checkpoint has no agents");
            agents_ = *checkpoint->agents;
            if (agents_->head.prediction.input_dim() != agent_input_dim(AgentRole::head, emb_dim_, kEmbedDim))
                throw SchemaError("checkpoint agents do not match the configured state width");
        } else {
            rgcn_ = RgcnParams::standard(init_rng_);
            op_embed_ = OpEmbedParams::random(kEmbedDim, init_rng_);
            agents_ = AgentBundle::create(emb_dim_, kEmbedDim, init_rng_);
        }
        // root-only state used to start every episode
        root_snapshot_.node_count = train_.features();
        for (std::size_t j = 0; j < train_.features(); ++j) root_snapshot_.alive.push_back(static_cast<NodeId>(j));
    }

    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    const RunConfig& config() const { return cfg_; }
    const Roadmap& roadmap() const { return roadmap_; }
    Roadmap& roadmap() { return roadmap_; }
    const Dataset& train_data() const { return train_; }
    std::size_t budget() const { return budget_; }
    const RgcnParams& rgcn() const { return rgcn_; }
    const OpEmbedParams& op_embed() const { return op_embed_; }
    const AgentBundle& agents() const { return *agents_; }
    double current_score() const { return score_; }

    /// Incrementally maintained train matrix of the alive nodes.
    FeatureMatrix current_matrix() { return cache_.matrix(roadmap_); }

    double score_matrix(const FeatureMatrix& m) const {
        EvalConfig e = cfg_.eval;
        return evaluate(m, train_.labels(), train_.task(), e);
    }

    nlohmann::json checkpoint_json() const { return checkpoint_to_json(rgcn_, op_embed_, *agents_); }

    /// Exploration episodes with learning, followed by final hold-out scoring.
    RunReport run_training() {
        const auto t0 = Clock::now();
        RunReport rep;
        start_run(rep);
        const std::size_t total = cfg_.episodes * cfg_.steps_per_episode;
        std::size_t global = 0;
        for (std::size_t e = 0; e < cfg_.episodes; ++e) {
            begin_episode(root_snapshot_, baseline_);
            const bool node_wise =
                static_cast<double>(e) < cfg_.node_wise_phase_fraction * static_cast<double>(cfg_.episodes);
            for (std::size_t s = 0; s < cfg_.steps_per_episode; ++s, ++global) {
                double eps = 1.0;
                if (cfg_.policy == PolicyKind::learned) {
                    const double frac = total > 1 ? static_cast<double>(global) / static_cast<double>(total - 1) : 1.0;
                    eps = cfg_.epsilon_start - (cfg_.epsilon_start - cfg_.epsilon_end) * frac;
                }
                const bool last = s + 1 == cfg_.steps_per_episode;
                auto rec = run_step("train", e, s, eps, cfg_.policy == PolicyKind::learned, node_wise, last);
                rep.timing.add(rec.timing);
                rep.steps.push_back(std::move(rec));
                if (cfg_.policy == PolicyKind::learned && (global + 1) % cfg_.target_sync_every == 0) {
                    sync_target(agents_->head);
                    sync_target(agents_->operation);
                    sync_target(agents_->operand);
                }
            }
        }
        finish_run(rep);
        rep.wall_seconds = seconds_since(t0);
        return rep;
    }

    /// Greedy application episodes (epsilon 0, no learning) starting from
    /// the best roadmap, followed by final hold-out scoring.
    RunReport run_application(std::optional<std::size_t> episodes = std::nullopt) {
        const auto t0 = Clock::now();
        RunReport rep;
        start_run(rep);
        const std::size_t count = episodes.value_or(cfg_.application_episodes);
        for (std::size_t e = 0; e < count; ++e) {
            begin_episode(best_, best_.score);
            for (std::size_t s = 0; s < cfg_.steps_per_episode; ++s) {
                auto rec = run_step("apply", e, s, 0.0, false, false, s + 1 == cfg_.steps_per_episode);
                rep.timing.add(rec.timing);
                rep.steps.push_back(std::move(rec));
            }
        }
        finish_run(rep);
        rep.wall_seconds = seconds_since(t0);
        return rep;
    }

private:
    using Clock = std::chrono::steady_clock;

    static double seconds_since(Clock::time_point t) {
        return std::chrono::duration<double>(Clock::now() - t).count();
    }

    /// Everything the agents saw at one decision, kept so the encoder can be
    /// updated once the transition's TD target is known.
    struct DecisionState {
        EncoderInput input;
        std::vector<std::vector<std::size_t>> groups;
        std::size_t head = 0;
        OpId op = OpId::square;
        std::optional<std::size_t> tail;
    };

    struct Pending {
        Transition transition;
        AgentRole role;
    };

    void start_run(RunReport& rep) {
        if (!started_) {
            // Scores the roadmap as given (root-only on a fresh run).
            baseline_ = score_matrix(raw_matrix());
            const double current = score_matrix(cache_.matrix(roadmap_));
            best_ = roadmap_.take_snapshot(current);
            started_ = true;
        }
        rep.baseline_score = baseline_;
        rep.start_score = best_.score;
        rep.budget = budget_;
        rep.train_rows = train_.rows();
        rep.test_rows = test_ ? test_->rows() : 0;
    }

    FeatureMatrix raw_matrix() const { return train_.columns(); }

    void finish_run(RunReport& rep) {
        rep.best_score = best_.score;
        rep.best_snapshot = best_;
        rep.best_roadmap = roadmap_;
        rep.best_roadmap.restore(best_);
        if (test_) {
            rep.test_baseline = holdout_score(train_.columns(), train_.labels(), test_->columns(), test_->labels(),
                                              train_.task(), cfg_.eval);
            rep.test_best = holdout_score(materialize(rep.best_roadmap, train_), train_.labels(),
                                          materialize(rep.best_roadmap, *test_), test_->labels(), train_.task(),
                                          cfg_.eval);
        }
    }

    void begin_episode(const Snapshot& start, double score) {
        roadmap_.restore(start);
        cache_.evict_dead(roadmap_);
        score_ = score;
        pending_.clear();
        previous_.reset();
    }

    std::vector<std::vector<double>> embeddings(const EncoderInput& in) const {
        return cfg_.use_rgcn ? rgcn_forward(in.graph, in.features, rgcn_) : in.features;
    }

    StepRecord run_step(const std::string& phase, std::size_t episode, std::size_t step, double eps, bool learn,
                        bool node_wise_phase, bool last_step) {
        StepRecord rec;
        rec.phase = phase;
        rec.episode = episode;
        rec.step = step;
        rec.epsilon = eps;
        rec.budget = budget_;
        rec.score_before = score_;
        rec.alive_before = roadmap_.alive_count();

        // (1)-(2) encode and cluster
        auto t = Clock::now();
        DecisionState ds;
        ds.input = encoder_input(roadmap_);
        const auto emb = embeddings(ds.input);
        const auto clusters = cluster_roadmap(roadmap_, emb, {cfg_.use_similarity, cfg_.use_structure});
        ds.groups = clusters.groups();
        rec.clusters = clusters.k;
        std::vector<std::vector<double>> reps;
        for (const auto& g : ds.groups) reps.push_back(cluster_rep(emb, g));
        const auto global = global_rep(emb);
        rec.timing.clustering = seconds_since(t);

        // (3)-(5) cascading decisions
        t = Clock::now();
        const auto h_inputs = head_inputs(reps, global);
        ds.head = select_head(agents_->head, reps, global, eps, rng_);
        const auto op_input = operation_input(reps[ds.head], global);
        ds.op = select_operation(agents_->operation, reps[ds.head], global, eps, rng_);
        std::optional<std::vector<double>> operand_input;
        if (operation(ds.op).binary()) {
            if (ds.groups.size() >= 2) {
                const auto op_vec = op_rep(operation(ds.op), op_embed_);
                ds.tail = select_operand(agents_->operand, reps[ds.head], global, op_vec, reps, ds.head, eps, rng_);
                operand_input = concat({&reps[ds.head], &global, &op_vec, &reps[*ds.tail]});
            } else {
                ds.op = best_unary(agents_->operation, reps[ds.head], global);
                rec.unary_fallback = true;
            }
        }
        rec.head = ds.head;
        rec.head_size = ds.groups[ds.head].size();
        rec.op = std::string(operation(ds.op).name);
        rec.tail = ds.tail;
        if (ds.tail) rec.tail_size = ds.groups[*ds.tail].size();
        rec.timing.decision = seconds_since(t);

        // complete the previous step's transitions now that the next state is known
        t = Clock::now();
        if (learn) complete_pending(h_inputs, op_input, reps, global, ds);
        rec.timing.learning = seconds_since(t);

        // (6) group-wise crossing
        t = Clock::now();
        const auto& ids = ds.input.ids;
        const Operation& op = operation(ds.op);
        std::vector<std::vector<NodeId>> candidates;
        for (std::size_t hi : ds.groups[ds.head]) {
            if (!op.binary()) {
                candidates.push_back({ids[hi]});
                continue;
            }
            for (std::size_t ti : ds.groups[*ds.tail]) candidates.push_back({ids[hi], ids[ti]});
        }
        std::size_t accepted = 0;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (accepted >= cfg_.max_new_nodes) {
                rec.truncated = candidates.size() - c;
                break;
            }
            const auto& parents = candidates[c];
            if (auto existing = roadmap_.find(op, parents); existing && roadmap_.is_alive(*existing)) {
                ++rec.duplicates;
                continue;
            }
            std::optional<Column> values =
                op.binary() ? apply_binary(op, cache_.get(roadmap_, parents[0]), cache_.get(roadmap_, parents[1]))
                            : apply_unary(op, cache_.get(roadmap_, parents[0]));
            if (!values) {
                ++rec.rejected;
                continue;
            }
            const auto res = roadmap_.add_node(op, parents, *values);
            cache_.put(res.id, std::move(*values));
            if (res.status == AddStatus::added) ++rec.added;
            else if (res.status == AddStatus::revived) ++rec.revived;
            ++accepted;
        }
        rec.alive_generated = roadmap_.alive_count();
        rec.timing.roadmap_update = seconds_since(t);

        // (7) downstream evaluation
        t = Clock::now();
        double score = score_;
        if (accepted > 0) score = score_matrix(cache_.matrix(roadmap_));
        rec.score_generated = score;
        rec.timing.reward_estimation = seconds_since(t);

        // (10) prune when over budget
        t = Clock::now();
        if (roadmap_.alive_count() > budget_) {
            if (node_wise_phase) {
                rec.prune = PruneKind::node_wise;
                roadmap_.prune_node_wise(train_.labels(), train_.task(), budget_, cache_.matrix(roadmap_));
                cache_.evict_dead(roadmap_);
                score = score_matrix(cache_.matrix(roadmap_));
            } else {
                rec.prune = PruneKind::backtrack;
                roadmap_.restore(best_);
                cache_.evict_dead(roadmap_);
                score = best_.score;
            }
        }
        // only within-budget states become the best roadmap
        if (score > best_.score) best_ = roadmap_.take_snapshot(score);
        rec.alive_after = roadmap_.alive_count();
        rec.score_after = score;
        rec.timing.pruning = seconds_since(t);

        // (8) reward
        std::set<AgentRole> acted{AgentRole::head, AgentRole::operation};
        if (ds.tail) acted.insert(AgentRole::operand);
        const auto reward = step_reward(score_, score, roadmap_, acted, cfg_.w_p, cfg_.w_c);
        rec.r_p = reward.r_p;
        rec.r_c = reward.r_c;
        rec.reward = reward.total;
        rec.shares = reward.shares;
        score_ = score;
        rec.best_score = best_.score;

        // (9) learning
        t = Clock::now();
        if (learn) {
            pending_.push_back({Transition{h_inputs[ds.head], 0, reward.shares.at(AgentRole::head), {}, false},
                                AgentRole::head});
            pending_.push_back(
                {Transition{op_input, static_cast<std::size_t>(ds.op), reward.shares.at(AgentRole::operation), {}, false},
                 AgentRole::operation});
            if (ds.tail)
                pending_.push_back(
                    {Transition{*operand_input, 0, reward.shares.at(AgentRole::operand), {}, false}, AgentRole::operand});
            previous_ = std::move(ds);
            if (last_step) flush_terminal();
            for (AgentRole role : acted)
                if (auto loss = train_step(agents_->get(role), cfg_.batch_size, cfg_.gamma, cfg_.learning_rate, rng_))
                    rec.losses[role] = *loss;
        }
        rec.timing.learning += seconds_since(t);
        return rec;
    }

    /// Fills next-state candidates of the pending transitions, pushes them
    /// into replay and, when enabled, takes one encoder step on their online
    /// TD errors.
    void complete_pending(const std::vector<std::vector<double>>& h_inputs, const std::vector<double>& op_input,
                          const std::vector<std::vector<double>>& reps, const std::vector<double>& global,
                          const DecisionState& next) {
        if (pending_.empty()) return;
        for (auto& p : pending_) {
            auto& tr = p.transition;
            switch (p.role) {
            case AgentRole::head: tr.next_candidates = h_inputs; break;
            case AgentRole::operation: tr.next_candidates = {op_input}; break;
            case AgentRole::operand: {
                if (reps.size() < 2) {
                    tr.terminal = true;
                    break;
                }
                const auto op_vec = op_rep(operation(next.op), op_embed_);
                tr.next_candidates = operand_inputs(reps[next.head], global, op_vec, reps, next.head).inputs;
                break;
            }
            }
        }
        if (cfg_.use_rgcn && cfg_.train_encoder && previous_) encoder_update(*previous_);
        for (auto& p : pending_) push_transition(agents_->get(p.role), std::move(p.transition));
        pending_.clear();
    }

    void flush_terminal() {
        for (auto& p : pending_) {
            p.transition.terminal = true;
            p.transition.next_candidates.clear();
        }
        if (cfg_.use_rgcn && cfg_.train_encoder && previous_) encoder_update(*previous_);
        for (auto& p : pending_) push_transition(agents_->get(p.role), std::move(p.transition));
        pending_.clear();
        previous_.reset();
    }

    /// Backpropagates each pending transition's squared TD error through
    /// its agent's input into the relational encoder and operation table.
    void encoder_update(const DecisionState& ds) {
        const auto cache = rgcn_forward_cached(ds.input.graph, ds.input.features, rgcn_);
        const auto& emb = cache.output;
        const std::size_t m = emb.size();
        std::vector<std::vector<double>> reps;
        for (const auto& g : ds.groups) reps.push_back(cluster_rep(emb, g));
        const auto global = global_rep(emb);
        Rows d_emb(m, std::vector<double>(kEmbedDim, 0.0));
        std::vector<double> d_op(kEmbedDim, 0.0);

        auto spread = [&](const std::vector<double>& g, std::size_t offset, const std::vector<std::size_t>& members) {
            const double a = 1.0 / static_cast<double>(members.size());
            for (std::size_t i : members)
                for (std::size_t t = 0; t < kEmbedDim; ++t) d_emb[i][t] += a * g[offset + t];
        };
        std::vector<std::size_t> all(m);
        for (std::size_t i = 0; i < m; ++i) all[i] = i;

        for (const auto& p : pending_) {
            const Agent& agent = agents_->get(p.role);
            const double y = td_target(agent, p.transition, cfg_.gamma);
            std::vector<double> input;
            const auto op_vec = op_rep(operation(ds.op), op_embed_);
            if (p.role == AgentRole::operand) {
                if (!ds.tail) continue;
                input = concat({&reps[ds.head], &global, &op_vec, &reps[*ds.tail]});
            } else {
                input = concat({&reps[ds.head], &global});
            }
            const auto g = td_input_gradient(agent, input, p.transition.action, y);
            spread(g, 0, ds.groups[ds.head]);
            spread(g, kEmbedDim, all);
            if (p.role == AgentRole::operand) {
                for (std::size_t t = 0; t < kEmbedDim; ++t) d_op[t] += g[2 * kEmbedDim + t];
                spread(g, 3 * kEmbedDim, ds.groups[*ds.tail]);
            }
        }
        auto grads = rgcn_backward(ds.input.graph, cache, rgcn_, d_emb);
        // global L2 clipping; unclipped steps feed back through the state
        // and diverge within a few dozen updates
        double sq = 0.0;
        for (const auto& layer : grads.weights)
            for (const auto& w : layer)
                for (double v : w.data) sq += v * v;
        for (double v : d_op) sq += v * v;
        const double norm = std::sqrt(sq);
        const double scale = norm > kEncoderGradClip ? kEncoderGradClip / norm : 1.0;
        for (auto& layer : grads.weights)
            for (auto& w : layer)
                for (double& v : w.data) v *= scale;
        sgd_step(rgcn_, grads, cfg_.learning_rate);
        const auto row = static_cast<std::size_t>(ds.op);
        for (std::size_t t = 0; t < kEmbedDim; ++t) op_embed_.table(row, t) -= cfg_.learning_rate * scale * d_op[t];
    }

    RunConfig cfg_;
    Dataset train_;
    std::optional<Dataset> test_;
    Roadmap roadmap_;
    FeatureCache cache_;
    Rng rng_;
    Rng init_rng_;
    std::size_t budget_ = 0;
    std::size_t emb_dim_ = kEmbedDim;
    RgcnParams rgcn_;
    OpEmbedParams op_embed_;
    std::optional<AgentBundle> agents_;
    Snapshot root_snapshot_;
    Snapshot best_;
    double baseline_ = 0.0;
    double score_ = 0.0;
    bool started_ = false;
    std::vector<Pending> pending_;
    std::optional<DecisionState> previous_;
};

// --- persistence -------------------------------------------------------------

/// Writes steps.jsonl, summary.json and best_roadmap.json into `dir`.
inline void write_report(const std::filesystem::path& dir, const RunReport& rep) {
    std::filesystem::create_directories(dir);
    std::string lines;
    for (const auto& s : rep.steps) lines += step_to_json(s).dump() + "\n";
    write_text((dir / "steps.jsonl").string(), lines);
    write_text((dir / "summary.json").string(), summary_to_json(rep).dump(2) + "\n");
    write_text((dir / "best_roadmap.json").string(), rep.best_roadmap.export_json() + "\n");
}

}  // namespace tcto
