#pragma once

// Downstream scoring: small CART ensembles, k-fold cross-validation and the
// two task metrics (macro-F1, 1 - relative absolute error).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcto/common.hpp"
#include "tcto/information.hpp"
#include "tcto/tabular.hpp"

namespace tcto {

enum class ModelKind { forest, tree, nearest_centroid };

inline const char* model_name(ModelKind m) {
    switch (m) {
    case ModelKind::forest: return "forest";
    case ModelKind::tree: return "tree";
    case ModelKind::nearest_centroid: return "nearest-centroid";
    }
    return "?";
}

inline ModelKind parse_model(const std::string& s) {
    if (s == "forest") return ModelKind::forest;
    if (s == "tree") return ModelKind::tree;
    if (s == "nearest-centroid" || s == "nearest_centroid") return ModelKind::nearest_centroid;
    throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct EvalConfig {
    std::size_t folds = 5;
    std::size_t trees = 10;
    std::size_t max_depth = 8;
    std::uint64_t seed = 0;
    ModelKind model = ModelKind::forest;

    void validate() const {
        if (folds < 2) throw std::invalid_argument("EvalConfig: folds must be >= 2");
        if (trees < 1) throw std::invalid_argument("EvalConfig: trees must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Unweighted mean of per-class F1 over classes 0..C-1 (C inferred from the
/// largest label seen when `classes` is 0). Absent classes score 0.
inline double macro_f1(const std::vector<double>& y_true, const std::vector<double>& y_pred, std::size_t classes = 0) {
    if (y_true.size() != y_pred.size()) throw std::invalid_argument("macro_f1 length mismatch");
    if (classes == 0)
        for (std::size_t i = 0; i < y_true.size(); ++i)
            classes = std::max({classes, static_cast<std::size_t>(y_true[i]) + 1, static_cast<std::size_t>(y_pred[i]) + 1});
    if (classes == 0) return 0.0;
    std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const auto t = static_cast<std::size_t>(y_true[i]);
        const auto p = static_cast<std::size_t>(y_pred[i]);
        if (t == p) {
            tp[t] += 1.0;
        } else {
            if (p < classes) fp[p] += 1.0;
            if (t < classes) fn[t] += 1.0;
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    }
    return sum / static_cast<double>(classes);
}

inline double one_minus_rae(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
    if (y_true.size() != y_pred.size()) throw std::invalid_argument("one_minus_rae length mismatch");
    const double mean = mean_of(y_true);
    double err = 0.0, dev = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        err += std::abs(y_true[i] - y_pred[i]);
        dev += std::abs(y_true[i] - mean);
    }
    if (dev < 1e-12) return 0.0;
    return 1.0 - err / dev;
}

inline double task_metric(const std::vector<double>& y_true, const std::vector<double>& y_pred, TaskKind task,
                          std::size_t classes = 0) {
    return task == TaskKind::classification ? macro_f1(y_true, y_pred, classes) : one_minus_rae(y_true, y_pred);
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(const FeatureMatrix& x, std::size_t row) const {
        int at = 0;
        while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(at)];
            at = x[static_cast<std::size_t>(n.feature)][row] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(at)].value;
    }
};

namespace detail {

struct TreeBuilder {
    const FeatureMatrix& x;
    const std::vector<double>& y;
    TaskKind task;
    std::size_t classes;
    std::size_t max_depth;
    std::size_t mtry;
    Rng& rng;
    Tree tree;

    double leaf_value(const std::vector<std::size_t>& rows) const {
        if (task == TaskKind::regression) {
            double s = 0.0;
            for (auto i : rows) s += y[i];
            return s / static_cast<double>(rows.size());
        }
        std::vector<std::size_t> counts(classes, 0);
        for (auto i : rows) ++counts[static_cast<std::size_t>(y[i])];
        return static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }

    /// Weighted impurity (n * gini, or SSE) of a sample set.
    double impurity(const std::vector<std::size_t>& rows) const {
        const double n = static_cast<double>(rows.size());
        if (task == TaskKind::regression) {
            double s = 0.0, ss = 0.0;
            for (auto i : rows) {
                s += y[i];
                ss += y[i] * y[i];
            }
            return ss - s * s / n;
        }
        std::vector<double> counts(classes, 0.0);
        for (auto i : rows) counts[static_cast<std::size_t>(y[i])] += 1.0;
        double g = 1.0;
        for (double c : counts) g -= (c / n) * (c / n);
        return n * g;
    }

    struct SplitChoice {
        int feature = -1;
        double threshold = 0.0;
        double impurity = 0.0;
    };

    /// Best threshold on one feature, by sweeping the sorted samples.
    std::optional<SplitChoice> best_on_feature(std::vector<std::size_t>& rows, std::size_t f) const {
        const auto& col = x[f];
        std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            return col[a] < col[b] || (col[a] == col[b] && a < b);
        });
        if (col[rows.front()] == col[rows.back()]) return std::nullopt;
        const std::size_t n = rows.size();
        std::optional<SplitChoice> best;
        if (task == TaskKind::regression) {
            double tot_s = 0.0, tot_ss = 0.0;
            for (auto i : rows) {
                tot_s += y[i];
                tot_ss += y[i] * y[i];
            }
            double ls = 0.0, lss = 0.0;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                ls += y[rows[k]];
                lss += y[rows[k]] * y[rows[k]];
                if (col[rows[k]] == col[rows[k + 1]]) continue;
                const double nl = static_cast<double>(k + 1), nr = static_cast<double>(n - k - 1);
                const double rs = tot_s - ls, rss = tot_ss - lss;
                const double imp = (lss - ls * ls / nl) + (rss - rs * rs / nr);
                if (!best || imp < best->impurity)
                    best = SplitChoice{static_cast<int>(f), midpoint(col[rows[k]], col[rows[k + 1]]), imp};
            }
        } else {
            std::vector<double> left(classes, 0.0), right(classes, 0.0);
            for (auto i : rows) right[static_cast<std::size_t>(y[i])] += 1.0;
            double lsq = 0.0, rsq = 0.0;
            for (double c : right) rsq += c * c;
            for (std::size_t k = 0; k + 1 < n; ++k) {
                const auto c = static_cast<std::size_t>(y[rows[k]]);
                lsq += 2.0 * left[c] + 1.0;
                rsq -= 2.0 * right[c] - 1.0;
                left[c] += 1.0;
                right[c] -= 1.0;
                if (col[rows[k]] == col[rows[k + 1]]) continue;
                const double nl = static_cast<double>(k + 1), nr = static_cast<double>(n - k - 1);
                const double imp = (nl - lsq / nl) + (nr - rsq / nr);
                if (!best || imp < best->impurity)
                    best = SplitChoice{static_cast<int>(f), midpoint(col[rows[k]], col[rows[k + 1]]), imp};
            }
        }
        return best;
    }

    static double midpoint(double a, double b) {
        const double m = a + (b - a) / 2.0;
        return (m >= b || !std::isfinite(m)) ? a : m;
    }

    int build(std::vector<std::size_t> rows, std::size_t depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes.back().value = leaf_value(rows);
        if (depth >= max_depth || rows.size() < 2) return id;
        const double parent = impurity(rows);
        if (parent <= 1e-12) return id;

        std::vector<std::size_t> features(x.size());
        std::iota(features.begin(), features.end(), std::size_t{0});
        // Partial Fisher-Yates draw; keep drawing past mtry only while no
        // usable split has been found.
        std::optional<SplitChoice> best;
        for (std::size_t t = 0; t < features.size(); ++t) {
            if (t >= mtry && best) break;
            std::swap(features[t], features[t + rng.index(features.size() - t)]);
            auto cand = best_on_feature(rows, features[t]);
            if (cand && (!best || cand->impurity < best->impurity)) best = cand;
        }
        if (!best || best->impurity >= parent - 1e-12) return id;

        std::vector<std::size_t> left, right;
        const auto& col = x[static_cast<std::size_t>(best->feature)];
        for (auto i : rows) (col[i] <= best->threshold ? left : right).push_back(i);
        if (left.empty() || right.empty()) return id;
        tree.nodes[static_cast<std::size_t>(id)].feature = best->feature;
        tree.nodes[static_cast<std::size_t>(id)].threshold = best->threshold;
        const int l = build(std::move(left), depth + 1);
        const int r = build(std::move(right), depth + 1);
        tree.nodes[static_cast<std::size_t>(id)].left = l;
        tree.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }
};

inline std::size_t infer_classes(const std::vector<double>& y) {
    double hi = 0.0;
    for (double v : y) hi = std::max(hi, v);
    return static_cast<std::size_t>(hi) + 1;
}

}  // namespace detail

/// Fitted downstream model of one of the three kinds.
class Model {
public:
    ModelKind kind = ModelKind::forest;
    TaskKind task = TaskKind::classification;
    std::size_t classes = 0;
    std::vector<Tree> trees;
    // nearest-centroid state
    std::vector<double> center, scale;
    std::vector<std::vector<double>> centroids;
    std::vector<double> centroid_values;

    std::vector<double> predict(const FeatureMatrix& x) const {
        const std::size_t n = x.empty() ? 0 : x[0].size();
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = predict_row(x, i);
        return out;
    }

private:
    double predict_row(const FeatureMatrix& x, std::size_t i) const {
        if (kind == ModelKind::nearest_centroid) return nearest(x, i);
        if (task == TaskKind::regression) {
            double s = 0.0;
            for (const auto& t : trees) s += t.predict(x, i);
            return s / static_cast<double>(trees.size());
        }
        std::vector<std::size_t> votes(classes, 0);
        for (const auto& t : trees) ++votes[static_cast<std::size_t>(t.predict(x, i))];
        return static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }

    double nearest(const FeatureMatrix& x, std::size_t i) const {
        // Terms are summed in sorted order so the distance does not depend
        // on column order.
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        std::vector<double> terms(x.size());
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            for (std::size_t f = 0; f < x.size(); ++f) {
                const double z = (x[f][i] - center[f]) / scale[f] - centroids[c][f];
                terms[f] = z * z;
            }
            std::sort(terms.begin(), terms.end());
            double d = 0.0;
            for (double t : terms) d += t;
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        return centroid_values[best];
    }
};

/// Fits the configured model kind. Forests use bootstrap samples and
/// sqrt(p) candidate features per split; a single tree sees all rows and
/// features.
inline Model fit_model(const FeatureMatrix& x, const std::vector<double>& y, TaskKind task, const EvalConfig& cfg,
                       std::size_t classes = 0) {
    const std::size_t n = y.size();
    if (n == 0) throw std::invalid_argument("fit_model: empty training set");
    for (const auto& c : x)
        if (c.size() != n) throw std::invalid_argument("fit_model: row count mismatch");
    Model m;
    m.kind = cfg.model;
    m.task = task;
    m.classes = task == TaskKind::classification ? std::max(classes, detail::infer_classes(y)) : 0;
    Rng rng(cfg.seed);

    if (cfg.model == ModelKind::nearest_centroid) {
        const std::size_t p = x.size();
        m.center.resize(p);
        m.scale.resize(p);
        for (std::size_t f = 0; f < p; ++f) {
            m.center[f] = mean_of(x[f]);
            const double s = pop_std(x[f]);
            m.scale[f] = s < kEps ? 1.0 : s;
        }
        const auto groups = strata_of(y, task);
        const std::size_t g = task == TaskKind::classification ? m.classes : kRegressionStrata;
        std::vector<std::vector<double>> sums(g, std::vector<double>(p, 0.0));
        std::vector<double> counts(g, 0.0), label_sums(g, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[groups[i]] += 1.0;
            label_sums[groups[i]] += y[i];
            for (std::size_t f = 0; f < p; ++f) sums[groups[i]][f] += (x[f][i] - m.center[f]) / m.scale[f];
        }
        for (std::size_t c = 0; c < g; ++c) {
            if (counts[c] == 0.0) continue;
            for (double& v : sums[c]) v /= counts[c];
            m.centroids.push_back(sums[c]);
            m.centroid_values.push_back(task == TaskKind::classification ? static_cast<double>(c)
                                                                         : label_sums[c] / counts[c]);
        }
        return m;
    }

    const bool forest = cfg.model == ModelKind::forest;
    const std::size_t count = forest ? cfg.trees : 1;
    const std::size_t p = x.size();
    const std::size_t mtry =
        forest ? std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(p)))) : p;
    for (std::size_t t = 0; t < count; ++t) {
        Rng tree_rng(derive_seed(cfg.seed, t + 1));
        std::vector<std::size_t> rows(n);
        if (forest)
            for (auto& r : rows) r = tree_rng.index(n);
        else
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        detail::TreeBuilder b{x, y, task, m.classes, cfg.max_depth, mtry, tree_rng, {}};
        if (p == 0) {
            b.tree.nodes.push_back(TreeNode{});
            b.tree.nodes.back().value = b.leaf_value(rows);
        } else {
            b.build(std::move(rows), 0);
        }
        m.trees.push_back(std::move(b.tree));
    }
    return m;
}

inline Model fit_forest(const FeatureMatrix& x, const std::vector<double>& y, TaskKind task, const EvalConfig& cfg) {
    return fit_model(x, y, task, cfg);
}

inline std::vector<double> predict(const Model& m, const FeatureMatrix& x) { return m.predict(x); }

namespace detail {

inline FeatureMatrix take_rows(const FeatureMatrix& x, const std::vector<std::size_t>& idx) {
    FeatureMatrix out(x.size());
    for (std::size_t f = 0; f < x.size(); ++f) {
        out[f].reserve(idx.size());
        for (auto i : idx) out[f].push_back(x[f][i]);
    }
    return out;
}

}  // namespace detail

/// Seeded k-fold cross-validation; the metric is computed once over the
/// pooled out-of-fold predictions.
inline double evaluate(const FeatureMatrix& x, const std::vector<double>& y, TaskKind task, const EvalConfig& cfg) {
    cfg.validate();
    const std::size_t n = y.size();
    for (const auto& c : x) {
        if (c.size() != n) throw std::invalid_argument("evaluate: row count mismatch");
        if (!all_finite(c)) throw std::invalid_argument("evaluate: non-finite feature value");
    }
    const std::size_t folds = std::min(cfg.folds, n);
    if (folds < 2) throw std::invalid_argument("evaluate: need at least 2 rows");
    const std::size_t classes = task == TaskKind::classification ? detail::infer_classes(y) : 0;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(cfg.seed);
    rng.shuffle(perm);
    std::vector<std::size_t> fold_of(n);
    for (std::size_t p = 0; p < n; ++p) fold_of[perm[p]] = p % folds;

    std::vector<double> pred(n, 0.0);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? te : tr).push_back(i);
        std::vector<double> ytr;
        for (auto i : tr) ytr.push_back(y[i]);
        EvalConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, f + 1);
        const Model m = fit_model(detail::take_rows(x, tr), ytr, task, fold_cfg, classes);
        const auto p = m.predict(detail::take_rows(x, te));
        for (std::size_t k = 0; k < te.size(); ++k) pred[te[k]] = p[k];
    }
    return task_metric(y, pred, task, classes);
}

/// Fit on one matrix, score on another (the final hold-out evaluation).
inline double holdout_score(const FeatureMatrix& x_train, const std::vector<double>& y_train,
                            const FeatureMatrix& x_test, const std::vector<double>& y_test, TaskKind task,
                            const EvalConfig& cfg) {
    cfg.validate();
    const std::size_t classes =
        task == TaskKind::classification ? std::max(detail::infer_classes(y_train), detail::infer_classes(y_test)) : 0;
    EvalConfig fit_cfg = cfg;
    fit_cfg.seed = derive_seed(cfg.seed, 0);
    const Model m = fit_model(x_train, y_train, task, fit_cfg, classes);
    return task_metric(y_test, m.predict(x_test), task, classes);
}

}  // namespace tcto
