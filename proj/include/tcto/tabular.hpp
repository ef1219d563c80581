#pragma once

// Dataset ingestion, stratified splitting and descriptive-statistics
// embeddings for feature columns.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tcto/common.hpp"

namespace tcto {

enum class TaskKind { classification, regression };

inline const char* task_name(TaskKind t) {
    return t == TaskKind::classification ? "cls" : "reg";
}

inline TaskKind parse_task(const std::string& s) {
    if (s == "cls" || s == "classification") return TaskKind::classification;
    if (s == "reg" || s == "regression") return TaskKind::regression;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

/// Immutable feature table with a label vector.
///
/// Classification labels are stored as exact integers 0..C-1 in double form.
class Dataset {
public:
    Dataset(std::vector<std::string> names, FeatureMatrix columns, std::vector<double> labels,
            TaskKind task)
        : names_(std::move(names)), columns_(std::move(columns)), labels_(std::move(labels)),
          task_(task) {
        validate();
    }

    const std::vector<std::string>& names() const { return names_; }
    const FeatureMatrix& columns() const { return columns_; }
    const Column& column(std::size_t j) const { return columns_.at(j); }
    const std::vector<double>& labels() const { return labels_; }
    TaskKind task() const { return task_; }
    std::size_t rows() const { return labels_.size(); }
    std::size_t features() const { return columns_.size(); }
    /// Number of classes (0 for regression).
    std::size_t num_classes() const { return num_classes_; }

    /// Row subset in the given index order. Keeps the class count of the parent.
    Dataset subset(const std::vector<std::size_t>& idx) const {
        FeatureMatrix cols(columns_.size());
        for (std::size_t j = 0; j < columns_.size(); ++j) {
            cols[j].reserve(idx.size());
            for (std::size_t i : idx) cols[j].push_back(columns_[j].at(i));
        }
        std::vector<double> y;
        y.reserve(idx.size());
        for (std::size_t i : idx) y.push_back(labels_.at(i));
        return Dataset(names_, std::move(cols), std::move(y), task_, num_classes_);
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.names_ == b.names_ && a.columns_ == b.columns_ && a.labels_ == b.labels_ &&
               a.task_ == b.task_ && a.num_classes_ == b.num_classes_;
    }

private:
    Dataset(std::vector<std::string> names, FeatureMatrix columns, std::vector<double> labels,
            TaskKind task, std::size_t classes)
        : names_(std::move(names)), columns_(std::move(columns)), labels_(std::move(labels)),
          task_(task), num_classes_(classes) {
        if (names_.size() != columns_.size())
            throw DataError("column name count does not match column count");
        for (const auto& c : columns_)
            if (c.size() != labels_.size()) throw DataError("ragged columns");
    }

    void validate() {
        if (names_.size() != columns_.size())
            throw DataError("column name count does not match column count");
        if (labels_.size() < 2) throw DataError("dataset needs at least 2 rows");
        for (const auto& c : columns_) {
            if (c.size() != labels_.size()) throw DataError("ragged columns");
            if (!all_finite(c)) throw DataError("non-finite feature value");
        }
        if (!all_finite(labels_)) throw DataError("non-finite label");
        if (task_ == TaskKind::classification) {
            double hi = 0.0;
            for (double y : labels_) {
                if (y < 0.0 || y != std::floor(y))
                    throw DataError("classification labels must be non-negative integers");
                hi = std::max(hi, y);
            }
            num_classes_ = static_cast<std::size_t>(hi) + 1;
            if (num_classes_ < 2) throw DataError("classification needs at least 2 classes");
        }
    }

    std::vector<std::string> names_;
    FeatureMatrix columns_;
    std::vector<double> labels_;
    TaskKind task_;
    std::size_t num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

/// RFC-4180 record splitter. Handles quoted fields with embedded separators,
/// doubled quotes and line breaks. A trailing CR before LF is dropped.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto end_record = [&] {
        record.push_back(std::move(field));
        field.clear();
        // Skip blank lines.
        if (!(record.size() == 1 && record[0].empty() && !field_started)) records.push_back(record);
        record.clear();
        field_started = false;
    };
    while (i < n) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
            } else {
                field += c;
            }
            ++i;
            continue;
        }
        if (c == '"') {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            field_started = true;
        } else if (c == '\r' && i + 1 < n && text[i + 1] == '\n') {
            // handled by the '\n' branch on the next iteration
        } else if (c == '\n') {
            end_record();
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) throw DataError("unterminated quoted field");
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

/// Strict parse of a finite real; false on junk, empty or non-finite.
inline bool parse_real(const std::string& raw, double& out) {
    const std::string s = trim(raw);
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace detail

struct CsvLoad {
    Dataset data;
    std::size_t dropped_rows = 0;
    /// Original label strings in class-index order (classification only).
    std::vector<std::string> class_names;
};

inline CsvLoad load_csv(const std::string& path, TaskKind task, const std::string& label_column) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
        text.erase(0, 3);

    auto records = detail::parse_csv(text);
    if (records.empty()) throw DataError("'" + path + "' has no header row");
    const auto& header = records.front();
    std::size_t label_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (detail::trim(header[j]) == label_column) label_idx = j;
    if (label_idx == header.size())
        throw DataError("label column '" + label_column + "' not found in '" + path + "'");

    std::vector<std::string> names;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_idx) names.push_back(detail::trim(header[j]));

    FeatureMatrix cols(names.size());
    std::vector<double> labels;
    std::vector<std::string> class_names;
    std::unordered_map<std::string, std::size_t> class_index;
    std::size_t dropped = 0;

    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != header.size()) {
            ++dropped;
            continue;
        }
        std::vector<double> row;
        row.reserve(names.size());
        bool ok = true;
        for (std::size_t j = 0; j < rec.size() && ok; ++j) {
            if (j == label_idx) continue;
            double x;
            ok = detail::parse_real(rec[j], x);
            row.push_back(x);
        }
        double y = 0.0;
        std::string label_text = detail::trim(rec[label_idx]);
        if (ok) {
            if (task == TaskKind::regression)
                ok = detail::parse_real(label_text, y);
            else
                ok = !label_text.empty();
        }
        if (!ok) {
            ++dropped;
            continue;
        }
        if (task == TaskKind::classification) {
            auto [it, inserted] = class_index.emplace(label_text, class_names.size());
            if (inserted) class_names.push_back(label_text);
            y = static_cast<double>(it->second);
        }
        for (std::size_t j = 0; j < row.size(); ++j) cols[j].push_back(row[j]);
        labels.push_back(y);
    }
    if (labels.size() < 2)
        throw DataError("'" + path + "' has fewer than 2 usable rows");
    if (task == TaskKind::classification && class_names.size() < 2)
        throw DataError("'" + path + "' has a single class");
    return CsvLoad{Dataset(std::move(names), std::move(cols), std::move(labels), task), dropped,
                   std::move(class_names)};
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct Split {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kRegressionStrata = 5;

/// Stratum of each row: the class for classification, one of five
/// equal-width label ranges for regression.
inline std::vector<std::size_t> strata_of(const std::vector<double>& y, TaskKind task) {
    std::vector<std::size_t> s(y.size());
    if (task == TaskKind::classification) {
        for (std::size_t i = 0; i < y.size(); ++i) s[i] = static_cast<std::size_t>(y[i]);
        return s;
    }
    const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
    const double lo = *lo_it;
    const double width = (*hi_it - lo) / static_cast<double>(kRegressionStrata);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (width <= 0.0) {
            s[i] = 0;
            continue;
        }
        const auto b = static_cast<std::size_t>(std::floor((y[i] - lo) / width));
        s[i] = std::min(b, kRegressionStrata - 1);
    }
    return s;
}

inline Split stratified_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("test_fraction must lie in (0, 1)");
    const auto strata = strata_of(d.labels(), d.task());
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> train, test;
    std::vector<std::string> warnings;
    for (auto& [key, members] : groups) {
        if (members.size() < 2) {
            warnings.push_back(std::string(d.task() == TaskKind::classification ? "class " : "range ") +
                               std::to_string(key) + " has fewer than 2 members; kept in train");
            train.insert(train.end(), members.begin(), members.end());
            continue;
        }
        rng.shuffle(members);
        auto take = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(members.size())));
        take = std::min(take, members.size() - 1);
        test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    if (train.size() < 2 || test.size() < 2)
        throw DataError("split leaves fewer than 2 rows on one side");
    return Split{d.subset(train), d.subset(test), train, test, std::move(warnings)};
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

inline constexpr std::size_t kStatDim = 7;

/// mean, std, min, max, Q1, median, Q3
using StatEmbedding = std::array<double, kStatDim>;

/// Type-7 quantile of already-sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

/// Computed from sorted values, so the result is exactly permutation invariant.
inline StatEmbedding column_stats(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("column_stats of an empty vector");
    std::vector<double> s(v);
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double sum = 0.0;
    for (double x : s) sum += x;
    const double mean = sum / n;
    double ss = 0.0;
    for (double x : s) ss += (x - mean) * (x - mean);
    return {mean,
            std::sqrt(ss / n),
            s.front(),
            s.back(),
            sorted_quantile(s, 0.25),
            sorted_quantile(s, 0.5),
            sorted_quantile(s, 0.75)};
}

}  // namespace tcto
