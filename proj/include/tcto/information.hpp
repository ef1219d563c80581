#pragma once

// Plug-in mutual information between a real feature and the label.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tcto/tabular.hpp"

namespace tcto {

inline constexpr std::size_t kMaxMiBins = 20;

/// Equal-frequency bin of each value. Tied values always share the bin of the
/// first rank in their tie group, so a constant column occupies one bin.
inline std::vector<std::size_t> equal_frequency_bins(const std::vector<double>& v, std::size_t bins) {
    const std::size_t n = v.size();
    std::vector<std::size_t> out(n, 0);
    if (n == 0 || bins <= 1) return out;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::size_t group_bin = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (r == 0 || v[order[r]] != v[order[r - 1]]) group_bin = r * bins / n;
        out[order[r]] = group_bin;
    }
    return out;
}

inline std::size_t mi_bin_count(std::size_t n) {
    const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    return std::max<std::size_t>(1, std::min(kMaxMiBins, root));
}

/// I(v; y) in nats. Classification labels are used as-is; regression labels
/// are binned into the same five equal-width ranges used for splitting.
inline double mutual_information(const std::vector<double>& v, const std::vector<double>& y, TaskKind task) {
    if (v.size() != y.size()) throw std::invalid_argument("mutual_information length mismatch");
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    const auto fx = equal_frequency_bins(v, mi_bin_count(n));
    const auto fy = strata_of(y, task);

    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> px, py;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{fx[i], fy[i]}] += 1.0;
        px[fx[i]] += 1.0;
        py[fy[i]] += 1.0;
    }
    const double dn = static_cast<double>(n);
    double mi = 0.0;
    for (const auto& [cell, c] : joint)
        mi += (c / dn) * std::log(c * dn / (px[cell.first] * py[cell.second]));
    return std::max(0.0, mi);
}

}  // namespace tcto
