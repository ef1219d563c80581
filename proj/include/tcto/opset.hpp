#pragma once

// The fixed operation set and safe column-level application of it.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tcto/common.hpp"

namespace tcto {

enum class OpId : int {
    square = 0,
    cube,
    sqrt,
    sin,
    cos,
    log,
    exp,
    tanh,
    sigmoid,
    reciprocal,
    stand_scaler,
    minmax_scaler,
    quantile_transform,
    add,
    subtract,
    multiply,
    divide,
};

inline constexpr std::size_t kNumOps = 17;

struct Operation {
    OpId id;
    std::string_view name;
    int arity;
    bool commutative;

    int index() const { return static_cast<int>(id); }
    bool binary() const { return arity == 2; }
};

inline constexpr std::array<Operation, kNumOps> kOperations{{
    {OpId::square, "square", 1, false},
    {OpId::cube, "cube", 1, false},
    {OpId::sqrt, "sqrt", 1, false},
    {OpId::sin, "sin", 1, false},
    {OpId::cos, "cos", 1, false},
    {OpId::log, "log", 1, false},
    {OpId::exp, "exp", 1, false},
    {OpId::tanh, "tanh", 1, false},
    {OpId::sigmoid, "sigmoid", 1, false},
    {OpId::reciprocal, "reciprocal", 1, false},
    {OpId::stand_scaler, "stand_scaler", 1, false},
    {OpId::minmax_scaler, "minmax_scaler", 1, false},
    {OpId::quantile_transform, "quantile_transform", 1, false},
    {OpId::add, "add", 2, true},
    {OpId::subtract, "subtract", 2, false},
    {OpId::multiply, "multiply", 2, true},
    {OpId::divide, "divide", 2, false},
}};

inline const Operation& operation(OpId id) { return kOperations[static_cast<std::size_t>(id)]; }

inline const Operation& operation(int index) {
    if (index < 0 || index >= static_cast<int>(kNumOps))
        throw std::out_of_range("operation index " + std::to_string(index));
    return kOperations[static_cast<std::size_t>(index)];
}

inline std::optional<OpId> op_from_name(std::string_view name) {
    for (const auto& op : kOperations)
        if (op.name == name) return op.id;
    return std::nullopt;
}

inline constexpr double kExpClamp = 50.0;
inline constexpr double kMinOutputStd = 1e-12;

namespace detail {

inline double guard_denominator(double x) { return x + (x >= 0.0 ? kEps : -kEps); }

/// Average-tie ranks (0-based) scaled to [0, 1].
inline Column quantile_ranks(const Column& v) {
    const std::size_t n = v.size();
    Column out(n, 0.0);
    if (n < 2) return out;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = rank / static_cast<double>(n - 1);
        i = j + 1;
    }
    return out;
}

}  // namespace detail

/// Applies a unary operation without the rejection rule. Column-wise
/// operations (scalers, quantile) use statistics of `v` itself.
inline Column transform_unary(const Operation& op, const Column& v) {
    if (op.arity != 1) throw std::invalid_argument(std::string(op.name) + " is not unary");
    Column out(v.size());
    auto map = [&](auto f) { std::transform(v.begin(), v.end(), out.begin(), f); };
    switch (op.id) {
    case OpId::square: map([](double x) { return x * x; }); break;
    case OpId::cube: map([](double x) { return x * x * x; }); break;
    case OpId::sqrt: map([](double x) { return std::sqrt(std::abs(x)); }); break;
    case OpId::sin: map([](double x) { return std::sin(x); }); break;
    case OpId::cos: map([](double x) { return std::cos(x); }); break;
    case OpId::log: map([](double x) { return std::log(std::abs(x) + kEps); }); break;
    case OpId::exp: map([](double x) { return std::exp(std::clamp(x, -kExpClamp, kExpClamp)); }); break;
    case OpId::tanh: map([](double x) { return std::tanh(x); }); break;
    case OpId::sigmoid: map([](double x) { return 1.0 / (1.0 + std::exp(-x)); }); break;
    case OpId::reciprocal: map([](double x) { return 1.0 / detail::guard_denominator(x); }); break;
    case OpId::stand_scaler: {
        const double mu = mean_of(v);
        double sigma = pop_std(v);
        if (sigma < kEps) sigma = kEps;
        map([&](double x) { return (x - mu) / sigma; });
        break;
    }
    case OpId::minmax_scaler: {
        if (v.empty()) break;
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double lo_v = *lo;
        double range = *hi - *lo;
        if (range == 0.0) range = kEps;
        map([&](double x) { return (x - lo_v) / range; });
        break;
    }
    case OpId::quantile_transform: out = detail::quantile_ranks(v); break;
    default: throw std::invalid_argument(std::string(op.name) + " is not unary");
    }
    return out;
}

inline Column transform_binary(const Operation& op, const Column& a, const Column& b) {
    if (op.arity != 2) throw std::invalid_argument(std::string(op.name) + " is not binary");
    if (a.size() != b.size()) throw std::invalid_argument("binary operand length mismatch");
    Column out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op.id) {
        case OpId::add: out[i] = a[i] + b[i]; break;
        case OpId::subtract: out[i] = a[i] - b[i]; break;
        case OpId::multiply: out[i] = a[i] * b[i]; break;
        case OpId::divide: out[i] = a[i] / detail::guard_denominator(b[i]); break;
        default: throw std::invalid_argument(std::string(op.name) + " is not binary");
        }
    }
    return out;
}

/// True when a generated column must be discarded.
inline bool is_degenerate(const Column& v) { return !all_finite(v) || pop_std(v) < kMinOutputStd; }

/// nullopt means the output was rejected (non-finite or near-constant).
inline std::optional<Column> apply_unary(const Operation& op, const Column& v) {
    Column out = transform_unary(op, v);
    if (is_degenerate(out)) return std::nullopt;
    return out;
}

inline std::optional<Column> apply_binary(const Operation& op, const Column& a, const Column& b) {
    Column out = transform_binary(op, a, b);
    if (is_degenerate(out)) return std::nullopt;
    return out;
}

inline std::vector<double> op_one_hot(const Operation& op) {
    std::vector<double> e(kNumOps, 0.0);
    e[static_cast<std::size_t>(op.index())] = 1.0;
    return e;
}

}  // namespace tcto
