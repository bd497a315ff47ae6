#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace twostage {

// Objects are numbered controls first (0..N-1), then traces (N..N+M-1).
struct ObjectPair {
  std::size_t i;
  std::size_t j;

  bool operator==(const ObjectPair&) const = default;
};

inline std::size_t pair_count(std::size_t objects) { return objects < 2 ? 0 : objects * (objects - 1) / 2; }

// m = C(N+M, 2) - C(N, 2): pairs touching at least one trace object.
inline std::size_t trace_pair_count(std::size_t n_control, std::size_t n_trace) {
  return pair_count(n_control + n_trace) - pair_count(n_control);
}

// Control-only pairs (i, j), i < j < N, in lexicographic order. This is the
// row order of the design matrix P.
inline std::vector<ObjectPair> control_pairs(std::size_t n_control) {
  std::vector<ObjectPair> out;
  out.reserve(pair_count(n_control));
  for (std::size_t i = 0; i < n_control; ++i)
    for (std::size_t j = i + 1; j < n_control; ++j) out.push_back({i, j});
  return out;
}

// Pairs with j >= N (at least one trace object), lexicographic over (i, j).
inline std::vector<ObjectPair> trace_pairs(std::size_t n_control, std::size_t n_trace) {
  const std::size_t total = n_control + n_trace;
  std::vector<ObjectPair> out;
  out.reserve(trace_pair_count(n_control, n_trace));
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = std::max(i + 1, n_control); j < total; ++j) out.push_back({i, j});
  return out;
}

}  // namespace twostage
