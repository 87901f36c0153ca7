#pragma once

// Log-spaced ("space increasing") height discretisation and the two
// height-balanced samplers: pixels for the soft height loss, pixel pairs for
// the ordinal constraints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "weakheight/errors.hpp"
#include "weakheight/rng.hpp"

namespace weakheight {

struct SidBins {
  double h_min = 1.0;
  double h_max = 150.0;
  int classes = 20;                // K
  std::vector<double> thresholds;  // K + 1 edges, thresholds[0] = h_min
};

/// thresholds[k] = exp(log h_min + k * log(h_max / h_min) / K), endpoints exact.
SidBins sid_thresholds(double h_min, double h_max, int classes);

/// Left-closed bin lookup; heights below h_min (background included) fall in
/// class 0 and heights at or above h_max in class K-1. NaN is rejected.
int height_to_class(double h, const SidBins& bins);

std::vector<int> heights_to_classes(std::span<const float> heights, const SidBins& bins);

/// Number of pixels drawn for a sampling fraction: max(1, floor(fraction * n)).
std::size_t sample_size(std::size_t n, double fraction);

/// k distinct values from [0, total) in draw order (Floyd's algorithm).
template <Engine64 G>
std::vector<std::uint64_t> sample_without_replacement(std::uint64_t total, std::uint64_t k, G& rng) {
  std::vector<std::uint64_t> out;
  out.reserve(k);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(k * 2);
  for (std::uint64_t j = total - k; j < total; ++j) {
    const std::uint64_t t = draw_below(rng, j + 1);
    const std::uint64_t pick = chosen.contains(t) ? j : t;
    chosen.insert(pick);
    out.push_back(pick);
  }
  return out;
}

/// Height-stratified pixel subset. Pixels are ranked by (height, index); the
/// rank axis is cut into |S| consecutive intervals of n/|S| and one pixel is
/// drawn uniformly from each.
template <typename T, Engine64 G>
std::vector<std::size_t> balanced_pixel_sample(std::span<const T> heights, double fraction, G& rng) {
  if (heights.empty()) throw ConfigError("balanced_pixel_sample: empty height map");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("sampling fraction must lie in (0, 1]");
  const std::size_t n = heights.size();
  const std::size_t m = sample_size(n, fraction);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return heights[a] < heights[b]; });
  std::vector<std::size_t> picked;
  picked.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i * n / m;
    const std::size_t hi = (i + 1) * n / m;
    picked.push_back(order[lo + draw_below(rng, hi - lo)]);
  }
  return picked;
}

/// Uniform subset of the same size as balanced_pixel_sample (ablation mode).
template <Engine64 G>
std::vector<std::size_t> random_pixel_sample(std::size_t n, double fraction, G& rng) {
  if (n == 0) throw ConfigError("random_pixel_sample: empty height map");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("sampling fraction must lie in (0, 1]");
  const auto draws = sample_without_replacement(n, sample_size(n, fraction), rng);
  return {draws.begin(), draws.end()};
}

struct PixelPair {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  int class_a = 0;
  int class_b = 0;

  bool operator==(const PixelPair&) const = default;
};

/// Sampled pairs; class_a != class_b for every stored pair.
struct PixelPairSet {
  std::vector<PixelPair> pairs;
  std::vector<std::string> diagnostics;
};

/// Budget split used by balanced_pair_sample, exposed for inspection.
struct PairBudget {
  std::size_t present_classes = 0;  // M
  std::size_t pair_types = 0;       // M (M - 1) / 2
  std::uint64_t per_type = 0;       // N_c = max(1, floor(S / pair_types))
  std::uint64_t min_cross = 0;      // product of the two smallest class counts
  std::uint64_t drawn = 0;          // min(per_type, min_cross)
};

PairBudget pair_budget(std::span<const std::size_t> class_counts, std::size_t budget);

/// Pairs balanced over every unordered pair of present height classes: each
/// type receives the same number of pairs, drawn without replacement from
/// that type's cross product. Fewer than two classes yields an empty set.
template <Engine64 G>
PixelPairSet balanced_pair_sample(std::span<const int> classes, std::size_t budget, G& rng) {
  if (budget == 0) throw ConfigError("pair budget must be at least 1");
  PixelPairSet result;
  int max_class = -1;
  for (int c : classes) {
    if (c < 0) throw ConfigError("negative height class");
    max_class = std::max(max_class, c);
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_class + 1));
  for (std::size_t i = 0; i < classes.size(); ++i) members[static_cast<std::size_t>(classes[i])].push_back(i);

  std::vector<int> present;
  std::vector<std::size_t> counts;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (!members[c].empty()) {
      present.push_back(static_cast<int>(c));
      counts.push_back(members[c].size());
    }
  }
  if (present.size() < 2) {
    result.diagnostics.emplace_back("fewer than two height classes present; no ordinal pairs");
    return result;
  }
  const PairBudget plan = pair_budget(counts, budget);
  result.pairs.reserve(plan.drawn * plan.pair_types);
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      const auto& lhs = members[static_cast<std::size_t>(present[a])];
      const auto& rhs = members[static_cast<std::size_t>(present[b])];
      const std::uint64_t cross = static_cast<std::uint64_t>(lhs.size()) * rhs.size();
      for (std::uint64_t k : sample_without_replacement(cross, plan.drawn, rng)) {
        result.pairs.push_back({lhs[k / rhs.size()], rhs[k % rhs.size()], present[a], present[b]});
      }
    }
  }
  return result;
}

/// Unbalanced alternative: `budget` uniformly drawn pixel pairs, equal-class
/// draws rejected (bounded retries).
template <Engine64 G>
PixelPairSet random_pair_sample(std::span<const int> classes, std::size_t budget, G& rng) {
  PixelPairSet result;
  const std::size_t n = classes.size();
  if (n < 2) return result;
  const std::size_t max_attempts = budget * 8;
  for (std::size_t attempt = 0; attempt < max_attempts && result.pairs.size() < budget; ++attempt) {
    const std::size_t i = draw_below(rng, n);
    const std::size_t j = draw_below(rng, n);
    if (classes[i] != classes[j]) result.pairs.push_back({i, j, classes[i], classes[j]});
  }
  if (result.pairs.empty()) result.diagnostics.emplace_back("no unequal-class pairs found");
  return result;
}

}  // namespace weakheight
