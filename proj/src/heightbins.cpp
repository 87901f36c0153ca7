#include "weakheight/heightbins.hpp"

#include <limits>

namespace weakheight {

SidBins sid_thresholds(double h_min, double h_max, int classes) {
  if (!(h_min > 0.0)) throw ConfigError("h_min must be positive (log undefined)");
  if (!(h_max > h_min)) throw ConfigError("h_max must exceed h_min");
  if (classes < 1) throw ConfigError("number of height classes must be at least 1");
  SidBins bins{h_min, h_max, classes, {}};
  bins.thresholds.resize(static_cast<std::size_t>(classes) + 1);
  const double log_min = std::log(h_min);
  const double step = std::log(h_max / h_min) / classes;
  for (int k = 0; k <= classes; ++k) bins.thresholds[static_cast<std::size_t>(k)] = std::exp(log_min + step * k);
  bins.thresholds.front() = h_min;
  bins.thresholds.back() = h_max;
  return bins;
}

int height_to_class(double h, const SidBins& bins) {
  if (std::isnan(h)) throw DataError("height_to_class: NaN height");
  const auto& t = bins.thresholds;
  if (h < t.front()) return 0;
  if (h >= t.back()) return bins.classes - 1;
  // first edge strictly greater than h; h lies in [t[k], t[k+1])
  const auto it = std::upper_bound(t.begin(), t.end(), h);
  return static_cast<int>(it - t.begin()) - 1;
}

std::vector<int> heights_to_classes(std::span<const float> heights, const SidBins& bins) {
  std::vector<int> out(heights.size());
  for (std::size_t i = 0; i < heights.size(); ++i) out[i] = height_to_class(heights[i], bins);
  return out;
}

std::size_t sample_size(std::size_t n, double fraction) {
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, n);
}

PairBudget pair_budget(std::span<const std::size_t> class_counts, std::size_t budget) {
  PairBudget plan;
  plan.present_classes = class_counts.size();
  if (plan.present_classes < 2) return plan;
  plan.pair_types = plan.present_classes * (plan.present_classes - 1) / 2;
  plan.per_type = std::max<std::uint64_t>(1, budget / plan.pair_types);
  std::vector<std::size_t> sorted(class_counts.begin(), class_counts.end());
  std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end());
  plan.min_cross = static_cast<std::uint64_t>(sorted[0]) * sorted[1];
  plan.drawn = std::min(plan.per_type, plan.min_cross);
  return plan;
}

}  // namespace weakheight
