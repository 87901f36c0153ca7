#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace weakheight {

/// Median of a non-empty sample; an even count yields the mean of the two
/// middle values. Takes the sample by value because it reorders it.
inline double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Pixel values of `map` grouped by non-zero instance id.
template <typename T>
std::map<std::uint32_t, std::vector<double>> group_by_instance(std::span<const T> map,
                                                               std::span<const std::uint32_t> instances) {
  std::map<std::uint32_t, std::vector<double>> groups;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i] != 0) groups[instances[i]].push_back(static_cast<double>(map[i]));
  }
  return groups;
}

}  // namespace weakheight
