#pragma once

// Building-wise evaluation under the LoD-1 assumption: each building is
// reduced to its median height in both prediction and label.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace weakheight {

struct BuildingRecord {
  std::string patch_id;
  std::uint32_t instance_id = 0;
  double gt_median = 0.0;
  double pred_median = 0.0;
  std::size_t n_pixels = 0;
};

/// Median of `heights` over each instance id > 0; background is ignored.
std::map<std::uint32_t, double> building_medians(std::span<const float> heights,
                                                 std::span<const std::uint32_t> instances);

std::vector<BuildingRecord> building_records(const std::string& patch_id, std::span<const float> pred,
                                             std::span<const float> gt, std::span<const std::uint32_t> instances);

/// sqrt(mean((pred_median - gt_median)^2)); throws std::domain_error when empty.
double building_rmse(std::span<const BuildingRecord> records);

enum class DomainGroup { In, Out };

DomainGroup domain_group_from_string(const std::string& label);
std::string to_string(DomainGroup g);

struct SetResult {
  std::vector<BuildingRecord> records;
  DomainGroup group = DomainGroup::In;
};

struct MetricsReport {
  std::map<std::string, double> per_set_rmse;
  std::map<std::string, DomainGroup> per_set_group;
  std::map<std::string, std::size_t> n_buildings;
  double in_domain_avg = 0.0;
  double out_domain_avg = 0.0;
  double combined_avg = 0.0;
};

/// Pools buildings within each set; group and combined averages are
/// unweighted means over sets. A group without sets reports the combined
/// average.
MetricsReport grouped_report(const std::map<std::string, SetResult>& sets);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
/// Columns: set, group, n_buildings, rmse_m.
std::string report_to_csv(const MetricsReport& report);
std::string records_to_csv(std::span<const BuildingRecord> records);

struct RenderedMaps {
  std::filesystem::path pred_png;
  std::filesystem::path gt_png;
  std::filesystem::path error_png;
  std::filesystem::path records_csv;
};

/// Writes `<prefix>_pred.png` and `<prefix>_gt.png` on a shared colour scale,
/// `<prefix>_error.png` (signed, zero at the palette midpoint) and
/// `<prefix>_buildings.csv`.
RenderedMaps render_maps(std::span<const float> pred, std::span<const float> gt,
                         std::span<const std::uint32_t> instances, std::uint32_t rows, std::uint32_t cols,
                         const std::filesystem::path& prefix);

/// Single colourised height map scaled to [lo, hi].
void write_height_png(std::span<const float> values, std::uint32_t rows, std::uint32_t cols, double lo, double hi,
                      const std::filesystem::path& path);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Sequential palette, t in [0, 1].
Rgb height_color(double t);
/// Diverging palette, t in [-1, 1]; t = 0 is neutral.
Rgb error_color(double t);

}  // namespace weakheight
