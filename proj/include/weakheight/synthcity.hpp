#pragma once

// Procedural desk-scale cities with exact nDSMs, plus the operators that turn
// a high-quality label into the instance-wise (mid) and floor-count (low)
// labels found in the wild.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "weakheight/core.hpp"

namespace weakheight {

struct IntRange {
  int min = 0;
  int max = 0;
};

struct CityStyle {
  std::string name = "city";
  std::uint64_t seed = 0;
  IntRange buildings_per_patch{3, 7};
  IntRange footprint_size{6, 16};
  double height_log_mean = 2.302585092994046;  // ln 10
  double height_log_sigma = 0.5;
  double sun_azimuth_deg = 135.0;  // clockwise from image "up"
  std::vector<float> albedo_palette{0.55f, 0.65f, 0.75f};
  float ground_albedo = 0.35f;
  double noise_std = 0.02;
  double floor_height = 3.0;      // true storey height of the city, meters
  double shadow_scale = 2.0;      // meters of height per pixel of shadow
  double roof_detail_prob = 0.4;  // chance of a rooftop structure per building
};

/// Throws ConfigError naming the first violated constraint.
void validate_style(const CityStyle& style);

struct RoofStructure {
  int top = 0, left = 0, rows = 0, cols = 0;
  double extra_height = 0.0;
};

struct BuildingSpec {
  int top = 0, left = 0, rows = 0, cols = 0;
  double height = 0.0;
  float albedo = 0.0f;
  int shadow_length = 0;  // pixels, round(height / shadow_scale)
  std::optional<RoofStructure> roof;
};

struct SceneLayout {
  std::uint32_t rows = 0, cols = 0;
  std::vector<BuildingSpec> buildings;  // instance id = position + 1
};

/// Building placement for one patch; deterministic in (style.seed, index).
SceneLayout layout_scene(const CityStyle& style, std::size_t patch_index, std::uint32_t rows, std::uint32_t cols);

/// Rasterises a layout into a high-quality patch (image, nDSM, instances).
Patch render_scene(const CityStyle& style, const SceneLayout& layout, std::size_t patch_index);

std::vector<Patch> generate_city(const CityStyle& style, std::size_t n_patches, std::uint32_t rows,
                                 std::uint32_t cols);

/// Per-instance median heights, zero background. Idempotent.
Patch degrade_to_mid(const Patch& patch);

/// Per-instance floors = max(1, round(median / true_floor_height)); stored
/// height = floors * assumed_floor_height.
Patch degrade_to_low(const Patch& patch, double true_floor_height, double assumed_floor_height);

// ---- dataset assembly ---------------------------------------------------

struct CityPlan {
  CityStyle style;
  QualityClass quality = QualityClass::High;  // label quality of train/val data
  int train = 0;
  int val = 0;
  int test = 0;
};

struct SynthPlan {
  std::uint32_t rows = 64;
  std::uint32_t cols = 64;
  double assumed_floor_height = 3.0;
  /// Store test patches with their exact nDSM instead of the city's label
  /// quality (only possible for synthetic data).
  bool truth_test_labels = false;
  std::vector<CityPlan> cities;
};

struct LabeledPatch {
  ManifestEntry entry;
  Patch patch;
};

/// Generates every split of every city. Throws ConfigError("empty dataset")
/// when no patches are requested.
std::vector<LabeledPatch> synthesize(const SynthPlan& plan);

/// Writes patches under `dir` plus `dir/manifest.json`.
DatasetManifest write_dataset(const std::vector<LabeledPatch>& data, const std::filesystem::path& dir);

/// Loads every patch referenced by a manifest.
std::vector<LabeledPatch> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace weakheight
