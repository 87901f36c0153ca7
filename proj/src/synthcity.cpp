#include "weakheight/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "weakheight/errors.hpp"
#include "weakheight/median.hpp"
#include "weakheight/rng.hpp"

namespace weakheight {

namespace {

constexpr int kPlacementAttempts = 200;
constexpr float kShadowDarkening = 0.4f;
constexpr float kRoofDetailBrightening = 0.08f;
constexpr float kChannelTint[3] = {1.0f, 0.95f, 0.88f};

int draw_in(Rng& rng, IntRange range) {
  return range.min + static_cast<int>(draw_below(rng, static_cast<std::uint64_t>(range.max - range.min + 1)));
}

double draw_normal(Rng& rng) {
  const double u1 = draw_unit(rng);
  const double u2 = draw_unit(rng);
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool overlaps(const BuildingSpec& a, int top, int left, int rows, int cols) {
  // one pixel of clearance keeps instances from touching
  return top < a.top + a.rows + 1 && a.top < top + rows + 1 && left < a.left + a.cols + 1 &&
         a.left < left + cols + 1;
}

}  // namespace

void validate_style(const CityStyle& s) {
  if (!(s.height_log_sigma > 0.0)) throw ConfigError("style " + s.name + ": height_log_sigma must be > 0");
  if (!(s.floor_height >= 2.4 && s.floor_height <= 4.5)) {
    throw ConfigError("style " + s.name + ": floor_height must lie in [2.4, 4.5]");
  }
  if (!(s.noise_std >= 0.0)) throw ConfigError("style " + s.name + ": noise_std must be >= 0");
  if (s.buildings_per_patch.min < 0 || s.buildings_per_patch.max < s.buildings_per_patch.min) {
    throw ConfigError("style " + s.name + ": invalid buildings_per_patch range");
  }
  if (s.footprint_size.min < 2 || s.footprint_size.max < s.footprint_size.min) {
    throw ConfigError("style " + s.name + ": invalid footprint_size range");
  }
  if (s.albedo_palette.empty()) throw ConfigError("style " + s.name + ": empty albedo_palette");
  if (!(s.shadow_scale > 0.0)) throw ConfigError("style " + s.name + ": shadow_scale must be > 0");
  if (!(s.roof_detail_prob >= 0.0 && s.roof_detail_prob <= 1.0)) {
    throw ConfigError("style " + s.name + ": roof_detail_prob must lie in [0, 1]");
  }
}

SceneLayout layout_scene(const CityStyle& style, std::size_t patch_index, std::uint32_t rows,
                         std::uint32_t cols) {
  Rng rng(mix_seed(style.seed, patch_index));
  SceneLayout layout{rows, cols, {}};
  const int n_buildings = draw_in(rng, style.buildings_per_patch);
  const int max_rows = std::min<int>(style.footprint_size.max, static_cast<int>(rows) - 2);
  const int max_cols = std::min<int>(style.footprint_size.max, static_cast<int>(cols) - 2);
  const IntRange row_range{std::min(style.footprint_size.min, max_rows), max_rows};
  const IntRange col_range{std::min(style.footprint_size.min, max_cols), max_cols};

  for (int b = 0; b < n_buildings; ++b) {
    BuildingSpec spec;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      spec.rows = draw_in(rng, row_range);
      spec.cols = draw_in(rng, col_range);
      spec.top = draw_in(rng, {0, static_cast<int>(rows) - spec.rows});
      spec.left = draw_in(rng, {0, static_cast<int>(cols) - spec.cols});
      placed = std::none_of(layout.buildings.begin(), layout.buildings.end(), [&](const BuildingSpec& other) {
        return overlaps(other, spec.top, spec.left, spec.rows, spec.cols);
      });
    }
    if (!placed) throw DataError("building placement retries exhausted in style " + style.name);

    spec.height = std::exp(style.height_log_mean + style.height_log_sigma * draw_normal(rng));
    spec.albedo = style.albedo_palette[draw_below(rng, style.albedo_palette.size())];
    spec.shadow_length = static_cast<int>(std::lround(spec.height / style.shadow_scale));
    if (draw_unit(rng) < style.roof_detail_prob && spec.rows >= 6 && spec.cols >= 6) {
      RoofStructure roof;
      roof.rows = std::max(2, spec.rows / 3);
      roof.cols = std::max(2, spec.cols / 3);
      roof.top = spec.top + 1 + draw_in(rng, {0, spec.rows - roof.rows - 2});
      roof.left = spec.left + 1 + draw_in(rng, {0, spec.cols - roof.cols - 2});
      roof.extra_height = 1.5 + 2.5 * draw_unit(rng);
      spec.roof = roof;
    }
    layout.buildings.push_back(spec);
  }
  return layout;
}

Patch render_scene(const CityStyle& style, const SceneLayout& layout, std::size_t patch_index) {
  const int rows = static_cast<int>(layout.rows);
  const int cols = static_cast<int>(layout.cols);
  const std::size_t n = layout.rows * static_cast<std::size_t>(layout.cols);
  Patch patch;
  patch.channels = 3;
  patch.rows = layout.rows;
  patch.cols = layout.cols;
  patch.quality = QualityClass::High;
  patch.domain_tag = style.name;
  patch.height.assign(n, 0.0f);
  patch.instances.assign(n, 0);

  std::vector<float> albedo(n, style.ground_albedo);
  for (std::size_t b = 0; b < layout.buildings.size(); ++b) {
    const auto& spec = layout.buildings[b];
    for (int r = spec.top; r < spec.top + spec.rows; ++r) {
      for (int c = spec.left; c < spec.left + spec.cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        patch.instances[i] = static_cast<std::uint32_t>(b + 1);
        patch.height[i] = static_cast<float>(spec.height);
        albedo[i] = spec.albedo;
      }
    }
    if (spec.roof) {
      const auto& roof = *spec.roof;
      for (int r = roof.top; r < roof.top + roof.rows; ++r) {
        for (int c = roof.left; c < roof.left + roof.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          patch.height[i] = static_cast<float>(spec.height + roof.extra_height);
          albedo[i] = std::min(1.0f, spec.albedo + kRoofDetailBrightening);
        }
      }
    }
  }

  // Shadows fall on the ground, pointing away from the sun.
  const double azimuth = style.sun_azimuth_deg * std::numbers::pi / 180.0;
  const double step_row = std::cos(azimuth);
  const double step_col = -std::sin(azimuth);
  std::vector<char> shadow(n, 0);
  for (const auto& spec : layout.buildings) {
    for (int s = 1; s <= spec.shadow_length; ++s) {
      const int dr = static_cast<int>(std::lround(s * step_row));
      const int dc = static_cast<int>(std::lround(s * step_col));
      for (int r = spec.top; r < spec.top + spec.rows; ++r) {
        const int rr = r + dr;
        if (rr < 0 || rr >= rows) continue;
        for (int c = spec.left; c < spec.left + spec.cols; ++c) {
          const int cc = c + dc;
          if (cc < 0 || cc >= cols) continue;
          const std::size_t i = static_cast<std::size_t>(rr) * cols + cc;
          if (patch.instances[i] == 0) shadow[i] = 1;
        }
      }
    }
  }

  Rng noise_rng(mix_seed(style.seed ^ 0xA5A5A5A5ULL, patch_index));
  patch.image.resize(3 * n);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      float v = albedo[i] * kChannelTint[ch];
      if (shadow[i]) v *= kShadowDarkening;
      v += static_cast<float>(style.noise_std * draw_normal(noise_rng));
      patch.image[ch * n + i] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return patch;
}

std::vector<Patch> generate_city(const CityStyle& style, std::size_t n_patches, std::uint32_t rows,
                                 std::uint32_t cols) {
  validate_style(style);
  if (n_patches < 1) throw ConfigError("generate_city: n_patches must be >= 1");
  if (rows < 32 || cols < 32) throw ConfigError("generate_city: patches must be at least 32x32");
  std::vector<Patch> out;
  out.reserve(n_patches);
  for (std::size_t i = 0; i < n_patches; ++i) out.push_back(render_scene(style, layout_scene(style, i, rows, cols), i));
  return out;
}

Patch degrade_to_mid(const Patch& patch) {
  if (patch.quality == QualityClass::Low) throw DataError("degrade_to_mid expects a high- or mid-quality patch");
  Patch out = patch;
  out.quality = QualityClass::Mid;
  const auto groups = group_by_instance<float>(patch.height, patch.instances);
  std::map<std::uint32_t, float> medians;
  for (const auto& [id, values] : groups) medians[id] = static_cast<float>(median_of(values));
  for (std::size_t i = 0; i < out.height.size(); ++i) {
    out.height[i] = patch.instances[i] == 0 ? 0.0f : medians[patch.instances[i]];
  }
  return out;
}

Patch degrade_to_low(const Patch& patch, double true_floor_height, double assumed_floor_height) {
  if (patch.quality == QualityClass::Low) throw DataError("degrade_to_low expects a high- or mid-quality patch");
  if (!(true_floor_height > 0.0) || !(assumed_floor_height > 0.0)) {
    throw ConfigError("floor heights must be positive");
  }
  Patch out = patch;
  out.quality = QualityClass::Low;
  out.assumed_floor_height = assumed_floor_height;
  const auto groups = group_by_instance<float>(patch.height, patch.instances);
  std::map<std::uint32_t, std::uint16_t> floors_of;
  for (const auto& [id, values] : groups) {
    const long floors = std::max(1L, std::lround(median_of(values) / true_floor_height));
    floors_of[id] = static_cast<std::uint16_t>(std::min<long>(floors, 65535));
  }
  std::vector<std::uint16_t> floors(out.height.size(), 0);
  for (std::size_t i = 0; i < floors.size(); ++i) {
    if (patch.instances[i] != 0) floors[i] = floors_of[patch.instances[i]];
    out.height[i] = static_cast<float>(floors[i] * assumed_floor_height);
  }
  out.floors = std::move(floors);
  return out;
}

std::vector<LabeledPatch> synthesize(const SynthPlan& plan) {
  std::size_t total = 0;
  for (const auto& city : plan.cities) {
    if (city.train < 0 || city.val < 0 || city.test < 0) throw ConfigError("negative patch count");
    total += static_cast<std::size_t>(city.train + city.val + city.test);
  }
  if (total == 0) throw ConfigError("empty dataset");

  std::vector<LabeledPatch> out;
  out.reserve(total);
  for (const auto& city : plan.cities) {
    const std::pair<Split, int> splits[] = {{Split::Train, city.train}, {Split::Val, city.val}, {Split::Test, city.test}};
    for (const auto& [split, count] : splits) {
      if (count == 0) continue;
      CityStyle style = city.style;
      style.seed = mix_seed(city.style.seed, 101 + static_cast<std::uint64_t>(split));
      const auto truth = generate_city(style, static_cast<std::size_t>(count), plan.rows, plan.cols);
      const bool keep_truth = split == Split::Test && plan.truth_test_labels;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        Patch labeled = truth[i];
        if (!keep_truth && city.quality == QualityClass::Mid) labeled = degrade_to_mid(truth[i]);
        if (!keep_truth && city.quality == QualityClass::Low) {
          labeled = degrade_to_low(truth[i], city.style.floor_height, plan.assumed_floor_height);
        }
        ManifestEntry entry;
        entry.path = city.style.name + "/" + std::string(to_string(split)) + "_" + std::to_string(i) + ".wkh";
        entry.quality = labeled.quality;
        entry.domain_tag = city.style.name;
        entry.split = split;
        out.push_back({std::move(entry), std::move(labeled)});
      }
    }
  }
  return out;
}

DatasetManifest write_dataset(const std::vector<LabeledPatch>& data, const std::filesystem::path& dir) {
  DatasetManifest manifest;
  for (const auto& item : data) {
    const auto path = dir / item.entry.path;
    std::filesystem::create_directories(path.parent_path());
    save_patch(item.patch, path);
    manifest.entries.push_back(item.entry);
  }
  save_manifest(manifest, dir / "manifest.json");
  return manifest;
}

std::vector<LabeledPatch> load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path, false);
  std::vector<LabeledPatch> out;
  out.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    Patch p = load_patch(manifest_path.parent_path() / entry.path);
    if (p.quality != entry.quality || p.domain_tag != entry.domain_tag) {
      throw DataError("manifest entry disagrees with patch header: " + entry.path);
    }
    out.push_back({entry, std::move(p)});
  }
  return out;
}

}  // namespace weakheight
