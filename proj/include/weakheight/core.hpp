#pragma once

// Data model shared by every stage: label-quality classes, training patches,
// the binary patch container and the dataset manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace weakheight {

enum class QualityClass : std::uint8_t { High = 0, Mid = 1, Low = 2 };

inline constexpr int kQualityClassCount = 3;

std::string_view to_string(QualityClass q);
/// Accepts "high" / "mid" / "low" (case-sensitive); throws ConfigError otherwise.
QualityClass quality_from_string(std::string_view name);
/// Throws FormatError("unknown quality class") for values outside {0,1,2}.
QualityClass quality_from_index(int index);

inline int index_of(QualityClass q) { return static_cast<int>(q); }

/// One training / evaluation sample.
///
/// `image` is channel-major [channels x rows x cols]; the per-pixel maps are
/// row-major [rows x cols]. Heights are meters, instance 0 is background.
/// Low-quality patches carry the floor counts they were derived from together
/// with the floor height used to convert them to meters.
struct Patch {
  std::uint32_t channels = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> image;
  std::vector<float> height;
  std::vector<std::uint32_t> instances;
  QualityClass quality = QualityClass::High;
  std::string domain_tag;
  std::optional<std::vector<std::uint16_t>> floors;
  std::optional<double> assumed_floor_height;

  std::size_t pixel_count() const { return static_cast<std::size_t>(rows) * cols; }

  bool operator==(const Patch&) const = default;
};

/// Names of violated invariants; empty iff the patch is valid.
std::vector<std::string> validate_patch(const Patch& patch);

inline constexpr std::uint16_t kPatchFormatVersion = 1;

/// Serialises to the "WKH1" container. Refuses (DataError) to write an
/// invalid patch. Identical patches produce identical bytes.
std::vector<std::uint8_t> encode_patch(const Patch& patch);
/// Parses a container; FormatError on layout problems, DataError when the
/// decoded patch fails validation.
Patch decode_patch(std::span<const std::uint8_t> bytes);

void save_patch(const Patch& patch, const std::filesystem::path& path);
Patch load_patch(const std::filesystem::path& path);

enum class Split : std::uint8_t { Train, Val, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view name);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  QualityClass quality = QualityClass::High;
  std::string domain_tag;
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr int kManifestFormatVersion = 1;

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(Split s) const;

  /// Domain tags whose training data carries high-quality labels. Test sets
  /// with one of these tags are in-domain, all others out-of-domain.
  std::vector<std::string> in_domain_tags() const;

  bool operator==(const DatasetManifest&) const = default;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Loads `manifest.json`. With `validate_files`, checks that every referenced
/// patch exists, decodes, validates and agrees with its entry.
DatasetManifest load_manifest(const std::filesystem::path& path, bool validate_files = true);

}  // namespace weakheight
