#include "weakheight/core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <json.hpp>

#include "weakheight/errors.hpp"

namespace weakheight {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::string_view to_string(QualityClass q) {
  switch (q) {
    case QualityClass::High: return "high";
    case QualityClass::Mid: return "mid";
    case QualityClass::Low: return "low";
  }
  return "?";
}

QualityClass quality_from_string(std::string_view name) {
  if (name == "high") return QualityClass::High;
  if (name == "mid") return QualityClass::Mid;
  if (name == "low") return QualityClass::Low;
  throw ConfigError("unknown quality class '" + std::string(name) + "'");
}

QualityClass quality_from_index(int index) {
  if (index < 0 || index >= kQualityClassCount) {
    throw FormatError("unknown quality class " + std::to_string(index));
  }
  return static_cast<QualityClass>(index);
}

std::vector<std::string> validate_patch(const Patch& patch) {
  std::vector<std::string> issues;
  const std::size_t n = patch.pixel_count();
  if (patch.rows == 0 || patch.cols == 0 || patch.channels == 0) {
    issues.emplace_back("empty dimensions");
    return issues;
  }
  bool shapes_ok = true;
  auto check_size = [&](std::size_t actual, std::size_t expected, const char* what) {
    if (actual != expected) {
      issues.push_back(std::string("shape mismatch: ") + what);
      shapes_ok = false;
    }
  };
  check_size(patch.image.size(), n * patch.channels, "image");
  check_size(patch.height.size(), n, "height");
  check_size(patch.instances.size(), n, "instances");
  if (patch.floors) check_size(patch.floors->size(), n, "floors");
  if (!shapes_ok) return issues;

  bool non_finite = false;
  bool negative = false;
  for (float h : patch.height) {
    if (!std::isfinite(h)) non_finite = true;
    else if (h < 0.0f) negative = true;
  }
  if (non_finite) issues.emplace_back("non-finite height");
  if (negative) issues.emplace_back("negative height");

  if (std::any_of(patch.image.begin(), patch.image.end(),
                  [](float v) { return !(v >= 0.0f && v <= 1.0f); })) {
    issues.emplace_back("image reflectance outside [0,1]");
  }

  if (patch.quality == QualityClass::Mid) {
    bool uniform = true;
    bool background_zero = true;
    std::map<std::uint32_t, float> first_value;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t id = patch.instances[i];
      if (id == 0) {
        if (patch.height[i] != 0.0f) background_zero = false;
        continue;
      }
      auto [it, inserted] = first_value.emplace(id, patch.height[i]);
      if (!inserted && it->second != patch.height[i]) uniform = false;
    }
    if (!uniform) issues.emplace_back("mid-quality height not instance-uniform");
    if (!background_zero) issues.emplace_back("mid-quality background not zero");
  }

  if (patch.quality == QualityClass::Low) {
    if (!patch.floors) issues.emplace_back("low-quality patch missing floors");
    if (!patch.assumed_floor_height || !(*patch.assumed_floor_height > 0.0)) {
      issues.emplace_back("low-quality patch missing assumed_floor_height");
    }
    if (patch.floors && patch.assumed_floor_height && *patch.assumed_floor_height > 0.0) {
      const double fh = *patch.assumed_floor_height;
      for (std::size_t i = 0; i < n; ++i) {
        const float expected = static_cast<float>((*patch.floors)[i] * fh);
        if (std::abs(patch.height[i] - expected) > 1e-4f * std::max(1.0f, expected)) {
          issues.emplace_back("low-quality height not floors x assumed_floor_height");
          break;
        }
      }
    }
  } else if (patch.floors) {
    issues.emplace_back("floors present on non-low patch");
  }
  return issues;
}

namespace {

constexpr char kMagic[4] = {'W', 'K', 'H', '1'};
constexpr std::size_t kFixedHeaderSize = 4 + 2 + 1 + 1 + 4 + 4 + 4;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
void put_array(std::vector<std::uint8_t>& out, const std::vector<T>& values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
  std::vector<T> get_array(std::size_t count) {
    require(count * sizeof(T));
    std::vector<T> values(count);
    std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return values;
  }

  std::string get_string(std::size_t length) {
    require(length);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), length);
    pos_ += length;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (remaining() < n) throw FormatError("payload length mismatch");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_patch(const Patch& patch) {
  if (auto issues = validate_patch(patch); !issues.empty()) {
    throw DataError("refusing to write invalid patch: " + join(issues));
  }
  json header;
  header["domain_tag"] = patch.domain_tag;
  header["assumed_floor_height"] =
      patch.assumed_floor_height ? json(*patch.assumed_floor_height) : json(nullptr);
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kFixedHeaderSize + header_text.size() + patch.pixel_count() * (4 * patch.channels + 10));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint16_t>(out, kPatchFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(patch.quality));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(patch.channels));
  put<std::uint32_t>(out, patch.rows);
  put<std::uint32_t>(out, patch.cols);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  put_array(out, patch.image);
  put_array(out, patch.height);
  put_array(out, patch.instances);
  if (patch.floors) put_array(out, *patch.floors);
  return out;
}

Patch decode_patch(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("bad magic");
  }
  in.get_string(4);
  const auto version = in.get<std::uint16_t>();
  if (version != kPatchFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
  const auto quality_byte = in.get<std::uint8_t>();
  if (quality_byte >= kQualityClassCount) throw FormatError("unknown quality class");

  Patch patch;
  patch.quality = static_cast<QualityClass>(quality_byte);
  patch.channels = in.get<std::uint8_t>();
  patch.rows = in.get<std::uint32_t>();
  patch.cols = in.get<std::uint32_t>();
  const auto header_len = in.get<std::uint32_t>();
  json header;
  try {
    header = json::parse(in.get_string(header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad JSON header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("domain_tag") || !header["domain_tag"].is_string()) {
    throw FormatError("bad JSON header: missing domain_tag");
  }
  patch.domain_tag = header["domain_tag"].get<std::string>();
  if (header.contains("assumed_floor_height") && !header["assumed_floor_height"].is_null()) {
    patch.assumed_floor_height = header["assumed_floor_height"].get<double>();
  }

  const std::size_t n = patch.pixel_count();
  const bool has_floors = patch.quality == QualityClass::Low;
  const std::size_t expected = n * (4u * patch.channels + 4u + 4u + (has_floors ? 2u : 0u));
  if (in.remaining() != expected) throw FormatError("payload length mismatch");
  patch.image = in.get_array<float>(n * patch.channels);
  patch.height = in.get_array<float>(n);
  patch.instances = in.get_array<std::uint32_t>(n);
  if (has_floors) patch.floors = in.get_array<std::uint16_t>(n);

  if (auto issues = validate_patch(patch); !issues.empty()) {
    throw DataError("validation error: " + join(issues));
  }
  return patch;
}

void save_patch(const Patch& patch, const std::filesystem::path& path) {
  const auto bytes = encode_patch(patch);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Patch load_patch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open patch: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_patch(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [s](const ManifestEntry& e) { return e.split == s; });
  return out;
}

std::vector<std::string> DatasetManifest::in_domain_tags() const {
  std::set<std::string> tags;
  for (const auto& e : entries) {
    if (e.split == Split::Train && e.quality == QualityClass::High) tags.insert(e.domain_tag);
  }
  return {tags.begin(), tags.end()};
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json doc;
  doc["format_version"] = manifest.format_version;
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"path", e.path},
                       {"quality", std::string(to_string(e.quality))},
                       {"domain_tag", e.domain_tag},
                       {"split", std::string(to_string(e.split))}});
  }
  doc["entries"] = std::move(entries);
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
  DatasetManifest manifest;
  try {
    const json doc = json::parse(text);
    manifest.format_version = doc.at("format_version").get<int>();
    if (manifest.format_version != kManifestFormatVersion) {
      throw DataError("unsupported manifest version " + std::to_string(manifest.format_version));
    }
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.path = e.at("path").get<std::string>();
      try {
        entry.quality = quality_from_string(e.at("quality").get<std::string>());
      } catch (const ConfigError& err) {
        throw DataError(err.what());
      }
      entry.domain_tag = e.at("domain_tag").get<std::string>();
      entry.split = split_from_string(e.at("split").get<std::string>());
      manifest.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  std::set<std::string> paths;
  for (const auto& e : manifest.entries) {
    if (!paths.insert(e.path).second) throw DataError("duplicate manifest path: " + e.path);
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << manifest_to_json(manifest);
  if (!out) throw DataError("write failed: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path, bool validate_files) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  DatasetManifest manifest = manifest_from_json(text);
  if (validate_files) {
    const auto root = path.parent_path();
    for (const auto& e : manifest.entries) {
      const Patch p = load_patch(root / e.path);
      if (p.quality != e.quality || p.domain_tag != e.domain_tag) {
        throw DataError("manifest entry disagrees with patch header: " + e.path);
      }
    }
  }
  return manifest;
}

}  // namespace weakheight
