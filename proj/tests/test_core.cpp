#include <doctest.h>

#include <fstream>

#include "test_support.hpp"
#include "weakheight/core.hpp"
#include "weakheight/errors.hpp"
#include "weakheight/median.hpp"

using namespace weakheight;
using testsupport::box_patch;

namespace {

bool has_diagnostic(const Patch& p, const std::string& text) {
  for (const auto& d : validate_patch(p)) {
    if (d == text) return true;
  }
  return false;
}

Patch low_patch() {
  Patch p = box_patch(8, 8, 9.0);
  p.quality = QualityClass::Low;
  p.floors = std::vector<std::uint16_t>(64, 0);
  for (std::size_t i = 0; i < 64; ++i) {
    if (p.instances[i] != 0) (*p.floors)[i] = 3;
  }
  p.assumed_floor_height = 3.0;
  return p;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("quality names round-trip") {
    for (auto q : {QualityClass::High, QualityClass::Mid, QualityClass::Low}) {
      CHECK(quality_from_string(to_string(q)) == q);
      CHECK(quality_from_index(index_of(q)) == q);
    }
    CHECK_THROWS_AS(quality_from_string("medium"), ConfigError);
    CHECK_THROWS_AS(quality_from_index(3), FormatError);
  }

  TEST_CASE("median convention") {
    CHECK(median_of({1.0, 2.0, 100.0}) == 2.0);
    CHECK(median_of({8.0, 12.0}) == 10.0);
    CHECK(median_of({8.0, 10.0, 12.0, 30.0}) == 11.0);
  }

  TEST_CASE("valid patches produce no diagnostics") {
    CHECK(validate_patch(box_patch(8, 8)).empty());
    CHECK(validate_patch(low_patch()).empty());
  }

  TEST_CASE("validation names each violated invariant") {
    Patch p = box_patch(8, 8);
    p.rows = 0;
    CHECK(has_diagnostic(p, "empty dimensions"));

    p = box_patch(8, 8);
    p.height.pop_back();
    CHECK(has_diagnostic(p, "shape mismatch: height"));

    p = box_patch(8, 8);
    p.height[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK(has_diagnostic(p, "non-finite height"));

    p = box_patch(8, 8);
    p.height[0] = -1.0f;
    CHECK(has_diagnostic(p, "negative height"));

    p = box_patch(8, 8);
    p.image[3] = 1.5f;
    CHECK(has_diagnostic(p, "image reflectance outside [0,1]"));

    p = box_patch(8, 8);
    p.quality = QualityClass::Mid;
    p.height[2 * 8 + 2] = 11.0f;
    CHECK(has_diagnostic(p, "mid-quality height not instance-uniform"));

    p = box_patch(8, 8);
    p.quality = QualityClass::Mid;
    p.height[0] = 1.0f;
    CHECK(has_diagnostic(p, "mid-quality background not zero"));

    p = low_patch();
    p.floors.reset();
    CHECK(has_diagnostic(p, "low-quality patch missing floors"));

    p = low_patch();
    p.assumed_floor_height.reset();
    CHECK(has_diagnostic(p, "low-quality patch missing assumed_floor_height"));

    p = low_patch();
    p.height[2 * 8 + 2] = 12.0f;
    CHECK(has_diagnostic(p, "low-quality height not floors x assumed_floor_height"));

    p = box_patch(8, 8);
    p.floors = std::vector<std::uint16_t>(64, 0);
    CHECK(has_diagnostic(p, "floors present on non-low patch"));
  }

  TEST_CASE("patch container round-trips every quality") {
    Patch mid = box_patch(8, 8, 12.0);
    mid.quality = QualityClass::Mid;
    for (const Patch& p : {box_patch(8, 8), mid, low_patch()}) {
      const auto bytes = encode_patch(p);
      CHECK(decode_patch(bytes) == p);
      CHECK(encode_patch(decode_patch(bytes)) == bytes);
    }
  }

  TEST_CASE("container errors") {
    auto bytes = encode_patch(box_patch(8, 8));
    SUBCASE("bad magic") {
      bytes[0] = 'X';
      CHECK_THROWS_WITH_AS(decode_patch(bytes), doctest::Contains("bad magic"), FormatError);
    }
    SUBCASE("version") {
      bytes[4] = 9;
      CHECK_THROWS_WITH_AS(decode_patch(bytes), doctest::Contains("unsupported format version"), FormatError);
    }
    SUBCASE("quality byte") {
      bytes[6] = 7;
      CHECK_THROWS_WITH_AS(decode_patch(bytes), doctest::Contains("unknown quality class"), FormatError);
    }
    SUBCASE("truncated payload") {
      bytes.pop_back();
      CHECK_THROWS_WITH_AS(decode_patch(bytes), doctest::Contains("payload length mismatch"), FormatError);
    }
  }

  TEST_CASE("invalid patches are not written") {
    Patch p = box_patch(8, 8);
    p.height[0] = -2.0f;
    CHECK_THROWS_AS(encode_patch(p), DataError);
  }

  TEST_CASE("manifest round-trip and checks") {
    const auto dir = testsupport::scratch_dir("manifest");
    DatasetManifest m;
    m.entries.push_back({"a/train_0.wkh", QualityClass::High, "a", Split::Train});
    m.entries.push_back({"b/train_0.wkh", QualityClass::Mid, "b", Split::Train});
    m.entries.push_back({"b/test_0.wkh", QualityClass::High, "b", Split::Test});
    CHECK(manifest_from_json(manifest_to_json(m)) == m);
    CHECK(m.in_domain_tags() == std::vector<std::string>{"a"});
    CHECK(m.split(Split::Train).size() == 2);

    save_manifest(m, dir / "manifest.json");
    CHECK(load_manifest(dir / "manifest.json", false) == m);
    CHECK_THROWS_AS(load_manifest(dir / "manifest.json", true), DataError);

    DatasetManifest dup = m;
    dup.entries.push_back(m.entries.front());
    CHECK_THROWS_AS(manifest_from_json(manifest_to_json(dup)), DataError);
  }

  TEST_CASE("manifest validation compares entries with files") {
    const auto dir = testsupport::scratch_dir("manifest_files");
    std::filesystem::create_directories(dir / "a");
    save_patch(box_patch(8, 8), dir / "a/p.wkh");
    DatasetManifest m;
    m.entries.push_back({"a/p.wkh", QualityClass::High, "test", Split::Val});
    save_manifest(m, dir / "manifest.json");
    CHECK(load_manifest(dir / "manifest.json").entries.size() == 1);

    m.entries[0].quality = QualityClass::Mid;
    save_manifest(m, dir / "manifest.json");
    CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), DataError);
  }
}
