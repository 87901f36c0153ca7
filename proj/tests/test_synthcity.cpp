#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "weakheight/errors.hpp"
#include "weakheight/evalsuite.hpp"
#include "weakheight/synthcity.hpp"

using namespace weakheight;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Patch patch_with_heights(const std::vector<float>& building) {
  Patch p = testsupport::box_patch(8, 8);
  std::fill(p.height.begin(), p.height.end(), 0.0f);
  std::fill(p.instances.begin(), p.instances.end(), 0u);
  for (std::size_t i = 0; i < building.size(); ++i) {
    p.height[i] = building[i];
    p.instances[i] = 1;
  }
  return p;
}

}  // namespace

TEST_SUITE("synthcity") {
  TEST_CASE("generation is deterministic") {
    CityStyle style;
    style.seed = 42;
    CHECK((generate_city(style, 3, 64, 64) == generate_city(style, 3, 64, 64)));
    style.seed = 43;
    CHECK_FALSE((generate_city(style, 3, 64, 64) == generate_city(CityStyle{.seed = 42}, 3, 64, 64)));
  }

  TEST_CASE("empty scenes") {
    CityStyle style;
    style.buildings_per_patch = {0, 0};
    for (const auto& p : generate_city(style, 2, 32, 32)) {
      CHECK(std::all_of(p.height.begin(), p.height.end(), [](float h) { return h == 0.0f; }));
      CHECK(std::all_of(p.instances.begin(), p.instances.end(), [](std::uint32_t i) { return i == 0; }));
    }
  }

  TEST_CASE("generated patches validate and respect the size contract") {
    CityStyle style;
    for (const auto& p : generate_city(style, 4, 64, 48)) {
      CHECK(validate_patch(p).empty());
      CHECK(p.rows == 64);
      CHECK(p.cols == 48);
      CHECK(p.quality == QualityClass::High);
    }
    CHECK_THROWS_AS(generate_city(style, 0, 64, 64), ConfigError);
    CHECK_THROWS_AS(generate_city(style, 1, 16, 64), ConfigError);
  }

  TEST_CASE("crowded layouts fail instead of overlapping") {
    CityStyle style;
    style.buildings_per_patch = {40, 40};
    style.footprint_size = {20, 20};
    CHECK_THROWS_AS(layout_scene(style, 0, 32, 32), DataError);
  }

  TEST_CASE("style validation") {
    CityStyle style;
    style.height_log_sigma = 0.0;
    CHECK_THROWS_AS(validate_style(style), ConfigError);
    style = {};
    style.floor_height = 5.0;
    CHECK_THROWS_AS(validate_style(style), ConfigError);
    style = {};
    style.noise_std = -0.1;
    CHECK_THROWS_AS(validate_style(style), ConfigError);
  }

  TEST_CASE("log-normal building heights have median exp(mu)") {
    CityStyle style;
    style.seed = 7;
    style.height_log_mean = std::log(10.0);
    style.height_log_sigma = 0.5;
    style.buildings_per_patch = {5, 5};
    style.footprint_size = {4, 6};
    std::vector<double> heights;
    for (std::size_t i = 0; heights.size() < 10000; ++i) {
      for (const auto& b : layout_scene(style, i, 64, 64).buildings) heights.push_back(b.height);
    }
    std::nth_element(heights.begin(), heights.begin() + 5000, heights.end());
    CHECK(std::abs(heights[5000] - 10.0) < 1.0);
  }

  TEST_CASE("shadow length in the image tracks building height") {
    CityStyle style;
    style.seed = 9;
    style.buildings_per_patch = {1, 1};
    style.footprint_size = {8, 8};
    style.noise_std = 0.0;
    style.roof_detail_prob = 0.0;
    style.sun_azimuth_deg = 90.0;  // shadows run along -col
    std::vector<double> heights, lengths;
    for (std::size_t i = 0; i < 300; ++i) {
      const auto layout = layout_scene(style, i, 128, 128);
      const auto patch = render_scene(style, layout, i);
      const auto& b = layout.buildings.front();
      if (b.left < b.shadow_length + 1) continue;  // shadow clipped by the border
      const int row = b.top + b.rows / 2;
      if (b.left + b.cols >= 127) continue;
      const float lit = patch.image[static_cast<std::size_t>(row) * 128 + 127];
      int length = 0;
      for (int c = b.left - 1; c >= 0; --c) {
        if (patch.image[static_cast<std::size_t>(row) * 128 + c] < 0.7f * lit) {
          ++length;
        } else {
          break;
        }
      }
      heights.push_back(b.height);
      lengths.push_back(length);
    }
    REQUIRE(heights.size() > 100);
    CHECK(pearson(ranks(heights), ranks(lengths)) >= 0.95);
  }

  TEST_CASE("mid-quality degradation") {
    CHECK(degrade_to_mid(patch_with_heights({8, 10, 12})).height[0] == 10.0f);
    const auto four = degrade_to_mid(patch_with_heights({8, 10, 12, 30}));
    for (int i = 0; i < 4; ++i) CHECK(four.height[static_cast<std::size_t>(i)] == 11.0f);
    CHECK(four.quality == QualityClass::Mid);
    CHECK(four.height[10] == 0.0f);

    Patch empty = patch_with_heights({});
    CHECK(degrade_to_mid(empty).height == empty.height);
  }

  TEST_CASE("mid degradation is idempotent, valid and preserves building medians") {
    CityStyle style;
    style.roof_detail_prob = 1.0;
    for (const auto& p : generate_city(style, 5, 64, 64)) {
      const auto mid = degrade_to_mid(p);
      CHECK(validate_patch(mid).empty());
      CHECK(degrade_to_mid(mid) == mid);
      const auto recs = building_records("p", mid.height, p.height, p.instances);
      if (!recs.empty()) CHECK(building_rmse(recs) == 0.0);
    }
    Patch low = degrade_to_low(generate_city(style, 1, 64, 64)[0], 3.0, 3.0);
    CHECK_THROWS_AS(degrade_to_mid(low), DataError);
  }

  TEST_CASE("low-quality degradation") {
    CHECK(degrade_to_low(patch_with_heights({9, 9, 9}), 3.0, 3.0).height[0] == 9.0f);
    const auto a = degrade_to_low(patch_with_heights({9, 9, 9}), 2.7, 3.0);
    CHECK(a.height[0] == 9.0f);
    CHECK((*a.floors)[0] == 3);
    const auto b = degrade_to_low(patch_with_heights({10.8f, 10.8f}), 2.7, 3.0);
    CHECK(b.height[0] == doctest::Approx(12.0));
    CHECK((*b.floors)[0] == 4);
    const auto c = degrade_to_low(patch_with_heights({1, 1}), 3.0, 3.0);
    CHECK((*c.floors)[0] == 1);
    CHECK(c.height[0] == 3.0f);
    CHECK(c.height[20] == 0.0f);
    CHECK(validate_patch(c).empty());
    CHECK(*c.assumed_floor_height == 3.0);
  }

  TEST_CASE("dataset assembly") {
    SynthPlan plan;
    CHECK_THROWS_WITH_AS(synthesize(plan), "empty dataset", ConfigError);

    CityPlan a;
    a.style.name = "a";
    a.train = 2;
    a.test = 1;
    CityPlan b;
    b.style.name = "b";
    b.quality = QualityClass::Low;
    b.train = 2;
    b.test = 1;
    plan.cities = {a, b};
    plan.truth_test_labels = true;
    const auto data = synthesize(plan);
    REQUIRE(data.size() == 6);
    for (const auto& lp : data) {
      CHECK(validate_patch(lp.patch).empty());
      CHECK(lp.entry.quality == lp.patch.quality);
      if (lp.entry.domain_tag == "b") {
        CHECK(lp.patch.quality == (lp.entry.split == Split::Test ? QualityClass::High : QualityClass::Low));
      }
    }
    CHECK(data[0].entry.path == "a/train_0.wkh");

    const auto dir = testsupport::scratch_dir("synth_dataset");
    write_dataset(data, dir);
    const auto loaded = load_dataset(dir / "manifest.json");
    REQUIRE(loaded.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(loaded[i].patch == data[i].patch);
  }
}
