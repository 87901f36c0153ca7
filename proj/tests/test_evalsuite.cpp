#include <doctest.h>

#include <png.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "weakheight/errors.hpp"
#include "weakheight/evalsuite.hpp"

using namespace weakheight;

namespace {

SetResult single_error(double error, DomainGroup group) {
  SetResult s;
  s.group = group;
  s.records.push_back({"p", 1, 10.0, 10.0 + error, 4});
  return s;
}

struct LoadedPng {
  std::uint32_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

LoadedPng read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_file(&image, path.c_str()) != 0);
  image.format = PNG_FORMAT_RGB;
  LoadedPng out;
  out.width = image.width;
  out.height = image.height;
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  REQUIRE(png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr) != 0);
  return out;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("evalsuite") {
  TEST_CASE("per-building medians") {
    const std::vector<float> h{0, 8, 10, 12, 30, 5, 7, 0};
    const std::vector<std::uint32_t> ids{0, 1, 1, 1, 1, 2, 2, 0};
    const auto m = building_medians(h, ids);
    CHECK(m.size() == 2);
    CHECK(m.at(1) == 11.0);
    CHECK(m.at(2) == 6.0);
    CHECK_THROWS_AS(building_medians(h, std::vector<std::uint32_t>(3, 0)), DataError);
  }

  TEST_CASE("building-wise RMSE") {
    const std::vector<float> gt{10, 10, 20, 20, 0};
    const std::vector<float> pred{11, 13, 20, 19, 5};
    const std::vector<std::uint32_t> ids{1, 1, 2, 2, 0};
    const auto recs = building_records("x", pred, gt, ids);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].pred_median == 12.0);
    CHECK(recs[1].pred_median == 19.5);
    CHECK(recs[0].n_pixels == 2);
    CHECK(building_rmse(recs) == doctest::Approx(std::sqrt((4.0 + 0.25) / 2.0)));

    const std::vector<BuildingRecord> pair{{"a", 1, 10, 12, 1}, {"a", 2, 20, 16, 1}};
    CHECK(building_rmse(pair) == doctest::Approx(std::sqrt(10.0)));
    CHECK_THROWS_AS(building_rmse(std::vector<BuildingRecord>{}), std::domain_error);
  }

  TEST_CASE("grouped averages") {
    std::map<std::string, SetResult> sets;
    sets["a"] = single_error(2.0, DomainGroup::In);
    sets["b"] = single_error(4.0, DomainGroup::Out);
    sets["c"] = single_error(6.0, DomainGroup::Out);
    const auto r = grouped_report(sets);
    CHECK(r.in_domain_avg == 2.0);
    CHECK(r.out_domain_avg == 5.0);
    CHECK(r.combined_avg == 4.0);
    CHECK(r.n_buildings.at("a") == 1);

    sets.erase("a");
    const auto only_out = grouped_report(sets);
    CHECK(only_out.in_domain_avg == only_out.combined_avg);
    CHECK_THROWS_AS(grouped_report({}), std::domain_error);
    CHECK(domain_group_from_string("in") == DomainGroup::In);
    CHECK_THROWS_AS(domain_group_from_string("inside"), ConfigError);
  }

  TEST_CASE("five-set mean") {
    const double per_set[] = {4.3308, 6.2238, 11.1197, 6.8789, 13.4260};
    std::map<std::string, SetResult> sets;
    for (int i = 0; i < 5; ++i) sets["s" + std::to_string(i)] = single_error(per_set[i], DomainGroup::Out);
    CHECK(grouped_report(sets).combined_avg == doctest::Approx(8.3958).epsilon(1e-5));
  }

  TEST_CASE("report serialisation") {
    std::map<std::string, SetResult> sets;
    sets["a"] = single_error(2.0, DomainGroup::In);
    sets["b"] = single_error(3.5, DomainGroup::Out);
    const auto r = grouped_report(sets);
    const auto back = report_from_json(report_to_json(r));
    CHECK(back.per_set_rmse == r.per_set_rmse);
    CHECK(back.per_set_group == r.per_set_group);
    CHECK(back.combined_avg == r.combined_avg);
    CHECK(report_to_csv(r) == "set,group,n_buildings,rmse_m\na,in,1,2\nb,out,1,3.5\n");
    CHECK_THROWS_AS(report_from_json("{\"sets\": 3}"), DataError);
  }

  TEST_CASE("palettes") {
    CHECK(height_color(0.0) == Rgb{68, 1, 84});
    CHECK(height_color(1.0) == Rgb{253, 231, 37});
    CHECK(height_color(2.0) == height_color(1.0));
    CHECK(error_color(0.0) == Rgb{247, 247, 247});
    CHECK(error_color(-1.0) == Rgb{33, 102, 172});
    CHECK(error_color(1.0) == Rgb{178, 24, 43});
  }

  TEST_CASE("rendered maps") {
    const auto dir = testsupport::scratch_dir("render");
    const auto patch = testsupport::box_patch(8, 12, 10.0);
    std::vector<float> pred = patch.height;
    pred[0] = 4.0f;  // background over-estimate
    const auto maps = render_maps(pred, patch.height, patch.instances, 8, 12, dir / "sub/p");

    const auto p = read_png(maps.pred_png);
    CHECK(p.width == 12);
    CHECK(p.height == 8);
    const auto g = read_png(maps.gt_png);
    // shared scale [0, 10]: background black-purple, building at the top
    CHECK(g.rgb[0] == 68);
    const std::size_t roof = (2 * 12 + 3) * 3;
    CHECK(g.rgb[roof] == 253);
    CHECK(p.rgb[roof] == 253);

    const auto e = read_png(maps.error_png);
    CHECK(e.rgb[0] == 178);          // largest positive error
    CHECK(e.rgb[roof] == 247);       // exact pixel is neutral

    CHECK(slurp(maps.records_csv) == "patch_id,instance_id,gt_median,pred_median,n_pixels\np,1,10,10,6\n");
    CHECK_THROWS_AS(render_maps(pred, patch.height, patch.instances, 8, 8, dir / "q"), DataError);
  }
}
