#include "weakheight/evalsuite.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "weakheight/errors.hpp"
#include "weakheight/median.hpp"

namespace weakheight {

using json = nlohmann::json;

std::map<std::uint32_t, double> building_medians(std::span<const float> heights,
                                                 std::span<const std::uint32_t> instances) {
  if (heights.size() != instances.size()) throw DataError("building_medians: shape mismatch");
  std::map<std::uint32_t, double> out;
  for (auto& [id, values] : group_by_instance(heights, instances)) out[id] = median_of(std::move(values));
  return out;
}

std::vector<BuildingRecord> building_records(const std::string& patch_id, std::span<const float> pred,
                                             std::span<const float> gt, std::span<const std::uint32_t> instances) {
  if (pred.size() != gt.size() || gt.size() != instances.size()) {
    throw DataError("building_records: shape mismatch");
  }
  const auto pred_groups = group_by_instance(pred, instances);
  const auto gt_groups = group_by_instance(gt, instances);
  std::vector<BuildingRecord> records;
  records.reserve(gt_groups.size());
  for (const auto& [id, gt_values] : gt_groups) {
    BuildingRecord rec;
    rec.patch_id = patch_id;
    rec.instance_id = id;
    rec.n_pixels = gt_values.size();
    rec.gt_median = median_of(gt_values);
    rec.pred_median = median_of(pred_groups.at(id));
    records.push_back(std::move(rec));
  }
  return records;
}

double building_rmse(std::span<const BuildingRecord> records) {
  if (records.empty()) throw std::domain_error("building-wise RMSE undefined for an empty building set");
  double sum = 0.0;
  for (const auto& r : records) {
    const double d = r.pred_median - r.gt_median;
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(records.size()));
}

DomainGroup domain_group_from_string(const std::string& label) {
  if (label == "in") return DomainGroup::In;
  if (label == "out") return DomainGroup::Out;
  throw ConfigError("unknown domain group '" + label + "'");
}

std::string to_string(DomainGroup g) { return g == DomainGroup::In ? "in" : "out"; }

MetricsReport grouped_report(const std::map<std::string, SetResult>& sets) {
  if (sets.empty()) throw std::domain_error("grouped_report: no evaluation sets");
  MetricsReport report;
  double sum_all = 0.0, sum_in = 0.0, sum_out = 0.0;
  int n_in = 0, n_out = 0;
  for (const auto& [name, set] : sets) {
    const double rmse = building_rmse(set.records);
    report.per_set_rmse[name] = rmse;
    report.per_set_group[name] = set.group;
    report.n_buildings[name] = set.records.size();
    sum_all += rmse;
    if (set.group == DomainGroup::In) {
      sum_in += rmse;
      ++n_in;
    } else {
      sum_out += rmse;
      ++n_out;
    }
  }
  report.combined_avg = sum_all / static_cast<double>(sets.size());
  report.in_domain_avg = n_in > 0 ? sum_in / n_in : report.combined_avg;
  report.out_domain_avg = n_out > 0 ? sum_out / n_out : report.combined_avg;
  return report;
}

std::string report_to_json(const MetricsReport& report) {
  json doc;
  json sets = json::array();
  for (const auto& [name, rmse] : report.per_set_rmse) {
    sets.push_back({{"set", name},
                    {"group", to_string(report.per_set_group.at(name))},
                    {"n_buildings", report.n_buildings.at(name)},
                    {"rmse_m", rmse}});
  }
  doc["sets"] = std::move(sets);
  doc["in_domain_avg"] = report.in_domain_avg;
  doc["out_domain_avg"] = report.out_domain_avg;
  doc["combined_avg"] = report.combined_avg;
  return doc.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  MetricsReport report;
  try {
    const json doc = json::parse(text);
    for (const auto& s : doc.at("sets")) {
      const auto name = s.at("set").get<std::string>();
      report.per_set_rmse[name] = s.at("rmse_m").get<double>();
      report.per_set_group[name] = domain_group_from_string(s.at("group").get<std::string>());
      report.n_buildings[name] = s.at("n_buildings").get<std::size_t>();
    }
    report.in_domain_avg = doc.at("in_domain_avg").get<double>();
    report.out_domain_avg = doc.at("out_domain_avg").get<double>();
    report.combined_avg = doc.at("combined_avg").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
  return report;
}

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "set,group,n_buildings,rmse_m\n" << std::setprecision(10);
  for (const auto& [name, rmse] : report.per_set_rmse) {
    out << name << ',' << to_string(report.per_set_group.at(name)) << ',' << report.n_buildings.at(name) << ','
        << rmse << '\n';
  }
  return out.str();
}

std::string records_to_csv(std::span<const BuildingRecord> records) {
  std::ostringstream out;
  out << "patch_id,instance_id,gt_median,pred_median,n_pixels\n" << std::setprecision(10);
  for (const auto& r : records) {
    out << r.patch_id << ',' << r.instance_id << ',' << r.gt_median << ',' << r.pred_median << ',' << r.n_pixels
        << '\n';
  }
  return out.str();
}

namespace {

Rgb lerp_palette(std::span<const std::array<double, 3>> stops, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * static_cast<double>(stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), stops.size() - 2);
  const double f = pos - static_cast<double>(i);
  auto channel = [&](int c) {
    return static_cast<std::uint8_t>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  };
  return {channel(0), channel(1), channel(2)};
}

constexpr std::array<std::array<double, 3>, 5> kSequential{{
    {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
constexpr std::array<std::array<double, 3>, 3> kDiverging{{{33, 102, 172}, {247, 247, 247}, {178, 24, 43}}};

void write_png(const std::vector<Rgb>& pixels, std::uint32_t rows, std::uint32_t cols,
               const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = cols;
  image.height = rows;
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
}

}  // namespace

Rgb height_color(double t) { return lerp_palette(kSequential, t); }

Rgb error_color(double t) { return lerp_palette(kDiverging, 0.5 * (std::clamp(t, -1.0, 1.0) + 1.0)); }

void write_height_png(std::span<const float> values, std::uint32_t rows, std::uint32_t cols, double lo, double hi,
                      const std::filesystem::path& path) {
  std::vector<Rgb> pixels(values.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    pixels[i] = height_color(span > 0.0 ? (values[i] - lo) / span : 0.0);
  }
  write_png(pixels, rows, cols, path);
}

RenderedMaps render_maps(std::span<const float> pred, std::span<const float> gt,
                         std::span<const std::uint32_t> instances, std::uint32_t rows, std::uint32_t cols,
                         const std::filesystem::path& prefix) {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (pred.size() != n || gt.size() != n || instances.size() != n) throw DataError("render_maps: shape mismatch");
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());

  RenderedMaps out;
  const std::string base = prefix.string();
  out.pred_png = base + "_pred.png";
  out.gt_png = base + "_gt.png";
  out.error_png = base + "_error.png";
  out.records_csv = base + "_buildings.csv";

  const auto [pmin, pmax] = std::minmax_element(pred.begin(), pred.end());
  const auto [gmin, gmax] = std::minmax_element(gt.begin(), gt.end());
  const double lo = std::min(*pmin, *gmin);
  const double hi = std::max(*pmax, *gmax);
  write_height_png(pred, rows, cols, lo, hi, out.pred_png);
  write_height_png(gt, rows, cols, lo, hi, out.gt_png);

  double max_abs = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_abs = std::max(max_abs, std::abs(double(pred[i]) - gt[i]));
  std::vector<Rgb> err(n);
  for (std::size_t i = 0; i < n; ++i) {
    err[i] = error_color(max_abs > 0.0 ? (double(pred[i]) - gt[i]) / max_abs : 0.0);
  }
  write_png(err, rows, cols, out.error_png);

  const auto records = building_records(prefix.filename().string(), pred, gt, instances);
  write_text(out.records_csv, records_to_csv(records));
  return out;
}

}  // namespace weakheight
