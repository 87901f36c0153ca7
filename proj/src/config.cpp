#include "weakheight/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "weakheight/errors.hpp"
#include "weakheight/json_util.hpp"

namespace weakheight {

using json = nlohmann::json;

namespace {

CityPlan city(const std::string& name, std::uint64_t seed, QualityClass quality) {
  CityPlan c;
  c.style.name = name;
  c.style.seed = seed;
  c.quality = quality;
  c.train = 48;
  c.val = 8;
  c.test = 16;
  return c;
}

json int_range_to_json(const IntRange& r) { return json::array({r.min, r.max}); }

IntRange int_range_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw ConfigError(ctx + ": expected [min, max] integers");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

json city_plan_to_json(const CityPlan& c) {
  return {{"name", c.style.name},
          {"quality", std::string(to_string(c.quality))},
          {"train", c.train},
          {"val", c.val},
          {"test", c.test},
          {"style", city_style_to_json(c.style)}};
}

CityPlan city_plan_from_json(const json& doc, std::size_t index) {
  using namespace jsonutil;
  const std::string ctx = "synth.cities[" + std::to_string(index) + "]";
  require_keys_within(doc, {"name", "quality", "train", "val", "test", "style"}, ctx);
  CityPlan c;
  c.style.seed = index;
  read_optional(doc, "name", c.style.name, ctx);
  std::string quality = "high";
  read_optional(doc, "quality", quality, ctx);
  c.quality = quality_from_string(quality);
  read_optional(doc, "train", c.train, ctx);
  read_optional(doc, "val", c.val, ctx);
  read_optional(doc, "test", c.test, ctx);
  if (doc.contains("style")) {
    const std::string name = c.style.name;
    c.style = city_style_from_json(doc.at("style"), c.style);
    c.style.name = name;
  }
  return c;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig rc;
  CityPlan alpha = city("alpha", 1, QualityClass::High);

  CityPlan bravo = city("bravo", 2, QualityClass::Mid);
  bravo.style.sun_azimuth_deg = 110.0;
  bravo.style.albedo_palette = {0.5f, 0.6f, 0.7f};
  bravo.style.ground_albedo = 0.3f;
  bravo.style.footprint_size = {8, 18};
  bravo.style.height_log_mean = std::log(12.0);

  CityPlan charlie = city("charlie", 3, QualityClass::Low);
  charlie.style.sun_azimuth_deg = 160.0;
  charlie.style.albedo_palette = {0.6f, 0.7f, 0.8f};
  charlie.style.ground_albedo = 0.4f;
  charlie.style.height_log_mean = std::log(14.0);
  charlie.style.floor_height = 3.6;

  rc.synth.cities = {alpha, bravo, charlie};
  rc.synth.truth_test_labels = true;
  return rc;
}

json city_style_to_json(const CityStyle& s) {
  return {{"seed", s.seed},
          {"buildings_per_patch", int_range_to_json(s.buildings_per_patch)},
          {"footprint_size", int_range_to_json(s.footprint_size)},
          {"height_log_mean", s.height_log_mean},
          {"height_log_sigma", s.height_log_sigma},
          {"sun_azimuth_deg", s.sun_azimuth_deg},
          {"albedo_palette", s.albedo_palette},
          {"ground_albedo", s.ground_albedo},
          {"noise_std", s.noise_std},
          {"floor_height", s.floor_height},
          {"shadow_scale", s.shadow_scale},
          {"roof_detail_prob", s.roof_detail_prob}};
}

CityStyle city_style_from_json(const json& doc, CityStyle s) {
  using namespace jsonutil;
  const std::string ctx = "style";
  require_keys_within(doc,
                      {"seed", "buildings_per_patch", "footprint_size", "height_log_mean", "height_log_sigma",
                       "sun_azimuth_deg", "albedo_palette", "ground_albedo", "noise_std", "floor_height",
                       "shadow_scale", "roof_detail_prob"},
                      ctx);
  read_optional(doc, "seed", s.seed, ctx);
  if (doc.contains("buildings_per_patch")) {
    s.buildings_per_patch = int_range_from_json(doc.at("buildings_per_patch"), ctx + ".buildings_per_patch");
  }
  if (doc.contains("footprint_size")) {
    s.footprint_size = int_range_from_json(doc.at("footprint_size"), ctx + ".footprint_size");
  }
  read_optional(doc, "height_log_mean", s.height_log_mean, ctx);
  read_optional(doc, "height_log_sigma", s.height_log_sigma, ctx);
  read_optional(doc, "sun_azimuth_deg", s.sun_azimuth_deg, ctx);
  read_optional(doc, "albedo_palette", s.albedo_palette, ctx);
  read_optional(doc, "ground_albedo", s.ground_albedo, ctx);
  read_optional(doc, "noise_std", s.noise_std, ctx);
  read_optional(doc, "floor_height", s.floor_height, ctx);
  read_optional(doc, "shadow_scale", s.shadow_scale, ctx);
  read_optional(doc, "roof_detail_prob", s.roof_detail_prob, ctx);
  return s;
}

json run_config_to_json(const RunConfig& rc) {
  json cities = json::array();
  for (const auto& c : rc.synth.cities) cities.push_back(city_plan_to_json(c));
  return {{"schema_version", rc.schema_version},
          {"synth",
           {{"seed", rc.synth_seed},
            {"rows", rc.synth.rows},
            {"cols", rc.synth.cols},
            {"assumed_floor_height", rc.synth.assumed_floor_height},
            {"truth_test_labels", rc.synth.truth_test_labels},
            {"cities", cities}}},
          {"model", model_config_to_json(rc.model)},
          {"train", train_config_to_json(rc.train)},
          {"paths", {{"data", rc.data_dir}, {"out", rc.out_dir}}}};
}

RunConfig run_config_from_json(const json& doc) {
  using namespace jsonutil;
  require_keys_within(doc, {"schema_version", "synth", "model", "train", "paths"}, "config");
  RunConfig rc = default_run_config();
  read_optional(doc, "schema_version", rc.schema_version, "config");
  if (rc.schema_version != kRunConfigSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + std::to_string(rc.schema_version));
  }
  if (doc.contains("synth")) {
    const auto& s = doc.at("synth");
    require_keys_within(s, {"seed", "rows", "cols", "assumed_floor_height", "truth_test_labels", "cities"}, "synth");
    read_optional(s, "seed", rc.synth_seed, "synth");
    read_optional(s, "rows", rc.synth.rows, "synth");
    read_optional(s, "cols", rc.synth.cols, "synth");
    read_optional(s, "assumed_floor_height", rc.synth.assumed_floor_height, "synth");
    read_optional(s, "truth_test_labels", rc.synth.truth_test_labels, "synth");
    if (s.contains("cities")) {
      const auto& list = s.at("cities");
      if (!list.is_array()) throw ConfigError("synth.cities: expected an array");
      rc.synth.cities.clear();
      for (std::size_t i = 0; i < list.size(); ++i) rc.synth.cities.push_back(city_plan_from_json(list[i], i));
    }
  }
  if (doc.contains("model")) rc.model = model_config_from_json(doc.at("model"));
  if (doc.contains("train")) rc.train = train_config_from_json(doc.at("train"));
  if (doc.contains("paths")) {
    const auto& p = doc.at("paths");
    require_keys_within(p, {"data", "out"}, "paths");
    read_optional(p, "data", rc.data_dir, "paths");
    read_optional(p, "out", rc.out_dir, "paths");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc);
}

void validate_run_config(const RunConfig& rc) {
  if (rc.synth.rows < 32 || rc.synth.cols < 32) throw ConfigError("synth.rows/cols must be >= 32");
  if (!(rc.synth.assumed_floor_height > 0.0)) throw ConfigError("synth.assumed_floor_height must be > 0");
  std::set<std::string> names;
  for (const auto& c : rc.synth.cities) {
    validate_style(c.style);
    if (c.style.name.empty() || c.style.name.find('/') != std::string::npos) {
      throw ConfigError("city names must be non-empty and contain no '/'");
    }
    if (!names.insert(c.style.name).second) throw ConfigError("duplicate city name " + c.style.name);
    if (c.train < 0 || c.val < 0 || c.test < 0) throw ConfigError("city " + c.style.name + ": negative patch count");
  }
  validate_model_config(rc.model);
  validate_train_config(rc.train);
}

SynthPlan resolved_synth_plan(const RunConfig& rc) {
  SynthPlan plan = rc.synth;
  for (auto& c : plan.cities) c.style.seed = mix_seed(rc.synth_seed, c.style.seed);
  return plan;
}

namespace {

const std::map<std::string, std::string>& key_descriptions() {
  static const std::map<std::string, std::string> d = {
      {"schema_version", "config document version"},
      {"synth.seed", "base seed mixed into every city seed"},
      {"synth.rows", "patch height in pixels"},
      {"synth.cols", "patch width in pixels"},
      {"synth.assumed_floor_height", "storey height used to turn floor counts into meters"},
      {"synth.truth_test_labels", "store exact heights for test patches"},
      {"synth.cities", "list of {name, quality, train, val, test, style}"},
      {"model.n_branches", "decoder branches (2 or 3)"},
      {"model.input_channels", "image channels"},
      {"model.input_rows", "expected patch height"},
      {"model.input_cols", "expected patch width"},
      {"model.stem_factor", "space-to-depth factor before the encoder"},
      {"model.encoder_widths", "channels per encoder level"},
      {"model.decoder_widths", "channels per decoder stage, deepest first"},
      {"model.classifier_conv_blocks", "conv-pool blocks in the quality classifier"},
      {"model.classifier_channels", "classifier conv channels"},
      {"model.classifier_hidden", "classifier hidden units"},
      {"model.height_scale", "meters per unit of decoder output"},
      {"train.epochs", "training epochs"},
      {"train.learning_rate", "Adam learning rate"},
      {"train.batch_size", "patches per step"},
      {"train.seed", "training seed"},
      {"train.threads", "intra-op threads (1 = bitwise reproducible)"},
      {"train.lambda_tau_mid", "soft-loss buffer for mid-quality labels"},
      {"train.lambda_tau_low", "soft-loss buffer for low-quality labels"},
      {"train.fraction_mid", "pixel sampling fraction for mid-quality labels"},
      {"train.fraction_low", "pixel sampling fraction for low-quality labels"},
      {"train.pixel_sampling", "balanced | random"},
      {"train.pair_budget", "pixel pairs per constraint evaluation, 0 = H x W"},
      {"train.height_classes", "log-spaced height classes K"},
      {"train.h_min", "lowest class edge, meters"},
      {"train.h_max", "highest class edge, meters"},
      {"train.constraint_type", "(H+M)C+L | H+M | (H+M)C | H+M+L | random-sampling"},
      {"train.eta0", "initial label weight in the augmentation blend"},
      {"train.alpha", "per-epoch decay of the label weight"},
      {"train.omega", "relative trust threshold for augmentation"},
      {"train.dropout", "chance a patch keeps its original label"},
      {"train.domain_classifier", "train and use the quality classifier"},
      {"train.ordinal", "use ordinal constraints"},
      {"train.augmentation", "use label augmentation"},
      {"train.mode", "ensemble | single-all | single-high"},
      {"train.batch_composition", "proportional | stratified"},
      {"paths.data", "dataset directory"},
      {"paths.out", "output directory"},
  };
  return d;
}

void collect_keys(const json& node, const std::string& prefix, std::vector<ConfigKeyDoc>& out) {
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect_keys(value, path, out);
      continue;
    }
    const auto& d = key_descriptions();
    const auto it = d.find(path);
    std::string shown = value.dump();
    if (path == "synth.cities") {
      shown.clear();
      for (const auto& c : value) shown += (shown.empty() ? "" : ",") + c.at("name").get<std::string>() + ":" +
                                           c.at("quality").get<std::string>();
    }
    out.push_back({path, shown, it == d.end() ? "" : it->second});
  }
}

}  // namespace

std::vector<ConfigKeyDoc> config_key_docs() {
  std::vector<ConfigKeyDoc> out;
  collect_keys(run_config_to_json(default_run_config()), "", out);
  return out;
}

std::string config_help_text() {
  std::ostringstream os;
  os << "Config keys (JSON, dotted path = default : meaning):\n";
  for (const auto& k : config_key_docs()) {
    os << "  " << k.key << " = " << k.default_value;
    if (!k.description.empty()) os << " : " << k.description;
    os << '\n';
  }
  return os.str();
}

}  // namespace weakheight
