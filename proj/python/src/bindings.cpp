#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "weakheight/config.hpp"
#include "weakheight/ensemble.hpp"
#include "weakheight/errors.hpp"
#include "weakheight/evalsuite.hpp"
#include "weakheight/gtaug.hpp"
#include "weakheight/heightbins.hpp"
#include "weakheight/losses.hpp"
#include "weakheight/synthcity.hpp"
#include "weakheight/trainer.hpp"

namespace py = pybind11;
using namespace weakheight;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
std::vector<T> to_vector(const CArray<T>& a) {
  return {a.data(), a.data() + a.size()};
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict patch_to_dict(const Patch& p) {
  const auto r = static_cast<py::ssize_t>(p.rows), c = static_cast<py::ssize_t>(p.cols);
  py::dict d;
  d["image"] = to_array(p.image, {static_cast<py::ssize_t>(p.channels), r, c});
  d["height"] = to_array(p.height, {r, c});
  d["instances"] = to_array(p.instances, {r, c});
  d["quality"] = std::string(to_string(p.quality));
  d["domain_tag"] = p.domain_tag;
  d["floors"] = p.floors ? py::object(to_array(*p.floors, {r, c})) : py::none();
  d["assumed_floor_height"] = p.assumed_floor_height ? py::object(py::float_(*p.assumed_floor_height)) : py::none();
  return d;
}

Patch patch_from_dict(const py::dict& d) {
  Patch p;
  const auto image = d["image"].cast<CArray<float>>();
  if (image.ndim() != 3) throw DataError("patch image must have shape (channels, rows, cols)");
  p.channels = static_cast<std::uint32_t>(image.shape(0));
  p.rows = static_cast<std::uint32_t>(image.shape(1));
  p.cols = static_cast<std::uint32_t>(image.shape(2));
  p.image = to_vector(image);
  p.height = to_vector(d["height"].cast<CArray<float>>());
  p.instances = to_vector(d["instances"].cast<CArray<std::uint32_t>>());
  p.quality = quality_from_string(d["quality"].cast<std::string>());
  if (d.contains("domain_tag")) p.domain_tag = d["domain_tag"].cast<std::string>();
  if (d.contains("floors") && !d["floors"].is_none()) p.floors = to_vector(d["floors"].cast<CArray<std::uint16_t>>());
  if (d.contains("assumed_floor_height") && !d["assumed_floor_height"].is_none()) {
    p.assumed_floor_height = d["assumed_floor_height"].cast<double>();
  }
  const auto problems = validate_patch(p);
  if (!problems.empty()) throw DataError("invalid patch: " + problems.front());
  return p;
}

nlohmann::json parse_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text.empty() ? "{}" : text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

CityStyle style_from(const std::string& style_json) { return city_style_from_json(parse_json(style_json)); }

class Model {
 public:
  Model(const std::filesystem::path& checkpoint, const std::string& inference) {
    auto ck = load_checkpoint(checkpoint);
    if (!inference.empty()) ck.inference = InferenceMode::from_string(inference);
    kind_ = ck.kind;
    mode_ = ck.inference.to_string();
    predictor_ = make_predictor(ck);
  }

  py::array_t<float> predict(const py::dict& patch) {
    const Patch p = patch_from_dict(patch);
    std::vector<float> out;
    {
      py::gil_scoped_release release;
      out = predictor_->predict({&p}).front();
    }
    return to_array(out, {static_cast<py::ssize_t>(p.rows), static_cast<py::ssize_t>(p.cols)});
  }

  const std::string& kind() const { return kind_; }
  const std::string& mode() const { return mode_; }

 private:
  std::string kind_, mode_;
  std::unique_ptr<HeightPredictor> predictor_;
};

std::string evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                const std::string& split) {
  py::gil_scoped_release release;
  auto predictor = make_predictor(load_checkpoint(checkpoint));
  const auto data = load_dataset(manifest);
  const Split wanted = split_from_string(split);
  std::vector<const LabeledPatch*> patches;
  for (const auto& lp : data) {
    if (lp.entry.split == wanted) patches.push_back(&lp);
  }
  if (patches.empty()) throw DataError("manifest has no " + split + " entries");
  const auto tags = load_manifest(manifest, false).in_domain_tags();
  return report_to_json(evaluate(*predictor, patches, {tags.begin(), tags.end()}));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "weakheight native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", data_error);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("sid_thresholds", [](double h_min, double h_max, int classes) {
    return sid_thresholds(h_min, h_max, classes).thresholds;
  }, py::arg("h_min") = 1.0, py::arg("h_max") = 150.0, py::arg("classes") = 20);

  m.def("height_classes", [](const CArray<float>& heights, double h_min, double h_max, int classes) {
    const auto bins = sid_thresholds(h_min, h_max, classes);
    const auto out = heights_to_classes(std::span<const float>(heights.data(), heights.size()), bins);
    std::vector<py::ssize_t> shape(heights.shape(), heights.shape() + heights.ndim());
    return to_array(std::vector<std::int32_t>(out.begin(), out.end()), shape);
  }, py::arg("heights"), py::arg("h_min") = 1.0, py::arg("h_max") = 150.0, py::arg("classes") = 20);

  m.def("soft_height_residual", &soft_height_residual, py::arg("pred"), py::arg("gt"), py::arg("lambda_tau"));
  m.def("ordinal_pair_loss", &ordinal_pair_loss, py::arg("pred_a"), py::arg("pred_b"), py::arg("class_a"),
        py::arg("class_b"));

  m.def("decay_eta", [](double eta, double alpha) {
    AugmentationState s;
    s.eta = eta;
    s.alpha = alpha;
    return decay_eta(s).eta;
  }, py::arg("eta"), py::arg("alpha") = 0.99);

  m.def("building_medians", [](const CArray<float>& heights, const CArray<std::uint32_t>& instances) {
    if (heights.size() != instances.size()) throw DataError("height and instance maps differ in size");
    return building_medians(std::span<const float>(heights.data(), heights.size()),
                            std::span<const std::uint32_t>(instances.data(), instances.size()));
  }, py::arg("heights"), py::arg("instances"));

  m.def("building_rmse", [](const CArray<float>& pred, const CArray<float>& gt, const CArray<std::uint32_t>& instances) {
    if (pred.size() != gt.size() || gt.size() != instances.size()) throw DataError("maps differ in size");
    const auto records = building_records("patch", std::span<const float>(pred.data(), pred.size()),
                                          std::span<const float>(gt.data(), gt.size()),
                                          std::span<const std::uint32_t>(instances.data(), instances.size()));
    if (records.empty()) throw DataError("no buildings in the instance map");
    return building_rmse(records);
  }, py::arg("pred"), py::arg("gt"), py::arg("instances"));

  m.def("generate_city", [](std::size_t n, std::uint32_t rows, std::uint32_t cols, const std::string& style_json) {
    py::list out;
    for (const auto& p : generate_city(style_from(style_json), n, rows, cols)) out.append(patch_to_dict(p));
    return out;
  }, py::arg("n"), py::arg("rows") = 64, py::arg("cols") = 64, py::arg("style_json") = "");

  m.def("degrade_to_mid", [](const py::dict& patch) { return patch_to_dict(degrade_to_mid(patch_from_dict(patch))); },
        py::arg("patch"));
  m.def("degrade_to_low", [](const py::dict& patch, double true_fh, double assumed_fh) {
    return patch_to_dict(degrade_to_low(patch_from_dict(patch), true_fh, assumed_fh));
  }, py::arg("patch"), py::arg("true_floor_height"), py::arg("assumed_floor_height") = 3.0);

  m.def("load_patch", [](const std::filesystem::path& path) { return patch_to_dict(load_patch(path)); },
        py::arg("path"));
  m.def("save_patch", [](const py::dict& patch, const std::filesystem::path& path) {
    save_patch(patch_from_dict(patch), path);
  }, py::arg("patch"), py::arg("path"));

  m.def("default_config_json", [] { return run_config_to_json(default_run_config()).dump(); });
  m.def("validate_config_json", [](const std::string& text) {
    return run_config_to_json(run_config_from_json(parse_json(text))).dump();
  }, py::arg("text"));
  m.def("config_help", &config_help_text);

  m.def("normalize_report_json", [](const std::string& text) { return report_to_json(report_from_json(text)); },
        py::arg("text"));
  m.def("evaluate_checkpoint", &evaluate_checkpoint, py::arg("checkpoint"), py::arg("manifest"),
        py::arg("split") = "test");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&, const std::string&>(), py::arg("checkpoint"),
           py::arg("inference") = "")
      .def("predict", &Model::predict, py::arg("patch"))
      .def_property_readonly("kind", &Model::kind)
      .def_property_readonly("inference", &Model::mode);
}
