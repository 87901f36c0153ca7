#include "weakheight/ensemble.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "weakheight/errors.hpp"
#include "weakheight/json_util.hpp"

namespace weakheight {

using json = nlohmann::json;
namespace F = torch::nn::functional;

int ModelConfig::downsampling_factor() const {
  return stem_factor * (1 << (static_cast<int>(encoder_widths.size()) - 1));
}

void validate_model_config(const ModelConfig& c) {
  if (c.n_branches < 1 || c.n_branches > kQualityClassCount) {
    throw ConfigError("model.n_branches must be 2 or 3 (1 for a single-branch baseline)");
  }
  if (c.input_channels < 1) throw ConfigError("model.input_channels must be >= 1");
  if (c.stem_factor < 1) throw ConfigError("model.stem_factor must be >= 1");
  if (c.encoder_widths.empty()) throw ConfigError("model.encoder_widths must be non-empty");
  if (c.decoder_widths.size() + 1 != c.encoder_widths.size()) {
    throw ConfigError("model.decoder_widths needs exactly one width per encoder skip level");
  }
  for (int w : c.encoder_widths) {
    if (w < 1) throw ConfigError("model.encoder_widths must be positive");
  }
  for (int w : c.decoder_widths) {
    if (w < 1) throw ConfigError("model.decoder_widths must be positive");
  }
  if (c.classifier_conv_blocks < 0 || c.classifier_channels < 1 || c.classifier_hidden < 1) {
    throw ConfigError("model classifier sizes must be positive");
  }
  const int factor = c.downsampling_factor();
  if (c.input_rows <= 0 || c.input_cols <= 0 || c.input_rows % factor != 0 || c.input_cols % factor != 0) {
    throw ConfigError("model input size " + std::to_string(c.input_rows) + "x" + std::to_string(c.input_cols) +
                      " is not divisible by the downsampling factor " + std::to_string(factor));
  }
  if (!(c.height_scale > 0.0)) throw ConfigError("model.height_scale must be > 0");
}

json model_config_to_json(const ModelConfig& c) {
  return {{"n_branches", c.n_branches},
          {"input_channels", c.input_channels},
          {"input_rows", c.input_rows},
          {"input_cols", c.input_cols},
          {"stem_factor", c.stem_factor},
          {"encoder_widths", c.encoder_widths},
          {"decoder_widths", c.decoder_widths},
          {"classifier_conv_blocks", c.classifier_conv_blocks},
          {"classifier_channels", c.classifier_channels},
          {"classifier_hidden", c.classifier_hidden},
          {"height_scale", c.height_scale}};
}

ModelConfig model_config_from_json(const json& doc) {
  using namespace jsonutil;
  const std::string ctx = "model";
  require_keys_within(doc,
                      {"n_branches", "input_channels", "input_rows", "input_cols", "stem_factor", "encoder_widths",
                       "decoder_widths", "classifier_conv_blocks", "classifier_channels", "classifier_hidden",
                       "height_scale"},
                      ctx);
  ModelConfig c;
  read_optional(doc, "n_branches", c.n_branches, ctx);
  read_optional(doc, "input_channels", c.input_channels, ctx);
  read_optional(doc, "input_rows", c.input_rows, ctx);
  read_optional(doc, "input_cols", c.input_cols, ctx);
  read_optional(doc, "stem_factor", c.stem_factor, ctx);
  read_optional(doc, "encoder_widths", c.encoder_widths, ctx);
  read_optional(doc, "decoder_widths", c.decoder_widths, ctx);
  read_optional(doc, "classifier_conv_blocks", c.classifier_conv_blocks, ctx);
  read_optional(doc, "classifier_channels", c.classifier_channels, ctx);
  read_optional(doc, "classifier_hidden", c.classifier_hidden, ctx);
  read_optional(doc, "height_scale", c.height_scale, ctx);
  return c;
}

namespace {

torch::nn::Conv2d conv3x3(int in, int out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

}  // namespace

EncoderImpl::EncoderImpl(const ModelConfig& c) : stem_factor_(c.stem_factor) {
  int in = c.input_channels * c.stem_factor * c.stem_factor;
  for (std::size_t i = 0; i < c.encoder_widths.size(); ++i) {
    levels_.push_back(register_module("level" + std::to_string(i), conv3x3(in, c.encoder_widths[i])));
    in = c.encoder_widths[i];
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(torch::Tensor x) {
  if (stem_factor_ > 1) x = torch::pixel_unshuffle(x, stem_factor_);
  std::vector<torch::Tensor> features;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    if (i > 0) x = torch::max_pool2d(x, 2);
    x = torch::relu(levels_[i]->forward(x));
    features.push_back(x);
  }
  return features;
}

DecoderImpl::DecoderImpl(const ModelConfig& c) : stem_factor_(c.stem_factor), height_scale_(c.height_scale) {
  const auto& enc = c.encoder_widths;
  const std::size_t levels = enc.size();
  int in = enc.back();
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    const int skip = enc[levels - 2 - i];
    stages_.push_back(register_module("stage" + std::to_string(i), conv3x3(in + skip, c.decoder_widths[i])));
    in = c.decoder_widths[i];
  }
  head_ = register_module(
      "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, c.stem_factor * c.stem_factor, 1)));
}

torch::Tensor DecoderImpl::forward(const std::vector<torch::Tensor>& features) {
  torch::Tensor x = features.back();
  const std::size_t levels = features.size();
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    x = torch::relu(stages_[i]->forward(torch::cat({x, features[levels - 2 - i]}, 1)));
  }
  x = head_->forward(x);
  if (stem_factor_ > 1) x = torch::pixel_shuffle(x, stem_factor_);
  return x * height_scale_;
}

QualityClassifierImpl::QualityClassifierImpl(const ModelConfig& c) {
  int in = c.encoder_widths.back();
  for (int b = 0; b < c.classifier_conv_blocks; ++b) {
    blocks_.push_back(register_module("block" + std::to_string(b), conv3x3(in, c.classifier_channels)));
    in = c.classifier_channels;
  }
  hidden_ = register_module("hidden", torch::nn::Linear(in, c.classifier_hidden));
  out_ = register_module("out", torch::nn::Linear(c.classifier_hidden, c.n_branches));
}

torch::Tensor QualityClassifierImpl::forward(torch::Tensor x) {
  for (auto& block : blocks_) {
    x = torch::relu(block->forward(x));
    if (x.size(2) >= 2 && x.size(3) >= 2) x = torch::max_pool2d(x, 2);
  }
  x = x.mean({2, 3});
  return out_->forward(torch::relu(hidden_->forward(x)));
}

EnsembleNetImpl::EnsembleNetImpl(ModelConfig config) : config_(std::move(config)) {
  validate_model_config(config_);
  encoder = register_module("encoder", Encoder(config_));
  for (int c = 0; c < config_.n_branches; ++c) {
    decoders.push_back(register_module("decoder_" + std::to_string(c), Decoder(config_)));
  }
  if (config_.has_classifier()) classifier = register_module("classifier", QualityClassifier(config_));
}

EnsembleOutput EnsembleNetImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4, "images must be [B x C x H x W]");
  const int factor = config_.downsampling_factor();
  if (images.size(1) != config_.input_channels || images.size(2) % factor != 0 || images.size(3) % factor != 0) {
    throw DataError("input of shape " + std::to_string(images.size(1)) + "x" + std::to_string(images.size(2)) + "x" +
                    std::to_string(images.size(3)) + " incompatible with the model");
  }
  const auto features = encoder->forward(images);
  std::vector<torch::Tensor> maps;
  maps.reserve(decoders.size());
  for (auto& d : decoders) maps.push_back(d->forward(features));
  EnsembleOutput out;
  out.branch_heights = torch::cat(maps, 1);
  out.class_logits = classifier ? classifier->forward(features.back())
                                : torch::zeros({images.size(0), 1}, images.options());
  out.class_probs = torch::softmax(out.class_logits, 1);
  return out;
}

std::map<std::string, std::vector<torch::Tensor>> EnsembleNetImpl::parameter_groups() const {
  std::map<std::string, std::vector<torch::Tensor>> groups;
  for (const auto& item : named_parameters(true)) {
    const auto& key = item.key();
    groups[key.substr(0, key.find('.'))].push_back(item.value());
  }
  return groups;
}

torch::Tensor blend(const EnsembleOutput& output) { return blend(output, output.class_probs); }

torch::Tensor blend(const EnsembleOutput& output, const torch::Tensor& weights) {
  auto w = weights.to(output.branch_heights.dtype());
  if (w.dim() == 1) w = w.unsqueeze(0).expand({output.branch_heights.size(0), w.size(0)});
  return (output.branch_heights * w.unsqueeze(-1).unsqueeze(-1)).sum(1);
}

torch::Tensor branch_prediction(const EnsembleOutput& output, int branch) {
  if (branch < 0 || branch >= output.branch_heights.size(1)) {
    throw std::out_of_range("branch " + std::to_string(branch) + " not present in the ensemble");
  }
  return output.branch_heights.select(1, branch);
}

torch::Tensor branch_prediction(const EnsembleOutput& output, QualityClass quality) {
  return branch_prediction(output, index_of(quality));
}

InferenceMode InferenceMode::from_string(const std::string& text) {
  if (text == "classifier") return {Kind::Classifier, 0};
  if (text == "uniform") return {Kind::Uniform, 0};
  if (text.rfind("branch:", 0) == 0) {
    try {
      return {Kind::Branch, std::stoi(text.substr(7))};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown inference mode '" + text + "'");
}

std::string InferenceMode::to_string() const {
  switch (kind) {
    case Kind::Classifier: return "classifier";
    case Kind::Uniform: return "uniform";
    case Kind::Branch: return "branch:" + std::to_string(branch);
  }
  return "classifier";
}

torch::Tensor stack_images(const std::vector<const Patch*>& patches) {
  std::vector<torch::Tensor> items;
  items.reserve(patches.size());
  for (const Patch* p : patches) {
    items.push_back(torch::from_blob(const_cast<float*>(p->image.data()),
                                     {static_cast<std::int64_t>(p->channels), p->rows, p->cols}, torch::kFloat));
  }
  return torch::stack(items);
}

torch::Tensor stack_heights(const std::vector<const Patch*>& patches) {
  std::vector<torch::Tensor> items;
  items.reserve(patches.size());
  for (const Patch* p : patches) {
    items.push_back(torch::from_blob(const_cast<float*>(p->height.data()),
                                     {static_cast<std::int64_t>(p->rows), p->cols}, torch::kFloat));
  }
  return torch::stack(items);
}

EnsemblePredictor::EnsemblePredictor(EnsembleNet model, InferenceMode mode, int batch_size)
    : model_(std::move(model)), mode_(mode), batch_size_(std::max(1, batch_size)) {
  if (mode_.kind == InferenceMode::Kind::Branch &&
      (mode_.branch < 0 || mode_.branch >= model_->config().n_branches)) {
    throw ConfigError("inference branch " + std::to_string(mode_.branch) + " not present in the model");
  }
}

std::vector<std::vector<float>> EnsemblePredictor::predict(const std::vector<const Patch*>& patches) {
  torch::NoGradGuard no_grad;
  model_->eval();
  std::vector<std::vector<float>> out;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += static_cast<std::size_t>(batch_size_)) {
    const std::size_t end = std::min(patches.size(), start + static_cast<std::size_t>(batch_size_));
    const std::vector<const Patch*> chunk(patches.begin() + static_cast<std::ptrdiff_t>(start),
                                          patches.begin() + static_cast<std::ptrdiff_t>(end));
    const auto result = model_->forward(stack_images(chunk));
    torch::Tensor maps;
    switch (mode_.kind) {
      case InferenceMode::Kind::Classifier: maps = blend(result); break;
      case InferenceMode::Kind::Uniform: {
        const auto c = result.branch_heights.size(1);
        maps = blend(result, torch::full({c}, 1.0 / static_cast<double>(c)));
        break;
      }
      case InferenceMode::Kind::Branch: maps = branch_prediction(result, mode_.branch); break;
    }
    maps = maps.contiguous();
    for (std::int64_t b = 0; b < maps.size(0); ++b) {
      const auto m = maps[b];
      out.emplace_back(m.data_ptr<float>(), m.data_ptr<float>() + m.numel());
    }
  }
  return out;
}

std::vector<std::vector<float>> OraclePredictor::predict(const std::vector<const Patch*>& patches) {
  std::vector<std::vector<float>> out;
  out.reserve(patches.size());
  for (const Patch* p : patches) out.push_back(p->height);
  return out;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'W', 'K', 'C', '1'};

}  // namespace

Checkpoint make_checkpoint(const EnsembleNet& model, InferenceMode inference, json metadata) {
  Checkpoint ckpt;
  ckpt.kind = "ensemble";
  ckpt.model_config = model->config();
  ckpt.inference = inference;
  ckpt.metadata = std::move(metadata);
  ckpt.tensors = snapshot_parameters(model);
  return ckpt;
}

Checkpoint make_oracle_checkpoint() {
  Checkpoint ckpt;
  ckpt.kind = "oracle";
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json doc;
  doc["kind"] = ckpt.kind;
  doc["model_config"] = model_config_to_json(ckpt.model_config);
  doc["inference"] = ckpt.inference.to_string();
  doc["metadata"] = ckpt.metadata;
  json table = json::array();
  std::int64_t offset = 0;
  std::vector<torch::Tensor> payloads;
  for (const auto& [name, tensor] : ckpt.tensors) {
    const auto t = tensor.detach().to(torch::kFloat).contiguous();
    table.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}, {"count", t.numel()}});
    offset += t.numel();
    payloads.push_back(t);
  }
  doc["tensors"] = std::move(table);
  const std::string text = doc.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const std::uint16_t version = kCheckpointVersion;
  const auto json_len = static_cast<std::uint32_t>(text.size());
  out.write(kCheckpointMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&json_len), sizeof json_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payloads) {
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t fixed = 4 + 2 + 4;
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad checkpoint magic");
  }
  std::uint16_t version = 0;
  std::uint32_t json_len = 0;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&json_len, bytes.data() + 6, 4);
  if (version != kCheckpointVersion) throw FormatError(path.string() + ": unsupported checkpoint version");
  if (bytes.size() < fixed + json_len) throw FormatError(path.string() + ": truncated checkpoint header");

  Checkpoint ckpt;
  std::int64_t payload_floats = 0;
  try {
    const json doc = json::parse(std::string(bytes.data() + fixed, json_len));
    ckpt.kind = doc.at("kind").get<std::string>();
    if (ckpt.kind == "oracle") return ckpt;
    if (ckpt.kind != "ensemble") throw FormatError(path.string() + ": unknown checkpoint kind " + ckpt.kind);
    ckpt.model_config = model_config_from_json(doc.at("model_config"));
    ckpt.inference = InferenceMode::from_string(doc.at("inference").get<std::string>());
    ckpt.metadata = doc.value("metadata", json::object());
    const char* payload = bytes.data() + fixed + json_len;
    const std::size_t payload_bytes = bytes.size() - fixed - json_len;
    for (const auto& entry : doc.at("tensors")) {
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto count = entry.at("count").get<std::int64_t>();
      if (offset < 0 || count < 0 || static_cast<std::size_t>((offset + count) * 4) > payload_bytes) {
        throw FormatError(path.string() + ": tensor payload out of range");
      }
      auto t = torch::empty(shape, torch::kFloat);
      if (t.numel() != count) throw FormatError(path.string() + ": tensor shape/count mismatch");
      std::memcpy(t.data_ptr<float>(), payload + offset * 4, static_cast<std::size_t>(count) * 4);
      ckpt.tensors[entry.at("name").get<std::string>()] = t;
      payload_floats += count;
    }
    if (static_cast<std::size_t>(payload_floats * 4) != payload_bytes) {
      throw FormatError(path.string() + ": checkpoint payload length mismatch");
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return ckpt;
}

EnsembleNet restore_model(const Checkpoint& ckpt) {
  if (ckpt.kind != "ensemble") throw DataError("checkpoint of kind '" + ckpt.kind + "' holds no network");
  EnsembleNet model(ckpt.model_config);
  load_parameters(model, ckpt.tensors);
  return model;
}

std::unique_ptr<HeightPredictor> make_predictor(const Checkpoint& ckpt) {
  if (ckpt.kind == "oracle") return std::make_unique<OraclePredictor>();
  return std::make_unique<EnsemblePredictor>(restore_model(ckpt), ckpt.inference);
}

std::map<std::string, torch::Tensor> snapshot_parameters(const EnsembleNet& model) {
  std::map<std::string, torch::Tensor> values;
  for (const auto& item : model->named_parameters(true)) values[item.key()] = item.value().detach().clone();
  return values;
}

void load_parameters(EnsembleNet& model, const std::map<std::string, torch::Tensor>& values) {
  torch::NoGradGuard no_grad;
  auto params = model->named_parameters(true);
  if (params.size() != values.size()) throw DataError("parameter set does not match the model");
  for (auto& item : params) {
    const auto it = values.find(item.key());
    if (it == values.end() || it->second.sizes() != item.value().sizes()) {
      throw DataError("parameter '" + item.key() + "' missing or mis-shaped");
    }
    item.value().copy_(it->second);
  }
}

}  // namespace weakheight
