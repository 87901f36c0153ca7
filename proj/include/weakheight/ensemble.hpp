#pragma once

// Multi-branch height network: one shared encoder, one decoder per label
// quality and a label-quality classifier whose probabilities blend the
// branch outputs at inference time.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "weakheight/core.hpp"

namespace weakheight {

struct ModelConfig {
  int n_branches = 3;  // 2 (high/mid) or 3 (high/mid/low); 1 = plain single-branch baseline
  int input_channels = 3;
  int input_rows = 64;
  int input_cols = 64;
  int stem_factor = 2;  // space-to-depth factor applied before the encoder
  std::vector<int> encoder_widths{16, 32, 64, 96};
  std::vector<int> decoder_widths{64, 32, 16};  // deepest first; one per skip level
  int classifier_conv_blocks = 2;
  int classifier_channels = 32;
  int classifier_hidden = 32;
  double height_scale = 10.0;  // meters per unit of raw decoder output

  /// Product of the stem factor and the encoder pooling steps.
  int downsampling_factor() const;
  bool has_classifier() const { return n_branches > 1; }
};

/// Throws ConfigError for inconsistent widths, branch counts or an input size
/// not divisible by the downsampling factor.
void validate_model_config(const ModelConfig& config);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

struct EnsembleOutput {
  torch::Tensor branch_heights;  // [B x C x H x W], meters
  torch::Tensor class_logits;    // [B x C]
  torch::Tensor class_probs;     // [B x C], rows on the simplex
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);
  /// Feature maps, shallowest first; the last one is the bottleneck.
  std::vector<torch::Tensor> forward(torch::Tensor x);

 private:
  int stem_factor_;
  std::vector<torch::nn::Conv2d> levels_;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ModelConfig& config);
  /// [B x 1 x H x W] height map, no final activation.
  torch::Tensor forward(const std::vector<torch::Tensor>& features);

 private:
  int stem_factor_;
  double height_scale_;
  std::vector<torch::nn::Conv2d> stages_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

class QualityClassifierImpl : public torch::nn::Module {
 public:
  explicit QualityClassifierImpl(const ModelConfig& config);
  torch::Tensor forward(torch::Tensor bottleneck);  // logits [B x C]

 private:
  std::vector<torch::nn::Conv2d> blocks_;
  torch::nn::Linear hidden_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(QualityClassifier);

class EnsembleNetImpl : public torch::nn::Module {
 public:
  explicit EnsembleNetImpl(ModelConfig config);

  EnsembleOutput forward(const torch::Tensor& images);

  const ModelConfig& config() const { return config_; }

  /// Trainable parameters keyed by owner: "encoder", "decoder_<c>", "classifier".
  std::map<std::string, std::vector<torch::Tensor>> parameter_groups() const;

  Encoder encoder{nullptr};
  std::vector<Decoder> decoders;
  QualityClassifier classifier{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(EnsembleNet);

/// sum_c p_c * h^c per pixel -> [B x H x W].
torch::Tensor blend(const EnsembleOutput& output);
/// Same, with explicit [B x C] (or [C]) weights.
torch::Tensor blend(const EnsembleOutput& output, const torch::Tensor& weights);
/// Height map of one branch -> [B x H x W]. Throws std::out_of_range if q >= C.
torch::Tensor branch_prediction(const EnsembleOutput& output, QualityClass quality);
torch::Tensor branch_prediction(const EnsembleOutput& output, int branch);

/// How branch outputs are combined into the final map.
struct InferenceMode {
  enum class Kind { Classifier, Uniform, Branch };
  Kind kind = Kind::Classifier;
  int branch = 0;

  static InferenceMode from_string(const std::string& text);  // "classifier" | "uniform" | "branch:<k>"
  std::string to_string() const;
};

/// Stacks patches into a [B x C x H x W] float tensor.
torch::Tensor stack_images(const std::vector<const Patch*>& patches);
torch::Tensor stack_heights(const std::vector<const Patch*>& patches);

/// Anything that maps patches to height maps (meters, row-major).
class HeightPredictor {
 public:
  virtual ~HeightPredictor() = default;
  virtual std::vector<std::vector<float>> predict(const std::vector<const Patch*>& patches) = 0;
};

class EnsemblePredictor : public HeightPredictor {
 public:
  EnsemblePredictor(EnsembleNet model, InferenceMode mode, int batch_size = 32);
  std::vector<std::vector<float>> predict(const std::vector<const Patch*>& patches) override;

  EnsembleNet model() const { return model_; }
  const InferenceMode& mode() const { return mode_; }

 private:
  EnsembleNet model_;
  InferenceMode mode_;
  int batch_size_;
};

/// Returns each patch's own label; evaluation-plumbing reference.
class OraclePredictor : public HeightPredictor {
 public:
  std::vector<std::vector<float>> predict(const std::vector<const Patch*>& patches) override;
};

// ---- checkpoints ----------------------------------------------------------
//
// "WKC1" | u16 version | u32 json_len | JSON | float32 LE tensor payloads.
// The JSON holds kind ("ensemble" | "oracle"), model_config, inference mode,
// free-form metadata and a tensor table {name, shape, offset, count}, where
// offset/count are in float32 elements from the start of the payload.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind = "ensemble";
  ModelConfig model_config;
  InferenceMode inference;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;  // named parameters
};

Checkpoint make_checkpoint(const EnsembleNet& model, InferenceMode inference,
                           nlohmann::json metadata = nlohmann::json::object());
Checkpoint make_oracle_checkpoint();

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the network and copies the stored parameters into it.
EnsembleNet restore_model(const Checkpoint& checkpoint);
std::unique_ptr<HeightPredictor> make_predictor(const Checkpoint& checkpoint);

/// Deep copy of parameter values (used to keep the best epoch in memory).
std::map<std::string, torch::Tensor> snapshot_parameters(const EnsembleNet& model);
void load_parameters(EnsembleNet& model, const std::map<std::string, torch::Tensor>& values);

}  // namespace weakheight
