#pragma once

// Training loop: per-quality loss routing, ordinal constraints, label
// augmentation from the high-quality branch and validation-based selection.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "weakheight/core.hpp"
#include "weakheight/ensemble.hpp"
#include "weakheight/evalsuite.hpp"
#include "weakheight/gtaug.hpp"
#include "weakheight/losses.hpp"
#include "weakheight/synthcity.hpp"

namespace weakheight {

/// Which pixels are paired for the ordinal term. "cross" groups concatenate
/// the predictions of several images into one vector before sampling.
enum class ConstraintType {
  CrossHMPlusL,    // "(H+M)C+L": cross-image over high+mid, within-image for low
  WithinHM,        // "H+M": within-image, high and mid only
  CrossHM,         // "(H+M)C": cross-image over high+mid, low unconstrained
  WithinHML,       // "H+M+L": within-image for every quality
  RandomSampling,  // "(H+M)C+L" grouping with unbalanced pair draws
};

std::string to_string(ConstraintType t);
ConstraintType constraint_type_from_string(const std::string& text);

enum class TrainMode {
  Ensemble,         // the multi-branch pipeline
  SingleBranchAll,  // one branch, pixel-wise L1 against every label
  SingleBranchHigh  // one branch, pixel-wise L1 on high-quality data only
};

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& text);

enum class BatchComposition { Proportional, Stratified };

std::string to_string(BatchComposition b);
BatchComposition batch_composition_from_string(const std::string& text);

struct LossSwitches {
  bool domain_classifier = true;  // off: no L_DC, uniform blending at inference
  bool ordinal = true;            // off: L_OC is not computed
  bool augmentation = true;       // off: mid/low losses use the raw labels
};

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int threads = 1;

  double lambda_tau_mid = 0.3;
  double lambda_tau_low = 0.5;
  double fraction_mid = 0.1;
  double fraction_low = 0.1;
  PixelSampling pixel_sampling = PixelSampling::Balanced;

  int pair_budget = 0;  // pairs per constraint evaluation; 0 = H x W
  int height_classes = 20;
  double h_min = 1.0;
  double h_max = 150.0;
  ConstraintType constraint_type = ConstraintType::CrossHMPlusL;

  AugmentationState augmentation;
  LossSwitches switches;
  TrainMode mode = TrainMode::Ensemble;
  BatchComposition batch_composition = BatchComposition::Proportional;
};

/// Throws ConfigError on out-of-range values.
void validate_train_config(const TrainConfig& config);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Applies a named ablation ("no-classifier", "no-ordinal", "no-augmentation",
/// "random-pixels", "random-pairs", a constraint type name, or a baseline
/// "naive-l1" / "high-only"). Throws ConfigError for unknown names.
void apply_ablation(TrainConfig& config, const std::string& name);
std::vector<std::string> ablation_names();

/// Branch count and inference mode implied by the training configuration.
ModelConfig effective_model_config(ModelConfig model, const TrainConfig& config);
InferenceMode inference_mode_for(const TrainConfig& config);

/// Everything one optimization step needs, already stacked.
struct Batch {
  torch::Tensor images;                  // [B x C x H x W]
  torch::Tensor heights;                 // [B x H x W], the stored labels
  std::vector<QualityClass> qualities;   // per sample
};

Batch make_batch(const std::vector<const Patch*>& patches);

/// Differentiable loss terms of one step; `parts` holds their values.
struct StepLosses {
  torch::Tensor l_dc;
  torch::Tensor l_hh;
  torch::Tensor l_bsh;
  torch::Tensor l_oc;
  torch::Tensor total;
  LossBreakdown parts;
};

/// Forward pass plus loss routing, without touching the optimizer.
/// Throws DataError for an empty batch and NumericError for a non-finite term.
StepLosses compute_losses(EnsembleNet& model, const Batch& batch, const TrainConfig& config, const SidBins& bins,
                          const AugmentationState& aug, Rng& rng);

/// compute_losses, backward and one optimizer update.
LossBreakdown train_step(EnsembleNet& model, torch::optim::Optimizer& optimizer, const Batch& batch,
                         const TrainConfig& config, const SidBins& bins, const AugmentationState& aug, Rng& rng);

/// Index of the smallest value; ties resolve to the earliest. Throws
/// std::invalid_argument when empty.
std::size_t select_best(const std::vector<double>& val_rmse);

/// Runs `predictor` on `patches` and reports building-wise RMSE per
/// domain tag; tags in `in_domain_tags` form the in-domain group.
MetricsReport evaluate(HeightPredictor& predictor, const std::vector<const LabeledPatch*>& patches,
                       const std::set<std::string>& in_domain_tags);

struct EpochRecord {
  int epoch = 0;
  double train_total = 0.0;  // mean step total
  double eta = 1.0;          // value used during the epoch
  MetricsReport val;
};

struct FitResult {
  EnsembleNet model{nullptr};  // holds the best epoch's parameters
  InferenceMode inference;
  int best_epoch = 0;
  std::vector<EpochRecord> epochs;
};

struct FitHooks {
  std::ostream* log = nullptr;  // JSON-lines training log
  /// Called with the model whenever the validation metric improves.
  std::function<void(const EnsembleNet&, int epoch)> on_improvement;
};

/// Trains on the train split and selects the epoch with the lowest combined
/// validation RMSE. Requires non-empty train and val splits.
FitResult fit(const std::vector<LabeledPatch>& data, const ModelConfig& model_config, const TrainConfig& config,
              const FitHooks& hooks = {});

}  // namespace weakheight
