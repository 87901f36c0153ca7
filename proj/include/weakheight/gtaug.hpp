#pragma once

// Ground-truth augmentation: trusted pixels of a mid/low label are blended
// with the (detached) high-quality branch prediction to form a sharper
// pseudo label.

#include <torch/torch.h>

#include "weakheight/rng.hpp"

namespace weakheight {

inline constexpr double kEtaFloor = 0.5;

struct AugmentationState {
  double eta = 1.0;        // weight of the original label in the blend
  double alpha = 0.99;     // per-epoch decay of eta
  double omega_rel = 0.1;  // trust threshold relative to the label height
  double dropout_p = 0.3;  // chance that a patch keeps its original label
};

/// Throws ConfigError when a field is outside its admissible range.
void validate_augmentation(const AugmentationState& state);

/// eta <- max(eta * alpha, 0.5); called once at the end of every epoch.
AugmentationState decay_eta(AugmentationState state);

struct AugmentedLabel {
  torch::Tensor height;
  bool dropped = false;          // patch-level dropout fired
  std::int64_t trusted = 0;      // pixels taking the blended value
};

/// One Bernoulli(dropout_p) draw per patch; otherwise pixels with
/// |h - h0| < omega_rel * h take eta * h + (1 - eta) * h0.
/// `high_branch_pred` must not require grad.
AugmentedLabel augment_ground_truth(const torch::Tensor& label, const torch::Tensor& high_branch_pred,
                                    const AugmentationState& state, Rng& rng);

}  // namespace weakheight
