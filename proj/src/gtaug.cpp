#include "weakheight/gtaug.hpp"

#include <algorithm>

#include "weakheight/errors.hpp"

namespace weakheight {

void validate_augmentation(const AugmentationState& s) {
  if (!(s.eta >= kEtaFloor && s.eta <= 1.0)) throw ConfigError("augmentation eta must lie in [0.5, 1]");
  if (!(s.alpha > 0.0 && s.alpha <= 1.0)) throw ConfigError("augmentation alpha must lie in (0, 1]");
  if (!(s.omega_rel >= 0.0)) throw ConfigError("augmentation omega_rel must be >= 0");
  if (!(s.dropout_p >= 0.0 && s.dropout_p < 1.0)) throw ConfigError("augmentation dropout_p must lie in [0, 1)");
}

AugmentationState decay_eta(AugmentationState state) {
  state.eta = std::max(state.eta * state.alpha, kEtaFloor);
  return state;
}

AugmentedLabel augment_ground_truth(const torch::Tensor& label, const torch::Tensor& high_branch_pred,
                                    const AugmentationState& state, Rng& rng) {
  if (label.sizes() != high_branch_pred.sizes()) throw DataError("augment_ground_truth: shape mismatch");
  if (high_branch_pred.requires_grad()) {
    throw std::invalid_argument("augment_ground_truth: high-branch prediction must be detached");
  }
  torch::NoGradGuard no_grad;
  AugmentedLabel out;
  out.dropped = draw_unit(rng) < state.dropout_p;
  if (out.dropped) {
    out.height = label.clone();
    return out;
  }
  const auto h0 = high_branch_pred.to(label.scalar_type());
  const auto trusted = (label - h0).abs() < label * state.omega_rel;
  const auto blended = label * state.eta + h0 * (1.0 - state.eta);
  out.height = torch::where(trusted, blended, label);
  out.trusted = trusted.sum().item<std::int64_t>();
  return out;
}

}  // namespace weakheight
