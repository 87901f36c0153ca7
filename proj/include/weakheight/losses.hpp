#pragma once

// Training objectives. Tensor versions are differentiable through libtorch
// autograd; scalar helpers mirror them for single pixels.

#include <string>

#include <torch/torch.h>

#include "weakheight/heightbins.hpp"
#include "weakheight/rng.hpp"

namespace weakheight {

inline constexpr double kProbabilityFloor = 1e-12;

struct LossBreakdown {
  double l_dc = 0.0;   // label-quality ("domain") classification
  double l_hh = 0.0;   // hard height (L1) on high-quality labels
  double l_bsh = 0.0;  // balanced soft height on mid/low labels
  double l_oc = 0.0;   // ordinal constraints
  double total = 0.0;
};

/// Unweighted sum of the parts; throws NumericError naming the first
/// non-finite component.
double total_loss(const LossBreakdown& parts);
/// Fills `total` from the parts via total_loss.
LossBreakdown with_total(LossBreakdown parts);

/// Mean over the batch of -log(max(p[true], 1e-12)).
/// class_probs: [B x C] rows on the simplex; targets: [B] integer classes.
torch::Tensor domain_classification_loss(const torch::Tensor& class_probs, const torch::Tensor& targets);

/// Mean absolute error over all pixels.
torch::Tensor hard_height_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// |h - h_pred| when it exceeds lambda_tau * h, else 0 (boundary inside).
double soft_height_residual(double pred, double gt, double lambda_tau);

/// Element-wise soft residual; zero gradient inside the buffer.
torch::Tensor soft_height_residuals(const torch::Tensor& pred, const torch::Tensor& gt, double lambda_tau);

enum class PixelSampling { Balanced, Random };

/// Mean soft residual over a pixel subset drawn from `gt` (one map, any
/// shape; flattened row-major).
torch::Tensor balanced_soft_height_loss(const torch::Tensor& pred, const torch::Tensor& gt, double lambda_tau,
                                        double fraction, Rng& rng,
                                        PixelSampling sampling = PixelSampling::Balanced);

/// softplus(h_lower - h_higher) for the pair's lower/higher class members.
double ordinal_pair_loss(double pred_a, double pred_b, int class_a, int class_b);

/// Mean pairwise ordinal penalty over `pairs`, indexing the flattened
/// `pred_values`; an empty set yields 0.
torch::Tensor ordinal_constraint_loss(const torch::Tensor& pred_values, const PixelPairSet& pairs);

}  // namespace weakheight
