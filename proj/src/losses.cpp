#include "weakheight/losses.hpp"

#include <cmath>
#include <vector>

#include "weakheight/errors.hpp"

namespace weakheight {

double total_loss(const LossBreakdown& parts) {
  const std::pair<const char*, double> named[] = {
      {"l_dc", parts.l_dc}, {"l_hh", parts.l_hh}, {"l_bsh", parts.l_bsh}, {"l_oc", parts.l_oc}};
  double sum = 0.0;
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) throw NumericError(name, std::string("non-finite loss component ") + name);
    sum += value;
  }
  return sum;
}

LossBreakdown with_total(LossBreakdown parts) {
  parts.total = total_loss(parts);
  return parts;
}

torch::Tensor domain_classification_loss(const torch::Tensor& class_probs, const torch::Tensor& targets) {
  TORCH_CHECK(class_probs.dim() == 2, "class_probs must be [B x C]");
  TORCH_CHECK(targets.dim() == 1 && targets.size(0) == class_probs.size(0), "targets must be [B]");
  const auto classes = class_probs.size(1);
  if (targets.numel() > 0 && (targets.max().item<std::int64_t>() >= classes || targets.min().item<std::int64_t>() < 0)) {
    throw std::out_of_range("domain_classification_loss: target class out of range");
  }
  const auto picked = class_probs.gather(1, targets.to(torch::kLong).unsqueeze(1)).squeeze(1);
  return -torch::log(picked.clamp_min(kProbabilityFloor)).mean();
}

torch::Tensor hard_height_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) throw DataError("hard_height_loss: shape mismatch");
  return (pred - gt).abs().mean();
}

double soft_height_residual(double pred, double gt, double lambda_tau) {
  const double err = std::abs(gt - pred);
  return err <= lambda_tau * gt ? 0.0 : err;
}

torch::Tensor soft_height_residuals(const torch::Tensor& pred, const torch::Tensor& gt, double lambda_tau) {
  if (pred.sizes() != gt.sizes()) throw DataError("soft_height_residuals: shape mismatch");
  if (lambda_tau < 0.0) throw ConfigError("lambda_tau must be >= 0");
  const auto err = (gt - pred).abs();
  const auto inside = err <= gt * lambda_tau;
  return torch::where(inside, torch::zeros_like(err), err);
}

torch::Tensor balanced_soft_height_loss(const torch::Tensor& pred, const torch::Tensor& gt, double lambda_tau,
                                        double fraction, Rng& rng, PixelSampling sampling) {
  if (pred.sizes() != gt.sizes()) throw DataError("balanced_soft_height_loss: shape mismatch");
  const auto gt_flat = gt.detach().reshape({-1}).to(torch::kDouble).contiguous();
  const std::span<const double> heights(gt_flat.data_ptr<double>(), static_cast<std::size_t>(gt_flat.numel()));
  const std::vector<std::size_t> picked = sampling == PixelSampling::Balanced
                                              ? balanced_pixel_sample(heights, fraction, rng)
                                              : random_pixel_sample(heights.size(), fraction, rng);
  std::vector<std::int64_t> idx(picked.begin(), picked.end());
  const auto index = torch::tensor(idx, torch::kLong);
  const auto p = pred.reshape({-1}).index_select(0, index);
  const auto g = gt.reshape({-1}).index_select(0, index);
  return soft_height_residuals(p, g, lambda_tau).mean();
}

double ordinal_pair_loss(double pred_a, double pred_b, int class_a, int class_b) {
  if (class_a == class_b) return 0.0;
  const double x = class_a > class_b ? pred_b - pred_a : pred_a - pred_b;
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

torch::Tensor ordinal_constraint_loss(const torch::Tensor& pred_values, const PixelPairSet& pairs) {
  if (pairs.pairs.empty()) return torch::zeros({}, pred_values.options());
  const auto n = static_cast<std::int64_t>(pairs.pairs.size());
  std::vector<std::int64_t> higher(static_cast<std::size_t>(n));
  std::vector<std::int64_t> lower(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < pairs.pairs.size(); ++k) {
    const auto& p = pairs.pairs[k];
    const bool a_higher = p.class_a > p.class_b;
    higher[k] = static_cast<std::int64_t>(a_higher ? p.index_a : p.index_b);
    lower[k] = static_cast<std::int64_t>(a_higher ? p.index_b : p.index_a);
  }
  const auto flat = pred_values.reshape({-1});
  const auto diff = flat.index_select(0, torch::tensor(lower, torch::kLong)) -
                    flat.index_select(0, torch::tensor(higher, torch::kLong));
  return torch::nn::functional::softplus(diff).mean();
}

}  // namespace weakheight
