#include "weakheight/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "weakheight/errors.hpp"
#include "weakheight/json_util.hpp"

namespace weakheight {

using json = nlohmann::json;

namespace {

struct ConstraintName {
  ConstraintType type;
  const char* name;
};

constexpr ConstraintName kConstraintNames[] = {
    {ConstraintType::CrossHMPlusL, "(H+M)C+L"},
    {ConstraintType::WithinHM, "H+M"},
    {ConstraintType::CrossHM, "(H+M)C"},
    {ConstraintType::WithinHML, "H+M+L"},
    {ConstraintType::RandomSampling, "random-sampling"},
};

}  // namespace

std::string to_string(ConstraintType t) {
  for (const auto& c : kConstraintNames) {
    if (c.type == t) return c.name;
  }
  return "(H+M)C+L";
}

ConstraintType constraint_type_from_string(const std::string& text) {
  for (const auto& c : kConstraintNames) {
    if (text == c.name) return c.type;
  }
  throw ConfigError("unknown constraint type '" + text + "'");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Ensemble: return "ensemble";
    case TrainMode::SingleBranchAll: return "single-all";
    case TrainMode::SingleBranchHigh: return "single-high";
  }
  return "ensemble";
}

TrainMode train_mode_from_string(const std::string& text) {
  if (text == "ensemble") return TrainMode::Ensemble;
  if (text == "single-all") return TrainMode::SingleBranchAll;
  if (text == "single-high") return TrainMode::SingleBranchHigh;
  throw ConfigError("unknown train mode '" + text + "'");
}

std::string to_string(BatchComposition b) {
  return b == BatchComposition::Stratified ? "stratified" : "proportional";
}

BatchComposition batch_composition_from_string(const std::string& text) {
  if (text == "proportional") return BatchComposition::Proportional;
  if (text == "stratified") return BatchComposition::Stratified;
  throw ConfigError("unknown batch composition '" + text + "'");
}

void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("train.learning_rate must be > 0");
  }
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.threads < 1) throw ConfigError("train.threads must be >= 1");
  if (!(c.lambda_tau_mid >= 0.0) || !(c.lambda_tau_low >= 0.0)) {
    throw ConfigError("train.lambda_tau_mid/low must be >= 0");
  }
  if (!(c.fraction_mid > 0.0 && c.fraction_mid <= 1.0) || !(c.fraction_low > 0.0 && c.fraction_low <= 1.0)) {
    throw ConfigError("train.fraction_mid/low must lie in (0, 1]");
  }
  if (c.pair_budget < 0) throw ConfigError("train.pair_budget must be >= 0");
  sid_thresholds(c.h_min, c.h_max, c.height_classes);
  validate_augmentation(c.augmentation);
}

json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"threads", c.threads},
          {"lambda_tau_mid", c.lambda_tau_mid},
          {"lambda_tau_low", c.lambda_tau_low},
          {"fraction_mid", c.fraction_mid},
          {"fraction_low", c.fraction_low},
          {"pixel_sampling", c.pixel_sampling == PixelSampling::Balanced ? "balanced" : "random"},
          {"pair_budget", c.pair_budget},
          {"height_classes", c.height_classes},
          {"h_min", c.h_min},
          {"h_max", c.h_max},
          {"constraint_type", to_string(c.constraint_type)},
          {"eta0", c.augmentation.eta},
          {"alpha", c.augmentation.alpha},
          {"omega", c.augmentation.omega_rel},
          {"dropout", c.augmentation.dropout_p},
          {"domain_classifier", c.switches.domain_classifier},
          {"ordinal", c.switches.ordinal},
          {"augmentation", c.switches.augmentation},
          {"mode", to_string(c.mode)},
          {"batch_composition", to_string(c.batch_composition)}};
}

TrainConfig train_config_from_json(const json& doc) {
  using namespace jsonutil;
  const std::string ctx = "train";
  require_keys_within(doc,
                      {"epochs", "learning_rate", "batch_size", "seed", "threads", "lambda_tau_mid",
                       "lambda_tau_low", "fraction_mid", "fraction_low", "pixel_sampling", "pair_budget",
                       "height_classes", "h_min", "h_max", "constraint_type", "eta0", "alpha", "omega", "dropout",
                       "domain_classifier", "ordinal", "augmentation", "mode", "batch_composition"},
                      ctx);
  TrainConfig c;
  read_optional(doc, "epochs", c.epochs, ctx);
  read_optional(doc, "learning_rate", c.learning_rate, ctx);
  read_optional(doc, "batch_size", c.batch_size, ctx);
  read_optional(doc, "seed", c.seed, ctx);
  read_optional(doc, "threads", c.threads, ctx);
  read_optional(doc, "lambda_tau_mid", c.lambda_tau_mid, ctx);
  read_optional(doc, "lambda_tau_low", c.lambda_tau_low, ctx);
  read_optional(doc, "fraction_mid", c.fraction_mid, ctx);
  read_optional(doc, "fraction_low", c.fraction_low, ctx);
  std::string text;
  if (doc.contains("pixel_sampling")) {
    read_optional(doc, "pixel_sampling", text, ctx);
    if (text == "balanced") {
      c.pixel_sampling = PixelSampling::Balanced;
    } else if (text == "random") {
      c.pixel_sampling = PixelSampling::Random;
    } else {
      throw ConfigError("train.pixel_sampling must be 'balanced' or 'random'");
    }
  }
  read_optional(doc, "pair_budget", c.pair_budget, ctx);
  read_optional(doc, "height_classes", c.height_classes, ctx);
  read_optional(doc, "h_min", c.h_min, ctx);
  read_optional(doc, "h_max", c.h_max, ctx);
  if (doc.contains("constraint_type")) {
    read_optional(doc, "constraint_type", text, ctx);
    c.constraint_type = constraint_type_from_string(text);
  }
  read_optional(doc, "eta0", c.augmentation.eta, ctx);
  read_optional(doc, "alpha", c.augmentation.alpha, ctx);
  read_optional(doc, "omega", c.augmentation.omega_rel, ctx);
  read_optional(doc, "dropout", c.augmentation.dropout_p, ctx);
  read_optional(doc, "domain_classifier", c.switches.domain_classifier, ctx);
  read_optional(doc, "ordinal", c.switches.ordinal, ctx);
  read_optional(doc, "augmentation", c.switches.augmentation, ctx);
  if (doc.contains("mode")) {
    read_optional(doc, "mode", text, ctx);
    c.mode = train_mode_from_string(text);
  }
  if (doc.contains("batch_composition")) {
    read_optional(doc, "batch_composition", text, ctx);
    c.batch_composition = batch_composition_from_string(text);
  }
  validate_train_config(c);
  return c;
}

std::vector<std::string> ablation_names() {
  return {"no-classifier", "no-ordinal",  "no-augmentation", "random-pixels", "random-pairs",
          "H+M",           "(H+M)C",      "H+M+L",           "naive-l1",      "high-only"};
}

void apply_ablation(TrainConfig& c, const std::string& name) {
  if (name == "no-classifier") {
    c.switches.domain_classifier = false;
  } else if (name == "no-ordinal") {
    c.switches.ordinal = false;
  } else if (name == "no-augmentation") {
    c.switches.augmentation = false;
  } else if (name == "random-pixels") {
    c.pixel_sampling = PixelSampling::Random;
  } else if (name == "random-pairs") {
    c.constraint_type = ConstraintType::RandomSampling;
  } else if (name == "H+M" || name == "(H+M)C" || name == "H+M+L") {
    c.constraint_type = constraint_type_from_string(name);
  } else if (name == "naive-l1") {
    c.mode = TrainMode::SingleBranchAll;
  } else if (name == "high-only") {
    c.mode = TrainMode::SingleBranchHigh;
  } else {
    throw ConfigError("unknown ablation '" + name + "'");
  }
}

ModelConfig effective_model_config(ModelConfig model, const TrainConfig& config) {
  if (config.mode != TrainMode::Ensemble) model.n_branches = 1;
  return model;
}

InferenceMode inference_mode_for(const TrainConfig& config) {
  if (config.mode != TrainMode::Ensemble) return {InferenceMode::Kind::Branch, 0};
  if (!config.switches.domain_classifier) return {InferenceMode::Kind::Uniform, 0};
  return {InferenceMode::Kind::Classifier, 0};
}

Batch make_batch(const std::vector<const Patch*>& patches) {
  if (patches.empty()) throw DataError("empty batch");
  Batch b;
  b.images = stack_images(patches);
  b.heights = stack_heights(patches);
  for (const Patch* p : patches) b.qualities.push_back(p->quality);
  return b;
}

namespace {

double lambda_for(QualityClass q, const TrainConfig& c) {
  return q == QualityClass::Low ? c.lambda_tau_low : c.lambda_tau_mid;
}

double fraction_for(QualityClass q, const TrainConfig& c) {
  return q == QualityClass::Low ? c.fraction_low : c.fraction_mid;
}

// One ordinal-constraint evaluation over the flattened predictions of one or
// more images, with height classes from the stored labels.
torch::Tensor constraint_term(const std::vector<torch::Tensor>& preds, const std::vector<torch::Tensor>& labels,
                              const TrainConfig& config, const SidBins& bins, std::size_t budget, Rng& rng) {
  std::vector<torch::Tensor> flat_preds;
  std::vector<int> classes;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    flat_preds.push_back(preds[i].reshape({-1}));
    const auto lab = labels[i].to(torch::kFloat).contiguous();
    const std::span<const float> values(lab.data_ptr<float>(), static_cast<std::size_t>(lab.numel()));
    const auto cls = heights_to_classes(values, bins);
    classes.insert(classes.end(), cls.begin(), cls.end());
  }
  const auto pairs = config.constraint_type == ConstraintType::RandomSampling
                         ? random_pair_sample(std::span<const int>(classes), budget, rng)
                         : balanced_pair_sample(std::span<const int>(classes), budget, rng);
  return ordinal_constraint_loss(torch::cat(flat_preds), pairs);
}

double checked_value(const torch::Tensor& t, const char* component) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NumericError(component, std::string("non-finite ") + component);
  return v;
}

}  // namespace

StepLosses compute_losses(EnsembleNet& model, const Batch& batch, const TrainConfig& config, const SidBins& bins,
                          const AugmentationState& aug, Rng& rng) {
  const auto n = static_cast<std::int64_t>(batch.qualities.size());
  if (n == 0) throw DataError("empty batch");
  const bool ensemble = config.mode == TrainMode::Ensemble;
  const int branches = model->config().n_branches;
  if (ensemble) {
    for (QualityClass q : batch.qualities) {
      if (index_of(q) >= branches) {
        throw ConfigError("batch holds " + std::string(to_string(q)) + "-quality labels but the model has " +
                          std::to_string(branches) + " branches");
      }
    }
  }

  const auto out = model->forward(batch.images);
  const auto zero = torch::zeros({}, out.branch_heights.options());
  StepLosses s;
  s.l_dc = zero;
  s.l_hh = zero;
  s.l_bsh = zero;
  s.l_oc = zero;

  if (ensemble && config.switches.domain_classifier && model->config().has_classifier()) {
    std::vector<std::int64_t> targets;
    for (QualityClass q : batch.qualities) targets.push_back(index_of(q));
    s.l_dc = domain_classification_loss(out.class_probs, torch::tensor(targets, torch::kLong));
  }

  // Height terms: each sample only supervises its own-quality branch.
  std::vector<torch::Tensor> own(static_cast<std::size_t>(n));
  std::vector<torch::Tensor> hh_terms;
  std::vector<torch::Tensor> bsh_terms;
  for (std::int64_t i = 0; i < n; ++i) {
    const QualityClass q = batch.qualities[static_cast<std::size_t>(i)];
    const int branch = ensemble ? index_of(q) : 0;
    own[static_cast<std::size_t>(i)] = out.branch_heights[i][branch];
    const auto label = batch.heights[i];
    if (!ensemble || q == QualityClass::High) {
      hh_terms.push_back(hard_height_loss(own[static_cast<std::size_t>(i)], label));
      continue;
    }
    torch::Tensor target = label;
    if (config.switches.augmentation) {
      target = augment_ground_truth(label, out.branch_heights[i][0].detach(), aug, rng).height;
    }
    bsh_terms.push_back(balanced_soft_height_loss(own[static_cast<std::size_t>(i)], target, lambda_for(q, config),
                                                  fraction_for(q, config), rng, config.pixel_sampling));
  }
  if (!hh_terms.empty()) s.l_hh = torch::stack(hh_terms).mean();
  if (!bsh_terms.empty()) s.l_bsh = torch::stack(bsh_terms).mean();

  if (ensemble && config.switches.ordinal) {
    const auto pixels = static_cast<std::size_t>(batch.heights.size(1) * batch.heights.size(2));
    const std::size_t budget = config.pair_budget > 0 ? static_cast<std::size_t>(config.pair_budget) : pixels;
    const bool cross = config.constraint_type == ConstraintType::CrossHMPlusL ||
                       config.constraint_type == ConstraintType::CrossHM ||
                       config.constraint_type == ConstraintType::RandomSampling;
    const bool low_within = config.constraint_type == ConstraintType::CrossHMPlusL ||
                            config.constraint_type == ConstraintType::WithinHML ||
                            config.constraint_type == ConstraintType::RandomSampling;
    std::vector<torch::Tensor> terms;
    std::vector<torch::Tensor> group_preds;
    std::vector<torch::Tensor> group_labels;
    for (std::int64_t i = 0; i < n; ++i) {
      const QualityClass q = batch.qualities[static_cast<std::size_t>(i)];
      const auto& pred = own[static_cast<std::size_t>(i)];
      const auto label = batch.heights[i];
      if (q == QualityClass::Low) {
        if (low_within) terms.push_back(constraint_term({pred}, {label}, config, bins, budget, rng));
      } else if (cross) {
        group_preds.push_back(pred);
        group_labels.push_back(label);
      } else {
        terms.push_back(constraint_term({pred}, {label}, config, bins, budget, rng));
      }
    }
    if (!group_preds.empty()) terms.push_back(constraint_term(group_preds, group_labels, config, bins, budget, rng));
    if (!terms.empty()) s.l_oc = torch::stack(terms).mean();
  }

  s.parts.l_dc = checked_value(s.l_dc, "l_dc");
  s.parts.l_hh = checked_value(s.l_hh, "l_hh");
  s.parts.l_bsh = checked_value(s.l_bsh, "l_bsh");
  s.parts.l_oc = checked_value(s.l_oc, "l_oc");
  s.parts = with_total(s.parts);
  s.total = s.l_dc + s.l_hh + s.l_bsh + s.l_oc;
  return s;
}

LossBreakdown train_step(EnsembleNet& model, torch::optim::Optimizer& optimizer, const Batch& batch,
                         const TrainConfig& config, const SidBins& bins, const AugmentationState& aug, Rng& rng) {
  model->train();
  optimizer.zero_grad();
  auto losses = compute_losses(model, batch, config, bins, aug, rng);
  losses.total.backward();
  optimizer.step();
  return losses.parts;
}

std::size_t select_best(const std::vector<double>& val_rmse) {
  if (val_rmse.empty()) throw std::invalid_argument("select_best: no validation entries");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_rmse.size(); ++i) {
    if (val_rmse[i] < val_rmse[best]) best = i;
  }
  return best;
}

MetricsReport evaluate(HeightPredictor& predictor, const std::vector<const LabeledPatch*>& patches,
                       const std::set<std::string>& in_domain_tags) {
  std::vector<const Patch*> inputs;
  inputs.reserve(patches.size());
  for (const auto* lp : patches) inputs.push_back(&lp->patch);
  const auto preds = predictor.predict(inputs);
  std::map<std::string, SetResult> sets;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& lp = *patches[i];
    auto& set = sets[lp.entry.domain_tag];
    set.group = in_domain_tags.contains(lp.entry.domain_tag) ? DomainGroup::In : DomainGroup::Out;
    const auto recs = building_records(lp.entry.path, preds[i], lp.patch.height, lp.patch.instances);
    set.records.insert(set.records.end(), recs.begin(), recs.end());
  }
  std::erase_if(sets, [](const auto& item) { return item.second.records.empty(); });
  if (sets.empty()) throw DataError("no buildings to evaluate");
  return grouped_report(sets);
}

namespace {

// Fisher-Yates on top of draw_below so the order does not depend on the
// standard library's shuffle.
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[draw_below(rng, i)]);
  }
}

std::vector<std::size_t> epoch_order(const std::vector<const LabeledPatch*>& train, const TrainConfig& config,
                                     Rng& rng) {
  std::vector<std::size_t> order;
  if (config.batch_composition == BatchComposition::Proportional) {
    order.resize(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, rng);
    return order;
  }
  // Stratified: round-robin over per-quality shuffles so consecutive batches
  // mix every quality present.
  std::vector<std::vector<std::size_t>> by_quality(kQualityClassCount);
  for (std::size_t i = 0; i < train.size(); ++i) {
    by_quality[static_cast<std::size_t>(index_of(train[i]->patch.quality))].push_back(i);
  }
  for (auto& list : by_quality) shuffle_indices(list, rng);
  std::vector<std::size_t> cursor(by_quality.size(), 0);
  while (order.size() < train.size()) {
    for (std::size_t q = 0; q < by_quality.size(); ++q) {
      if (cursor[q] < by_quality[q].size()) order.push_back(by_quality[q][cursor[q]++]);
    }
  }
  return order;
}

json step_record(int epoch, int step, const LossBreakdown& l, double eta) {
  return {{"kind", "step"}, {"epoch", epoch}, {"step", step}, {"l_dc", l.l_dc},   {"l_hh", l.l_hh},
          {"l_bsh", l.l_bsh}, {"l_oc", l.l_oc}, {"total", l.total}, {"eta", eta}};
}

json epoch_record(const EpochRecord& r) {
  json j = {{"kind", "epoch"}, {"epoch", r.epoch}, {"train_total", r.train_total}, {"eta", r.eta}};
  for (const auto& [set, rmse] : r.val.per_set_rmse) j["val_rmse_" + set] = rmse;
  j["val_rmse_in"] = r.val.in_domain_avg;
  j["val_rmse_out"] = r.val.out_domain_avg;
  j["val_rmse_combined"] = r.val.combined_avg;
  return j;
}

}  // namespace

FitResult fit(const std::vector<LabeledPatch>& data, const ModelConfig& model_config, const TrainConfig& config,
              const FitHooks& hooks) {
  validate_train_config(config);
  const ModelConfig mc = effective_model_config(model_config, config);
  validate_model_config(mc);

  std::vector<const LabeledPatch*> train;
  std::vector<const LabeledPatch*> val;
  std::set<std::string> in_tags;
  for (const auto& lp : data) {
    if (lp.entry.split == Split::Train) {
      if (lp.entry.quality == QualityClass::High) in_tags.insert(lp.entry.domain_tag);
      if (config.mode == TrainMode::SingleBranchHigh && lp.patch.quality != QualityClass::High) continue;
      train.push_back(&lp);
    } else if (lp.entry.split == Split::Val) {
      val.push_back(&lp);
    }
  }
  if (train.empty()) throw DataError("no training patches");
  if (val.empty()) throw DataError("no validation patches");

  torch::set_num_threads(config.threads);
  torch::manual_seed(config.seed);
  Rng rng(mix_seed(config.seed, 7));

  FitResult result;
  result.model = EnsembleNet(mc);
  result.inference = inference_mode_for(config);
  torch::optim::Adam optimizer(result.model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const SidBins bins = sid_thresholds(config.h_min, config.h_max, config.height_classes);

  AugmentationState aug = config.augmentation;
  std::map<std::string, torch::Tensor> best_params;
  std::vector<double> val_history;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(train, config, rng);
    EpochRecord record;
    record.epoch = epoch;
    record.eta = aug.eta;
    double total_sum = 0.0;
    int steps_in_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const Patch*> members;
      for (std::size_t k = start; k < end; ++k) members.push_back(&train[order[k]]->patch);
      const auto losses = train_step(result.model, optimizer, make_batch(members), config, bins, aug, rng);
      if (hooks.log) *hooks.log << step_record(epoch, step, losses, aug.eta).dump() << '\n';
      total_sum += losses.total;
      ++steps_in_epoch;
      ++step;
    }
    record.train_total = total_sum / std::max(1, steps_in_epoch);

    EnsemblePredictor predictor(result.model, result.inference);
    record.val = evaluate(predictor, val, in_tags);
    if (hooks.log) *hooks.log << epoch_record(record).dump() << '\n' << std::flush;

    val_history.push_back(record.val.combined_avg);
    if (select_best(val_history) == static_cast<std::size_t>(epoch)) {
      best_params = snapshot_parameters(result.model);
      result.best_epoch = epoch;
      if (hooks.on_improvement) hooks.on_improvement(result.model, epoch);
    }
    result.epochs.push_back(std::move(record));
    aug = decay_eta(aug);
  }
  load_parameters(result.model, best_params);
  return result;
}

}  // namespace weakheight
