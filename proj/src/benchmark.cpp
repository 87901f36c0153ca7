#include "weakheight/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "weakheight/errors.hpp"
#include "weakheight/synthcity.hpp"
#include "weakheight/trainer.hpp"

namespace weakheight {

BenchmarkSetup default_benchmark_setup() {
  BenchmarkSetup s;
  RunConfig rc = default_run_config();
  s.plan = rc.synth;
  s.plan.truth_test_labels = true;
  for (auto& c : s.plan.cities) {
    c.train = 300;
    c.val = 60;
    c.test = 120;
  }
  // A city never seen in training.
  CityPlan delta;
  delta.style.name = "delta";
  delta.style.seed = 4;
  delta.style.sun_azimuth_deg = 145.0;
  delta.style.albedo_palette = {0.58f, 0.68f, 0.78f};
  delta.style.ground_albedo = 0.37f;
  delta.style.height_log_mean = std::log(13.0);
  delta.quality = QualityClass::High;
  delta.test = 120;
  s.plan.cities.push_back(delta);

  s.model.stem_factor = 4;
  s.model.encoder_widths = {24, 32, 48};
  s.model.decoder_widths = {32, 24};

  s.train.epochs = 30;
  s.train.batch_size = 16;
  s.train.learning_rate = 1e-3;
  s.train.batch_composition = BatchComposition::Stratified;
  return s;
}

std::vector<Variant> default_variants() {
  return {{"full", {}},
          {"naive-l1", {"naive-l1"}},
          {"high-only", {"high-only"}},
          {"no-classifier", {"no-classifier"}},
          {"no-ordinal", {"no-ordinal"}}};
}

double median_value(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

template <typename F>
double median_of_reports(const std::vector<MetricsReport>& reports, F field) {
  std::vector<double> v;
  for (const auto& r : reports) v.push_back(field(r));
  return median_value(v);
}

}  // namespace

double VariantResult::median_in() const {
  return median_of_reports(per_seed, [](const MetricsReport& r) { return r.in_domain_avg; });
}
double VariantResult::median_out() const {
  return median_of_reports(per_seed, [](const MetricsReport& r) { return r.out_domain_avg; });
}
double VariantResult::median_combined() const {
  return median_of_reports(per_seed, [](const MetricsReport& r) { return r.combined_avg; });
}

std::vector<VariantResult> run_benchmark(const BenchmarkSetup& setup, const std::vector<Variant>& variants,
                                         const BenchmarkProgress& progress) {
  SynthPlan plan = setup.plan;
  for (auto& c : plan.cities) c.style.seed = mix_seed(setup.synth_seed, c.style.seed);
  const auto data = synthesize(plan);

  std::set<std::string> in_tags;
  std::vector<const LabeledPatch*> test;
  for (const auto& lp : data) {
    if (lp.entry.split == Split::Train && lp.entry.quality == QualityClass::High) in_tags.insert(lp.entry.domain_tag);
    if (lp.entry.split == Split::Test) test.push_back(&lp);
  }

  std::vector<VariantResult> results;
  for (const auto& variant : variants) {
    VariantResult vr;
    vr.name = variant.name;
    for (const std::uint64_t seed : setup.seeds) {
      TrainConfig tc = setup.train;
      tc.seed = seed;
      for (const auto& a : variant.ablations) apply_ablation(tc, a);
      const auto start = std::chrono::steady_clock::now();
      auto fitted = fit(data, setup.model, tc);
      EnsemblePredictor predictor(fitted.model, fitted.inference);
      const auto report = evaluate(predictor, test, in_tags);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      vr.per_seed.push_back(report);
      vr.seconds.push_back(secs);
      if (progress) progress(variant.name, seed, report, secs);
    }
    results.push_back(std::move(vr));
  }
  return results;
}

}  // namespace weakheight
