#pragma once

// Seeded end-to-end comparison on synthetic cities: the full pipeline
// against single-branch baselines and two ablations.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "weakheight/config.hpp"
#include "weakheight/evalsuite.hpp"

namespace weakheight {

struct BenchmarkSetup {
  SynthPlan plan;
  std::uint64_t synth_seed = 2024;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

/// The desk-scale setup used by the acceptance run.
BenchmarkSetup default_benchmark_setup();

struct Variant {
  std::string name;
  std::vector<std::string> ablations;  // passed to apply_ablation
};

/// full, naive-l1, high-only, no-classifier, no-ordinal.
std::vector<Variant> default_variants();

struct VariantResult {
  std::string name;
  std::vector<MetricsReport> per_seed;  // test split
  std::vector<double> seconds;

  double median_in() const;
  double median_out() const;
  double median_combined() const;
};

double median_value(std::vector<double> values);

using BenchmarkProgress = std::function<void(const std::string& variant, std::uint64_t seed, const MetricsReport&,
                                             double seconds)>;

std::vector<VariantResult> run_benchmark(const BenchmarkSetup& setup, const std::vector<Variant>& variants,
                                         const BenchmarkProgress& progress = {});

}  // namespace weakheight
