// Command-line entry point: synth, train, eval, predict, report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "weakheight/config.hpp"
#include "weakheight/core.hpp"
#include "weakheight/ensemble.hpp"
#include "weakheight/errors.hpp"
#include "weakheight/evalsuite.hpp"
#include "weakheight/synthcity.hpp"
#include "weakheight/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace weakheight;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Float32 little-endian .npy, C order.
void write_npy(const fs::path& path, const std::vector<float>& values, std::uint32_t rows, std::uint32_t cols) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(rows) + ", " +
                       std::to_string(cols) + "), }";
  const std::size_t preamble = 10;
  while ((preamble + header.size() + 1) % 64 != 0) header.push_back(' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out << header;
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json synth_section(const RunConfig& rc) { return run_config_to_json(rc).at("synth"); }

// Dataset directory: explicit flag, else the cache keyed by the synth
// section, else paths.data.
fs::path dataset_dir(const RunConfig& rc, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* cache = std::getenv("WEAKHEIGHT_CACHE"); cache && *cache) {
    return fs::path(cache) / ("synth-" + fingerprint(synth_section(rc).dump()));
  }
  return rc.data_dir;
}

DatasetManifest run_synth(const RunConfig& rc, const fs::path& dir) {
  const auto data = synthesize(resolved_synth_plan(rc));
  const auto manifest = write_dataset(data, dir);
  write_text(dir / "synth.json", synth_section(rc).dump(2) + "\n");
  return manifest;
}

void print_summary(const DatasetManifest& manifest, const fs::path& dir) {
  std::map<std::string, std::map<std::string, int>> counts;
  for (const auto& e : manifest.entries) {
    counts[e.domain_tag + " (" + std::string(to_string(e.quality)) + ")"][std::string(to_string(e.split))]++;
  }
  std::cout << "dataset: " << (dir / "manifest.json").string() << '\n';
  for (const auto& [city, splits] : counts) {
    std::cout << "  " << city;
    for (const auto& [split, n] : splits) std::cout << "  " << split << "=" << n;
    std::cout << '\n';
  }
}

// Dotted-path override: "train.epochs=5" with a JSON-parsed value (bare
// words fall back to strings).
void apply_set(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  std::string pointer = "/" + key;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const json::json_pointer ptr(pointer);
  doc[ptr] = value;
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const CommonOptions& opts) {
  json doc = opts.config_path.empty() ? run_config_to_json(default_run_config())
                                      : run_config_to_json(load_run_config(opts.config_path));
  for (const auto& s : opts.sets) apply_set(doc, s);
  RunConfig rc = run_config_from_json(doc);
  validate_run_config(rc);
  return rc;
}

std::vector<const LabeledPatch*> split_of(const std::vector<LabeledPatch>& data, Split split) {
  std::vector<const LabeledPatch*> out;
  for (const auto& lp : data) {
    if (lp.entry.split == split) out.push_back(&lp);
  }
  return out;
}

std::set<std::string> in_domain_of(const fs::path& manifest_path) {
  const auto tags = load_manifest(manifest_path, false).in_domain_tags();
  return {tags.begin(), tags.end()};
}

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "run config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.sets, "override a config key, e.g. --set train.epochs=5 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakheight: height estimation from imagery with mixed-quality labels"};
  app.require_subcommand(1);
  app.footer(config_help_text() +
             "\nAblations for train --ablate: " +
             [] {
               std::string s;
               for (const auto& n : ablation_names()) s += (s.empty() ? "" : ", ") + n;
               return s;
             }() +
             "\nEnvironment: WEAKHEIGHT_CACHE  directory for synthesized datasets\n"
             "Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure\n");

  // synth
  CommonOptions synth_opts;
  std::string synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and its manifest");
  add_common(synth, synth_opts);
  synth->add_option("-o,--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "base seed of the synthetic cities");

  // train
  CommonOptions train_opts;
  std::string train_manifest, train_out = "runs";
  std::vector<std::uint64_t> train_seeds;
  std::vector<std::string> ablations;
  std::optional<int> epochs, batch_size, workers;
  std::optional<double> lr, lambda_mid, lambda_low;
  bool oracle = false;
  auto* train = app.add_subcommand("train", "train a model (one run per --seed)");
  add_common(train, train_opts);
  train->add_option("-m,--manifest", train_manifest, "dataset manifest (synthesized from the config when omitted)");
  train->add_option("-o,--out", train_out, "output directory")->capture_default_str();
  train->add_option("--seed", train_seeds, "training seed (repeatable)");
  train->add_option("--ablate", ablations, "ablation or baseline name (repeatable)");
  train->add_option("--epochs", epochs, "override train.epochs");
  train->add_option("--batch-size", batch_size, "override train.batch_size");
  train->add_option("--lr", lr, "override train.learning_rate");
  train->add_option("--lambda-mid", lambda_mid, "override train.lambda_tau_mid");
  train->add_option("--lambda-low", lambda_low, "override train.lambda_tau_low");
  train->add_option("--workers", workers, "intra-op threads; >1 gives up bitwise reproducibility");
  train->add_flag("--oracle", oracle, "write a label-echoing checkpoint instead of training");

  // eval
  std::string eval_ckpt, eval_manifest, eval_out = "eval", eval_split = "test", eval_inference;
  auto* eval = app.add_subcommand("eval", "building-wise RMSE report for a checkpoint");
  eval->add_option("-k,--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("-m,--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("-o,--out", eval_out, "output directory")->capture_default_str();
  eval->add_option("--split", eval_split, "train | val | test")->capture_default_str();
  eval->add_option("--inference", eval_inference, "classifier | uniform | branch:<k>");

  // predict
  std::string pred_ckpt, pred_out = "predictions";
  std::vector<std::string> pred_inputs;
  std::optional<int> pred_branch;
  auto* predict = app.add_subcommand("predict", "height maps and PNGs for patch files");
  predict->add_option("-k,--checkpoint", pred_ckpt, "checkpoint file")->required();
  predict->add_option("patches", pred_inputs, "patch files (.wkh)")->required();
  predict->add_option("-o,--out", pred_out, "output directory")->capture_default_str();
  predict->add_option("--branch", pred_branch, "use only this branch (one-hot blending)");

  // report
  std::vector<std::string> report_inputs;
  std::string report_out = "summary";
  auto* report = app.add_subcommand("report", "aggregate report.json files over seeds");
  report->add_option("reports", report_inputs, "report.json files")->required();
  report->add_option("-o,--out", report_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      if (synth_seed) synth_opts.sets.push_back("synth.seed=" + std::to_string(*synth_seed));
      const RunConfig rc = resolve_config(synth_opts);
      const fs::path dir = dataset_dir(rc, synth_out);
      print_summary(run_synth(rc, dir), dir);
    } else if (*train) {
      if (epochs) train_opts.sets.push_back("train.epochs=" + std::to_string(*epochs));
      if (batch_size) train_opts.sets.push_back("train.batch_size=" + std::to_string(*batch_size));
      if (workers) train_opts.sets.push_back("train.threads=" + std::to_string(*workers));
      if (lr) train_opts.sets.push_back("train.learning_rate=" + json(*lr).dump());
      if (lambda_mid) train_opts.sets.push_back("train.lambda_tau_mid=" + json(*lambda_mid).dump());
      if (lambda_low) train_opts.sets.push_back("train.lambda_tau_low=" + json(*lambda_low).dump());
      RunConfig rc = resolve_config(train_opts);
      for (const auto& name : ablations) apply_ablation(rc.train, name);
      validate_train_config(rc.train);
      if (oracle) {
        fs::create_directories(train_out);
        save_checkpoint(make_oracle_checkpoint(), fs::path(train_out) / "checkpoint.wkc");
        std::cout << "oracle checkpoint: " << (fs::path(train_out) / "checkpoint.wkc").string() << '\n';
        return 0;
      }

      fs::path manifest_path = train_manifest;
      if (manifest_path.empty()) {
        const fs::path dir = dataset_dir(rc, "");
        manifest_path = dir / "manifest.json";
        if (!fs::exists(manifest_path)) print_summary(run_synth(rc, dir), dir);
      }
      const auto data = load_dataset(manifest_path);
      if (train_seeds.empty()) train_seeds.push_back(rc.train.seed);

      for (const std::uint64_t seed : train_seeds) {
        RunConfig run = rc;
        run.train.seed = seed;
        const fs::path dir = fs::path(train_out) / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        json recorded = run_config_to_json(run);
        recorded["ablations"] = ablations;
        recorded["manifest"] = fs::absolute(manifest_path).string();
        write_text(dir / "config.json", recorded.dump(2) + "\n");

        std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
        const auto ckpt_path = dir / "checkpoint.wkc";
        const auto inference = inference_mode_for(run.train);
        const json meta = {{"seed", seed}, {"ablations", ablations}};
        FitHooks hooks;
        hooks.log = &log;
        hooks.on_improvement = [&](const EnsembleNet& model, int epoch) {
          json m = meta;
          m["epoch"] = epoch;
          save_checkpoint(make_checkpoint(model, inference, m), ckpt_path);
        };
        const auto result = fit(data, run.model, run.train, hooks);
        const auto& best = result.epochs[static_cast<std::size_t>(result.best_epoch)];
        std::cout << "seed " << seed << ": best epoch " << result.best_epoch << ", val combined RMSE "
                  << best.val.combined_avg << " m -> " << ckpt_path.string() << '\n';
      }
    } else if (*eval) {
      if (!fs::exists(eval_ckpt)) throw DataError("checkpoint not found: " + eval_ckpt);
      auto ckpt = load_checkpoint(eval_ckpt);
      if (!eval_inference.empty()) ckpt.inference = InferenceMode::from_string(eval_inference);
      auto predictor = make_predictor(ckpt);
      const auto data = load_dataset(eval_manifest);
      const auto patches = split_of(data, split_from_string(eval_split));
      if (patches.empty()) throw DataError("manifest has no " + eval_split + " entries");
      const auto metrics = evaluate(*predictor, patches, in_domain_of(eval_manifest));

      std::vector<const Patch*> inputs;
      for (const auto* lp : patches) inputs.push_back(&lp->patch);
      const auto preds = predictor->predict(inputs);
      std::vector<BuildingRecord> records;
      for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto r = building_records(patches[i]->entry.path, preds[i], patches[i]->patch.height,
                                        patches[i]->patch.instances);
        records.insert(records.end(), r.begin(), r.end());
      }
      const fs::path out(eval_out);
      write_text(out / "report.json", report_to_json(metrics) + "\n");
      write_text(out / "metrics.csv", report_to_csv(metrics));
      write_text(out / "buildings.csv", records_to_csv(records));
      std::cout << std::fixed << std::setprecision(4);
      for (const auto& [set, rmse] : metrics.per_set_rmse) {
        std::cout << "  " << std::left << std::setw(16) << set << to_string(metrics.per_set_group.at(set)) << "  "
                  << rmse << " m\n";
      }
      std::cout << "  in " << metrics.in_domain_avg << "  out " << metrics.out_domain_avg << "  combined "
                << metrics.combined_avg << " m\n";
    } else if (*predict) {
      auto ckpt = load_checkpoint(pred_ckpt);
      if (pred_branch) ckpt.inference = {InferenceMode::Kind::Branch, *pred_branch};
      auto predictor = make_predictor(ckpt);
      std::vector<Patch> patches;
      for (const auto& p : pred_inputs) patches.push_back(load_patch(p));
      std::vector<const Patch*> inputs;
      for (const auto& p : patches) inputs.push_back(&p);
      const auto preds = predictor->predict(inputs);
      const fs::path out(pred_out);
      fs::create_directories(out);
      for (std::size_t i = 0; i < patches.size(); ++i) {
        const std::string stem = fs::path(pred_inputs[i]).stem().string();
        write_npy(out / (stem + "_height.npy"), preds[i], patches[i].rows, patches[i].cols);
        render_maps(preds[i], patches[i].height, patches[i].instances, patches[i].rows, patches[i].cols, out / stem);
        std::cout << (out / (stem + "_height.npy")).string() << '\n';
      }
    } else if (*report) {
      std::map<std::string, std::vector<double>> per_set;
      std::map<std::string, std::string> groups;
      std::vector<double> in, out_dom, combined;
      for (const auto& path : report_inputs) {
        std::ifstream f(path);
        if (!f) throw DataError("cannot open report " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        const auto r = report_from_json(ss.str());
        for (const auto& [set, v] : r.per_set_rmse) {
          per_set[set].push_back(v);
          groups[set] = to_string(r.per_set_group.at(set));
        }
        in.push_back(r.in_domain_avg);
        out_dom.push_back(r.out_domain_avg);
        combined.push_back(r.combined_avg);
      }
      const auto stats = [](std::vector<double> v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double stdev = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        const double median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
        return json{{"mean", mean}, {"median", median}, {"std", stdev}, {"n", v.size()}};
      };
      json summary = {{"reports", report_inputs}, {"sets", json::object()}};
      std::ostringstream csv;
      csv << "set,group,n_runs,mean_rmse_m,median_rmse_m,std_rmse_m\n";
      for (const auto& [set, values] : per_set) {
        const auto s = stats(values);
        summary["sets"][set] = s;
        summary["sets"][set]["group"] = groups[set];
        csv << set << ',' << groups[set] << ',' << values.size() << ',' << s["mean"].get<double>() << ','
            << s["median"].get<double>() << ',' << s["std"].get<double>() << '\n';
      }
      summary["in_domain_avg"] = stats(in);
      summary["out_domain_avg"] = stats(out_dom);
      summary["combined_avg"] = stats(combined);
      write_text(fs::path(report_out) / "summary.json", summary.dump(2) + "\n");
      write_text(fs::path(report_out) / "summary.csv", csv.str());
      std::cout << summary.dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure in " << e.component() << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
