// Copyright 2026 The CapNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// File-level experiment commands behind the capnet tool.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "capnet/checkpoint.hpp"
#include "capnet/dataset.hpp"
#include "capnet/error.hpp"
#include "capnet/eval.hpp"
#include "capnet/hash.hpp"
#include "capnet/model.hpp"
#include "capnet/stats.hpp"
#include "capnet/train.hpp"

#ifndef CAPNET_VERSION
#define CAPNET_VERSION "0.1.0"
#endif

namespace capnet {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = CAPNET_VERSION;

inline nlohmann::json read_json_file(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("no such file '" + path + "'");
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Hash of the canonical (sorted-key, compact) JSON form.
inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

struct ExperimentManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::string dataset;           // dataset directory, if any
  std::string dataset_checksum;  // hash of its manifest.json
  std::vector<std::string> outputs;

  ojson to_json() const {
    return {{"tool", "capnet"},       {"version", kToolVersion},
            {"command", command},     {"config_hash", config_hash},
            {"seeds", seeds},         {"dataset", dataset},
            {"dataset_checksum", dataset_checksum}, {"outputs", outputs}};
  }
};

inline std::string dataset_checksum(const std::string& dir) {
  return hex64(fnv1a64(read_text_file(fs::path(dir) / "manifest.json")));
}

inline void write_manifest(const ExperimentManifest& m, const fs::path& out) {
  write_text_file(out / "manifest.json", m.to_json().dump(2) + "\n");
}

inline Dataset load_dataset_checked(const std::string& dir) {
  const std::string path = resolve_data_path(dir);
  if (path.empty() || !fs::exists(fs::path(path) / "manifest.json")) {
    throw ConfigError("dataset '" + dir + "' not found (expected a directory with manifest.json)");
  }
  return load_dataset(path);
}

// ---------------------------------------------------------------------------
// generate

struct GenerateSummary {
  SplitCounts counts;
  LabelStats train_stats;
};

inline GenerateSummary cmd_generate(const std::string& spec_path, const std::string& out_dir,
                                    std::ostream& log) {
  const auto j = read_json_file(spec_path);
  const DatasetSpec spec = dataset_spec_from_json(j);
  std::shared_ptr<const ImageBank> bank;
  if (spec.mode == FeatureMode::kImage) bank = load_image_bank(spec);
  const Dataset ds = generate_dataset(spec, bank.get());
  save_dataset(ds, out_dir);
  GenerateSummary s{ds.spec.counts, label_stats(ds.train)};
  log << "wrote " << out_dir << ": train " << s.counts.train << ", val " << s.counts.val
      << ", test " << s.counts.test << " bags\n";
  for (SplitKind split : kAllSplits) {
    const LabelStats st = label_stats(ds.split(split));
    log << split_name(split) << " labels: mean " << format_double(st.mean) << ", stdev "
        << format_double(st.stdev) << "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// train

struct RunArtifacts {
  double final_val_mse = 0.0;
  double test_mse = 0.0;
};

// Sidecar written next to a checkpoint; records what the weights belong to.
inline ojson checkpoint_sidecar(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"run", to_json(c)}};
}

inline RunArtifacts cmd_train(const std::string& config_path, const std::string& out_dir,
                              std::ostream& log) {
  const auto j = read_json_file(config_path);
  RunConfig config = run_config_from_json(j);
  if (config.dataset.empty()) throw ConfigError("run config lacks a dataset path");
  const fs::path base = fs::path(config_path).parent_path();
  std::string dataset_dir = config.dataset;
  if (fs::path(dataset_dir).is_relative() && !fs::exists(dataset_dir) &&
      fs::exists(base / dataset_dir)) {
    dataset_dir = (base / dataset_dir).string();
  }
  const Dataset ds = load_dataset_checked(dataset_dir);
  const Featurizer feat = make_featurizer(ds.spec);
  const TrainResult r = train_run(config, ds, feat, [&](const MetricsRecord& t, const MetricsRecord& v) {
    log << "epoch " << t.epoch << ": train " << format_double(t.mse) << ", val "
        << format_double(v.mse) << "\n";
  });
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_text_file(out / "metrics.csv", metrics_csv(r.history));
  save_checkpoint(r.model.params(), (out / "model.ckpt").string());
  write_text_file(out / "model.json", checkpoint_sidecar(config).dump(2) + "\n");
  RunArtifacts a{r.final_val_mse, evaluate_mse(ModelPredictor(r.model, feat), ds.test)};
  ExperimentManifest m{"train", config_hash(j), {config.seed}, dataset_dir,
                       dataset_checksum(resolve_data_path(dataset_dir)),
                       {"metrics.csv", "model.ckpt", "model.json"}};
  write_manifest(m, out);
  log << "final val mse " << format_double(a.final_val_mse) << ", test mse "
      << format_double(a.test_mse) << "\n";
  return a;
}

// ---------------------------------------------------------------------------
// eval

inline Model load_model(const std::string& checkpoint) {
  fs::path ckpt(checkpoint);
  if (fs::is_directory(ckpt)) ckpt /= "model.ckpt";
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint '" + ckpt.string() + "' not found");
  const fs::path sidecar = ckpt.parent_path() / "model.json";
  if (!fs::exists(sidecar)) {
    throw ConfigError("checkpoint '" + ckpt.string() + "' has no model.json next to it");
  }
  const ModelSpec spec = model_spec_from_json(read_json_file(sidecar.string()).at("model"));
  Model model(spec, 0);
  try {
    load_checkpoint(model.params(), ckpt.string());
  } catch (const IntegrityError& e) {
    throw ConfigError(std::string("checkpoint does not match its model spec: ") + e.what());
  }
  return model;
}

enum class Metric { kMse, kIntermediates, kPermsens, kAccuracy };

inline std::vector<Metric> parse_metrics(const std::string& list) {
  std::vector<Metric> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    const std::string name = list.substr(pos, comma - pos);
    pos = comma + 1;
    if (name.empty()) continue;
    if (name == "mse") out.push_back(Metric::kMse);
    else if (name == "intermediates") out.push_back(Metric::kIntermediates);
    else if (name == "permsens") out.push_back(Metric::kPermsens);
    else if (name == "accuracy") out.push_back(Metric::kAccuracy);
    else throw ConfigError("unknown metric '" + name + "' (expected mse, intermediates, permsens or accuracy)");
  }
  if (out.empty()) throw ConfigError("no metric requested");
  return out;
}

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
  SplitKind split = SplitKind::kTest;
  std::vector<Metric> metrics;
  std::size_t k = 5;
  std::uint64_t seed = 1;
};

inline void cmd_eval(const EvalOptions& opt, const std::string& out_dir, std::ostream& log) {
  if (opt.metrics.empty()) throw ConfigError("no metric requested");
  const Model model = load_model(opt.checkpoint);
  const Dataset ds = load_dataset_checked(opt.dataset);
  const Featurizer feat = make_featurizer(ds.spec);
  if (feat.input_dim() != model.spec().input_dim) {
    throw ConfigError("model expects " + std::to_string(model.spec().input_dim) +
                      " input features, dataset provides " + std::to_string(feat.input_dim()));
  }
  const ModelPredictor p(model, feat);
  const auto& bags = ds.split(opt.split);
  const fs::path out(out_dir);
  fs::create_directories(out);
  std::vector<std::string> outputs;
  const std::string split = split_name(opt.split);
  for (Metric m : opt.metrics) {
    switch (m) {
      case Metric::kMse: {
        CsvTable t({"model", "split", "bags", "mse"});
        const double mse = evaluate_mse(p, bags);
        t.add({model.spec().label(), split, std::to_string(bags.size()), format_double(mse)});
        write_text_file(out / "mse.csv", t.str());
        outputs.push_back("mse.csv");
        log << "mse " << format_double(mse) << "\n";
        break;
      }
      case Metric::kIntermediates: {
        const IntermediateReport r = intermediates_report(p, ds.spec.task, bags);
        const std::string source = r.pseudo ? "pseudo" : "capacity";
        CsvTable t({"model", "split", "source", "instances", "mae"});
        std::size_t n = 0;
        for (const auto& e : r.entries) n += e.delta.size();
        t.add({model.spec().label(), split, source, std::to_string(n), format_double(r.mae)});
        write_text_file(out / "intermediates.csv", t.str());
        write_text_file(out / "intermediates.jsonl", intermediates_jsonl(r));
        outputs.push_back("intermediates.csv");
        outputs.push_back("intermediates.jsonl");
        log << source << " intermediate mae " << format_double(r.mae) << "\n";
        break;
      }
      case Metric::kPermsens: {
        const Aggregate a = permutation_sensitivity(p, bags, opt.k, opt.seed);
        CsvTable t({"model", "split", "permutation", "mse"});
        for (std::size_t i = 0; i < a.values.size(); ++i) {
          t.add({model.spec().label(), split, std::to_string(i), format_double(a.values[i])});
        }
        write_text_file(out / "permsens.csv", t.str());
        CsvTable s({"model", "split", "k", "mean", "median", "stdev", "min", "max"});
        s.add({model.spec().label(), split, std::to_string(opt.k), format_double(a.mean),
               format_double(a.median), format_double(a.stdev), format_double(a.min),
               format_double(a.max)});
        write_text_file(out / "permsens_summary.csv", s.str());
        outputs.push_back("permsens.csv");
        outputs.push_back("permsens_summary.csv");
        log << "permutation mse mean " << format_double(a.mean) << ", stdev "
            << format_double(a.stdev) << "\n";
        break;
      }
      case Metric::kAccuracy: {
        CsvTable t({"model", "split", "bags", "accuracy"});
        const double acc = rounded_accuracy(p, bags);
        t.add({model.spec().label(), split, std::to_string(bags.size()), format_double(acc)});
        write_text_file(out / "accuracy.csv", t.str());
        outputs.push_back("accuracy.csv");
        log << "accuracy " << format_double(acc) << "\n";
        break;
      }
    }
  }
  nlohmann::json key = {{"checkpoint", hex64(fnv1a64(read_text_file(
                            fs::is_directory(opt.checkpoint)
                                ? (fs::path(opt.checkpoint) / "model.ckpt").string()
                                : opt.checkpoint)))},
                        {"split", split}, {"k", opt.k}, {"seed", opt.seed}};
  for (Metric m : opt.metrics) key["metrics"].push_back(static_cast<int>(m));
  write_manifest({"eval", config_hash(key), {opt.seed}, opt.dataset,
                  dataset_checksum(resolve_data_path(opt.dataset)), outputs},
                 out);
}

// ---------------------------------------------------------------------------
// sweep

// A grid of (variant x model x seed) cells. Variants change the dataset:
// either the number of training bags or the set size. Every cell is trained
// on a dataset generated in memory from the template spec.
struct SweepConfig {
  DatasetSpec dataset;
  RunConfig run;  // template; model.family and capacity come from `models`
  std::vector<ModelSpec> models;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::size_t> train_sizes;  // optional variant axis
  std::vector<std::size_t> set_sizes;    // optional variant axis
};

inline SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  try {
    SweepConfig c;
    c.dataset = dataset_spec_from_json(j.at("dataset"));
    nlohmann::json run = j.value("run", nlohmann::json::object());
    if (!run.contains("model")) run["model"] = {{"family", "GRU"}};
    c.run = run_config_from_json(run);
    const nlohmann::json base_model = run["model"];
    for (const auto& m : j.at("models")) {
      nlohmann::json merged = base_model;
      if (m.is_string()) {
        std::string label = m.get<std::string>();
        const bool cap = label.rfind("C-", 0) == 0;
        merged["family"] = cap ? label.substr(2) : label;
        merged["capacity"] = cap;
      } else {
        merged.update(m);
      }
      c.models.push_back(model_spec_from_json(merged));
    }
    if (c.models.empty()) throw ConfigError("sweep lists no models");
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("sweep lists no seeds");
    c.train_sizes = j.value("train_sizes", std::vector<std::size_t>{});
    c.set_sizes = j.value("set_sizes", std::vector<std::size_t>{});
    if (!c.train_sizes.empty() && !c.set_sizes.empty()) {
      throw ConfigError("sweep may vary train_sizes or set_sizes, not both");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  }
}

struct SweepCell {
  std::string axis;  // "train_size", "set_size" or "none"
  std::size_t variant = 0;
  ModelSpec model;
  MultiSeedResult result;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::string table;  // sweep.csv
  std::string delta;  // sweep_delta.csv
  std::string runs;   // sweep_runs.csv, one row per seed
};

inline std::string render_sweep_tables(SweepResult& r) {
  CsvTable table({"axis", "variant", "model", "seeds", "val_mean", "val_median", "val_stdev",
                  "test_mean", "test_median", "test_stdev"});
  CsvTable runs({"axis", "variant", "model", "seed", "val_mse", "test_mse"});
  CsvTable delta({"axis", "variant", "family", "baseline_test_mean", "capacity_test_mean",
                  "delta_test_mean", "baseline_test_median", "capacity_test_median",
                  "delta_test_median"});
  for (const auto& c : r.cells) {
    const std::string v = std::to_string(c.variant);
    table.add({c.axis, v, c.model.label(), std::to_string(c.result.runs.size()),
               format_double(c.result.val.mean), format_double(c.result.val.median),
               format_double(c.result.val.stdev), format_double(c.result.test.mean),
               format_double(c.result.test.median), format_double(c.result.test.stdev)});
    for (const auto& s : c.result.runs) {
      runs.add({c.axis, v, c.model.label(), std::to_string(s.seed), format_double(s.val_mse),
                format_double(s.test_mse)});
    }
  }
  for (const auto& cap : r.cells) {
    if (!cap.model.capacity) continue;
    for (const auto& base : r.cells) {
      ModelSpec twin = cap.model;
      twin.capacity = false;
      twin.use_abs = true;
      ModelSpec other = base.model;
      other.use_abs = true;
      if (base.model.capacity || base.variant != cap.variant || !(other == twin)) continue;
      delta.add({cap.axis, std::to_string(cap.variant), family_name(cap.model.family),
                 format_double(base.result.test.mean), format_double(cap.result.test.mean),
                 format_double(cap.result.test.mean - base.result.test.mean),
                 format_double(base.result.test.median), format_double(cap.result.test.median),
                 format_double(cap.result.test.median - base.result.test.median)});
    }
  }
  r.table = table.str();
  r.runs = runs.str();
  r.delta = delta.str();
  return r.table;
}

inline SweepResult run_sweep(const SweepConfig& c, std::size_t jobs, std::ostream& log) {
  struct Variant {
    std::string axis;
    std::size_t value;
    DatasetSpec spec;
  };
  std::vector<Variant> variants;
  if (!c.train_sizes.empty()) {
    for (std::size_t n : c.train_sizes) {
      DatasetSpec s = c.dataset;
      s.counts.train = n;
      variants.push_back({"train_size", n, s});
    }
  } else if (!c.set_sizes.empty()) {
    for (std::size_t n : c.set_sizes) {
      DatasetSpec s = c.dataset;
      s.set_sizes = {n};
      variants.push_back({"set_size", n, s});
    }
  } else {
    variants.push_back({"none", 0, c.dataset});
  }

  std::shared_ptr<const ImageBank> bank;
  if (c.dataset.mode == FeatureMode::kImage) bank = load_image_bank(c.dataset);
  std::vector<Dataset> datasets;
  for (const auto& v : variants) datasets.push_back(generate_dataset(v.spec, bank.get()));
  const Featurizer feat = make_featurizer(c.dataset, bank);

  SweepResult r;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    for (const auto& m : c.models) {
      SweepCell cell{variants[vi].axis, variants[vi].value, m, {}};
      cell.model.input_dim = feat.input_dim();
      r.cells.push_back(cell);
    }
  }
  // Validate every cell before spending time on training.
  for (const auto& cell : r.cells) {
    RunConfig rc = c.run;
    rc.model = cell.model;
    if (!cell.model.capacity) rc.reg_lambda = 0.0;
    rc.validate();
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::vector<std::exception_ptr> errors(r.cells.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < r.cells.size(); i = next++) {
      SweepCell& cell = r.cells[i];
      const std::size_t vi = i / c.models.size();
      RunConfig rc = c.run;
      rc.model = cell.model;
      if (!cell.model.capacity) rc.reg_lambda = 0.0;
      try {
        cell.result = multi_seed(rc, datasets[vi], feat, c.seeds);
        std::lock_guard<std::mutex> lock(log_mutex);
        log << cell.axis << "=" << cell.variant << " " << cell.model.label() << ": test mse mean "
            << format_double(cell.result.test.mean) << "\n";
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, r.cells.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  render_sweep_tables(r);
  return r;
}

inline SweepResult cmd_sweep(const std::string& config_path, const std::string& out_dir,
                             std::size_t jobs, std::ostream& log) {
  const auto j = read_json_file(config_path);
  const SweepConfig c = sweep_config_from_json(j);
  SweepResult r = run_sweep(c, jobs, log);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text_file(out / "sweep.csv", r.table);
  write_text_file(out / "sweep_runs.csv", r.runs);
  write_text_file(out / "sweep_delta.csv", r.delta);
  write_manifest({"sweep", config_hash(j), c.seeds, "", "",
                  {"sweep.csv", "sweep_runs.csv", "sweep_delta.csv"}},
                 out);
  return r;
}

// Test MSE per set size (independent datasets and runs per size).
inline std::vector<std::pair<std::size_t, Aggregate>> size_sweep(
    const DatasetSpec& dataset, const RunConfig& run, std::span<const std::size_t> sizes,
    std::span<const std::uint64_t> seeds, std::ostream& log) {
  SweepConfig c;
  c.dataset = dataset;
  c.run = run;
  c.models = {run.model};
  c.seeds.assign(seeds.begin(), seeds.end());
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("set sizes must be >= 1");
  }
  c.set_sizes.assign(sizes.begin(), sizes.end());
  const SweepResult r = run_sweep(c, 1, log);
  std::vector<std::pair<std::size_t, Aggregate>> out;
  for (const auto& cell : r.cells) out.emplace_back(cell.variant, cell.result.test);
  return out;
}

// ---------------------------------------------------------------------------
// report

// Collects the metrics of several training runs into plot-ready tables:
// curves.csv (one row per run, epoch and split) and summary.csv.
inline void cmd_report(const std::string& config_path, const std::string& out_dir,
                       std::ostream& log) {
  const auto j = read_json_file(config_path);
  const fs::path base = fs::path(config_path).parent_path();
  const double threshold = j.value("threshold", 1.0);
  CsvTable curves({"run", "epoch", "split", "mse", "penalty"});
  CsvTable summary({"run", "epochs", "final_val_mse", "best_val_mse", "best_epoch",
                    "epochs_to_threshold"});
  if (!j.contains("runs") || !j.at("runs").is_object() || j.at("runs").empty()) {
    throw ConfigError("report config needs a non-empty \"runs\" object {name: run_dir}");
  }
  for (const auto& [name, dir_json] : j.at("runs").items()) {
    fs::path dir(dir_json.get<std::string>());
    if (dir.is_relative() && !fs::exists(dir)) dir = base / dir;
    const fs::path csv = dir / "metrics.csv";
    if (!fs::exists(csv)) throw ConfigError("run '" + name + "': " + csv.string() + " not found");
    std::istringstream in(read_text_file(csv));
    std::string line;
    std::getline(in, line);
    if (line != kMetricsHeader) throw ParseError(csv.string() + ": unexpected header");
    std::size_t epochs = 0, best_epoch = 0, reached = 0;
    double final_val = 0.0, best_val = 0.0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      std::vector<std::string> cells;
      std::istringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      if (cells.size() != 5) {
        throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": expected 5 cells");
      }
      const std::size_t epoch = std::stoul(cells[0]);
      const double mse = std::stod(cells[2]);
      curves.add({name, cells[0], cells[1], cells[2], cells[3]});
      if (cells[1] != "val") continue;
      epochs = epoch;
      final_val = mse;
      if (best_epoch == 0 || mse < best_val) {
        best_val = mse;
        best_epoch = epoch;
      }
      if (reached == 0 && mse <= threshold) reached = epoch;
    }
    summary.add({name, std::to_string(epochs), format_double(final_val), format_double(best_val),
                 std::to_string(best_epoch), std::to_string(reached)});
    log << name << ": final val " << format_double(final_val) << "\n";
  }
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text_file(out / "curves.csv", curves.str());
  write_text_file(out / "summary.csv", summary.str());
  write_manifest({"report", config_hash(j), {}, "", "", {"curves.csv", "summary.csv"}}, out);
}

}  // namespace capnet
