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

// Bag generation, featurization and dataset persistence.
//
// On disk a dataset is a directory holding manifest.json and one JSON Lines
// file per split. Each line is a bag:
//
//   {"classes":[3,1,3],"label":4,"img_idx":[-1,-1,-1]}
//
// The manifest records the generating spec, the synergy pair set, the oracle
// version and an FNV-1a checksum of every split file.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capnet/error.hpp"
#include "capnet/hash.hpp"
#include "capnet/idx.hpp"
#include "capnet/oracle.hpp"
#include "capnet/rng.hpp"

namespace capnet {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr std::size_t kSymbolicDim = kNumClasses;

enum class FeatureMode { kSymbolic, kImage };
enum class SplitKind { kTrain = 0, kVal = 1, kTest = 2 };

inline std::string split_name(SplitKind s) {
  switch (s) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kVal: return "val";
    case SplitKind::kTest: return "test";
  }
  return "?";
}

inline SplitKind parse_split(const std::string& s) {
  if (s == "train") return SplitKind::kTrain;
  if (s == "val") return SplitKind::kVal;
  if (s == "test") return SplitKind::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

inline constexpr std::array<SplitKind, 3> kAllSplits = {SplitKind::kTrain, SplitKind::kVal,
                                                        SplitKind::kTest};

struct Instance {
  int cls = 0;
  std::int64_t img_idx = -1;  // global image index, -1 in symbolic mode
  std::uint64_t key = 0;      // seeds the symbolic feature noise; moves with the instance

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct Bag {
  std::vector<Instance> instances;
  double label = 0.0;

  std::size_t size() const { return instances.size(); }

  OrderedSequence classes() const {
    OrderedSequence out;
    out.reserve(instances.size());
    for (const auto& i : instances) out.push_back(i.cls);
    return out;
  }

  friend bool operator==(const Bag&, const Bag&) = default;
};

struct SplitCounts {
  std::size_t train = 100;
  std::size_t val = 10;
  std::size_t test = 10;

  std::size_t of(SplitKind s) const {
    return s == SplitKind::kTrain ? train : (s == SplitKind::kVal ? val : test);
  }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct DatasetSpec {
  TaskSpec task;
  // USS pair set size. Ignored when task.pair_set is given explicitly.
  std::size_t pair_count = kDefaultPairCount;
  FeatureMode mode = FeatureMode::kSymbolic;
  // One entry: fixed size. Several: each bag draws its size uniformly from the list.
  std::vector<std::size_t> set_sizes{10};
  SplitCounts counts;
  std::uint64_t seed = 1;
  double noise = 0.0;  // symbolic-mode uniform perturbation half-width
  std::string image_dir;          // image mode; falls back to $CAPNET_DATA_DIR
  std::size_t val_holdout = 10000;  // image mode: tail of the training file used for val

  void validate() const {
    task.validate();
    if (counts.train == 0 || counts.val == 0 || counts.test == 0) {
      throw ConfigError("dataset split counts must be positive");
    }
    if (set_sizes.empty()) throw ConfigError("dataset needs at least one set size");
    for (std::size_t s : set_sizes) {
      if (s == 0) throw ConfigError("set sizes must be >= 1");
    }
    if (noise < 0.0) throw ConfigError("noise half-width must be >= 0");
  }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping.

inline nlohmann::ordered_json to_json(const DatasetSpec& s) {
  nlohmann::ordered_json j;
  j["task"] = task_name(s.task.kind);
  j["class_range"] = {s.task.class_lo, s.task.class_hi};
  j["pair_count"] = s.pair_count;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : s.task.pair_set) pairs.push_back({a, b});
  j["pairs"] = pairs;
  j["mode"] = s.mode == FeatureMode::kSymbolic ? "symbolic" : "image";
  if (s.set_sizes.size() == 1) {
    j["set_size"] = s.set_sizes.front();
  } else {
    j["set_size"] = s.set_sizes;
  }
  j["counts"] = {{"train", s.counts.train}, {"val", s.counts.val}, {"test", s.counts.test}};
  j["seed"] = s.seed;
  j["noise"] = s.noise;
  if (s.mode == FeatureMode::kImage) {
    j["image_dir"] = s.image_dir;
    j["val_holdout"] = s.val_holdout;
  }
  return j;
}

template <class Json>
DatasetSpec dataset_spec_from_json(const Json& j) {
  try {
    DatasetSpec s;
    std::vector<ClassPair> pairs;
    if (j.contains("pairs")) {
      for (const auto& p : j.at("pairs")) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("pairs must be [c_i, c_j] arrays");
        pairs.emplace_back(p[0].template get<int>(), p[1].template get<int>());
      }
    }
    const TaskKind kind = parse_task(j.at("task").template get<std::string>());
    s.task.kind = kind;
    s.task.pair_set = pairs;
    std::sort(s.task.pair_set.begin(), s.task.pair_set.end());
    s.task.class_lo = kind == TaskKind::kMult ? 1 : 0;
    if (j.contains("class_range")) {
      s.task.class_lo = j.at("class_range").at(0).template get<int>();
      s.task.class_hi = j.at("class_range").at(1).template get<int>();
    }
    if (j.contains("pair_count")) s.pair_count = j.at("pair_count").template get<std::size_t>();
    const std::string mode = j.value("mode", std::string("symbolic"));
    if (mode == "symbolic") {
      s.mode = FeatureMode::kSymbolic;
    } else if (mode == "image") {
      s.mode = FeatureMode::kImage;
    } else {
      throw ConfigError("unknown feature mode '" + mode + "'");
    }
    if (j.contains("set_size")) {
      const auto& sz = j.at("set_size");
      if (sz.is_array()) {
        s.set_sizes = sz.template get<std::vector<std::size_t>>();
      } else {
        s.set_sizes = {sz.template get<std::size_t>()};
      }
    }
    if (j.contains("counts")) {
      const auto& c = j.at("counts");
      if (c.is_array()) {
        s.counts = {c.at(0).template get<std::size_t>(), c.at(1).template get<std::size_t>(),
                    c.at(2).template get<std::size_t>()};
      } else {
        s.counts = {c.at("train").template get<std::size_t>(), c.at("val").template get<std::size_t>(),
                    c.at("test").template get<std::size_t>()};
      }
    }
    s.seed = j.value("seed", std::uint64_t{1});
    s.noise = j.value("noise", 0.0);
    s.image_dir = j.value("image_dir", std::string());
    s.val_holdout = j.value("val_holdout", std::size_t{10000});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Image pools.

// Training and test IDX files of one distribution, addressed by a global
// index: [0, n_train) is the training file, [n_train, n_train + n_test) the
// test file.
class ImageBank {
 public:
  ImageBank(IdxImages train_images, IdxLabels train_labels, IdxImages test_images,
            IdxLabels test_labels)
      : train_(std::move(train_images)), test_(std::move(test_images)) {
    if (train_.count != train_labels.labels.size() || test_.count != test_labels.labels.size()) {
      throw ParseError("image and label file counts disagree");
    }
    if (train_.pixels_per_image() != test_.pixels_per_image()) {
      throw ParseError("training and test images have different dimensions");
    }
    labels_ = std::move(train_labels.labels);
    labels_.insert(labels_.end(), test_labels.labels.begin(), test_labels.labels.end());
  }

  // Reads the standard four files from `dir`.
  static ImageBank load(const std::string& dir) {
    auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
    return ImageBank(parse_idx_images(read_file_bytes(path("train-images-idx3-ubyte"))),
                     parse_idx_labels(read_file_bytes(path("train-labels-idx1-ubyte"))),
                     parse_idx_images(read_file_bytes(path("t10k-images-idx3-ubyte"))),
                     parse_idx_labels(read_file_bytes(path("t10k-labels-idx1-ubyte"))));
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t train_count() const { return train_.count; }
  std::size_t pixels_per_image() const { return train_.pixels_per_image(); }
  int label(std::int64_t idx) const { return labels_.at(static_cast<std::size_t>(idx)); }

  std::span<const double> image(std::int64_t idx) const {
    const auto i = static_cast<std::size_t>(idx);
    if (i < train_.count) return train_.image(i);
    if (i < size()) return test_.image(i - train_.count);
    throw ConfigError("image index " + std::to_string(idx) + " out of range");
  }

 private:
  IdxImages train_;
  IdxImages test_;
  std::vector<int> labels_;
};

// The images one split may draw from, indexed by class.
struct ImagePool {
  SplitKind split = SplitKind::kTrain;
  std::array<std::vector<std::int64_t>, kNumClasses> by_class;

  static ImagePool make(const ImageBank& bank, SplitKind split, std::size_t val_holdout) {
    const std::size_t n_train = bank.train_count();
    if (val_holdout >= n_train) throw ConfigError("val_holdout leaves no training images");
    std::size_t lo = 0, hi = 0;
    switch (split) {
      case SplitKind::kTrain: lo = 0; hi = n_train - val_holdout; break;
      case SplitKind::kVal: lo = n_train - val_holdout; hi = n_train; break;
      case SplitKind::kTest: lo = n_train; hi = bank.size(); break;
    }
    ImagePool pool;
    pool.split = split;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto idx = static_cast<std::int64_t>(i);
      pool.by_class[static_cast<std::size_t>(bank.label(idx))].push_back(idx);
    }
    return pool;
  }
};

inline std::string default_data_dir() {
  const char* env = std::getenv("CAPNET_DATA_DIR");
  return env ? std::string(env) : std::string();
}

// Resolves a possibly relative path: as given if it exists, otherwise under
// $CAPNET_DATA_DIR.
inline std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::path(path).is_absolute() || fs::exists(path)) return path;
  const std::string root = default_data_dir();
  if (!root.empty() && fs::exists(fs::path(root) / path)) return (fs::path(root) / path).string();
  return path;
}

// ---------------------------------------------------------------------------
// Featurization.

// Maps an instance to the model input vector: a one-hot class code (plus
// optional uniform noise) in symbolic mode, scaled pixels in image mode.
class Featurizer {
 public:
  explicit Featurizer(FeatureMode mode = FeatureMode::kSymbolic, double noise = 0.0,
                      std::shared_ptr<const ImageBank> bank = nullptr)
      : mode_(mode), noise_(noise), bank_(std::move(bank)) {
    if (mode_ == FeatureMode::kImage && !bank_) {
      throw ConfigError("image mode requires loaded image pools");
    }
  }

  FeatureMode mode() const { return mode_; }

  std::size_t input_dim() const {
    return mode_ == FeatureMode::kSymbolic ? kSymbolicDim : bank_->pixels_per_image();
  }

  void write(const Instance& inst, std::span<double> out) const {
    if (mode_ == FeatureMode::kSymbolic) {
      std::fill(out.begin(), out.end(), 0.0);
      out[static_cast<std::size_t>(inst.cls)] = 1.0;
      if (noise_ > 0.0) {
        Rng rng(inst.key);
        for (double& v : out) v += rng.uniform(-noise_, noise_);
      }
    } else {
      const auto img = bank_->image(inst.img_idx);
      std::copy(img.begin(), img.end(), out.begin());
    }
  }

  std::vector<double> featurize(const Instance& inst) const {
    std::vector<double> v(input_dim());
    write(inst, v);
    return v;
  }

 private:
  FeatureMode mode_;
  double noise_;
  std::shared_ptr<const ImageBank> bank_;
};

// ---------------------------------------------------------------------------
// Generation.

struct Dataset {
  DatasetSpec spec;
  std::vector<Bag> train;
  std::vector<Bag> val;
  std::vector<Bag> test;

  std::vector<Bag>& split(SplitKind s) {
    return s == SplitKind::kTrain ? train : (s == SplitKind::kVal ? val : test);
  }
  const std::vector<Bag>& split(SplitKind s) const {
    return s == SplitKind::kTrain ? train : (s == SplitKind::kVal ? val : test);
  }
};

// Spec with the USS pair set materialized from the seed when not given.
inline DatasetSpec resolve_spec(DatasetSpec spec) {
  spec.validate();
  if (spec.task.kind == TaskKind::kUSS && spec.task.pair_set.empty()) {
    spec.task.pair_set = sample_pair_set(spec.seed, spec.pair_count);
  }
  if (spec.task.kind == TaskKind::kUSS) spec.pair_count = spec.task.pair_set.size();
  return spec;
}

namespace detail {

inline std::uint64_t bag_seed(std::uint64_t seed, SplitKind split, std::size_t index) {
  return derive_seed(derive_seed(seed, 100 + static_cast<std::uint64_t>(split)), index);
}

inline void assign_keys(Bag& bag, std::uint64_t seed) {
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    bag.instances[i].key = derive_seed(seed, 0x4b4559ULL + i);
  }
}

}  // namespace detail

// Draws every split. Each bag uses its own seeded stream, so bags are
// independent of each other and of generation order.
inline Dataset generate_dataset(const DatasetSpec& raw,
                                const ImageBank* bank = nullptr) {
  Dataset ds;
  ds.spec = resolve_spec(raw);
  const DatasetSpec& spec = ds.spec;
  if (spec.mode == FeatureMode::kImage && !bank) {
    throw ConfigError("image mode requires loaded image pools for every split");
  }
  const auto span = static_cast<std::uint64_t>(spec.task.class_hi - spec.task.class_lo + 1);
  for (SplitKind split : kAllSplits) {
    std::optional<ImagePool> pool;
    if (spec.mode == FeatureMode::kImage) {
      pool = ImagePool::make(*bank, split, spec.val_holdout);
      for (int c = spec.task.class_lo; c <= spec.task.class_hi; ++c) {
        if (pool->by_class[static_cast<std::size_t>(c)].empty()) {
          throw ConfigError("class " + std::to_string(c) + " absent from the " +
                            split_name(split) + " image pool");
        }
      }
    }
    auto& bags = ds.split(split);
    const std::size_t n = spec.counts.of(split);
    bags.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
      const std::uint64_t seed = detail::bag_seed(spec.seed, split, b);
      Rng rng(seed);
      const std::size_t size = spec.set_sizes.size() == 1
                                   ? spec.set_sizes.front()
                                   : spec.set_sizes[rng.below(spec.set_sizes.size())];
      Bag& bag = bags[b];
      bag.instances.resize(size);
      for (auto& inst : bag.instances) {
        inst.cls = spec.task.class_lo + static_cast<int>(rng.below(span));
        if (pool) {
          const auto& candidates = pool->by_class[static_cast<std::size_t>(inst.cls)];
          inst.img_idx = candidates[rng.below(candidates.size())];
        }
      }
      detail::assign_keys(bag, seed);
      bag.label = static_cast<double>(eval_task(spec.task, bag.classes()));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Statistics.

struct LabelStats {
  double mean = 0.0;
  double median = 0.0;
  double variance = 0.0;  // population variance
  double stdev = 0.0;
};

inline LabelStats label_stats(std::span<const Bag> bags) {
  LabelStats st;
  if (bags.empty()) return st;
  std::vector<double> labels;
  labels.reserve(bags.size());
  for (const auto& b : bags) labels.push_back(b.label);
  double sum = 0.0;
  for (double v : labels) sum += v;
  st.mean = sum / static_cast<double>(labels.size());
  double ss = 0.0;
  for (double v : labels) ss += (v - st.mean) * (v - st.mean);
  st.variance = ss / static_cast<double>(labels.size());
  st.stdev = std::sqrt(st.variance);
  std::sort(labels.begin(), labels.end());
  const std::size_t n = labels.size();
  st.median = n % 2 ? labels[n / 2] : 0.5 * (labels[n / 2 - 1] + labels[n / 2]);
  return st;
}

// ---------------------------------------------------------------------------
// Persistence.

inline std::string encode_bag(const Bag& bag) {
  nlohmann::ordered_json j;
  std::vector<int> classes;
  std::vector<std::int64_t> idx;
  for (const auto& i : bag.instances) {
    classes.push_back(i.cls);
    idx.push_back(i.img_idx);
  }
  j["classes"] = classes;
  j["label"] = static_cast<std::int64_t>(std::llround(bag.label));
  j["img_idx"] = idx;
  return j.dump();
}

inline std::string encode_split(std::span<const Bag> bags) {
  std::string out;
  for (const auto& b : bags) {
    out += encode_bag(b);
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json dataset_manifest(const Dataset& ds) {
  nlohmann::ordered_json m;
  m["format"] = "capnet-dataset";
  m["version"] = kDatasetFormatVersion;
  m["oracle_version"] = kOracleVersion;
  m["spec"] = to_json(ds.spec);
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : ds.spec.task.pair_set) pairs.push_back({a, b});
  m["pair_set"] = pairs;
  nlohmann::ordered_json files;
  for (SplitKind s : kAllSplits) {
    const std::string body = encode_split(ds.split(s));
    files[split_name(s)] = {{"path", split_name(s) + ".jsonl"},
                            {"bags", ds.split(s).size()},
                            {"checksum", hex64(fnv1a64(body))}};
  }
  m["files"] = files;
  return m;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (SplitKind s : kAllSplits) {
    write_text_file(fs::path(dir) / (split_name(s) + ".jsonl"), encode_split(ds.split(s)));
  }
  write_text_file(fs::path(dir) / "manifest.json", dataset_manifest(ds).dump(2) + "\n");
}

// Loads and re-validates a dataset. Every label is re-evaluated with the
// oracle; malformed lines are reported with file and line number.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", std::string()) != "capnet-dataset") {
    throw IntegrityError("manifest.json: not a capnet dataset");
  }
  if (manifest.value("version", -1) != kDatasetFormatVersion) {
    throw IntegrityError("manifest.json: unsupported dataset version " +
                         manifest.value("version", nlohmann::json(-1)).dump());
  }
  if (manifest.value("oracle_version", -1) != kOracleVersion) {
    throw IntegrityError("manifest.json: dataset was labelled by oracle version " +
                         manifest.value("oracle_version", nlohmann::json(-1)).dump() +
                         ", this build provides " + std::to_string(kOracleVersion));
  }
  Dataset ds;
  ds.spec = dataset_spec_from_json(manifest.at("spec"));
  for (SplitKind s : kAllSplits) {
    const auto& entry = manifest.at("files").at(split_name(s));
    const std::string file = entry.at("path").get<std::string>();
    const std::string body = read_text_file(root / file);
    auto& bags = ds.split(s);
    std::istringstream lines(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      const std::string where = file + ":" + std::to_string(lineno);
      Bag bag;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto classes = j.at("classes").get<std::vector<int>>();
        const auto idx = j.at("img_idx").get<std::vector<std::int64_t>>();
        if (classes.size() != idx.size()) throw ParseError("classes/img_idx length mismatch");
        if (classes.empty()) throw ParseError("empty bag");
        for (std::size_t i = 0; i < classes.size(); ++i) {
          if (classes[i] < 0 || classes[i] >= kNumClasses) throw ParseError("class id out of range");
          bag.instances.push_back(Instance{classes[i], idx[i], 0});
        }
        bag.label = static_cast<double>(j.at("label").get<std::int64_t>());
        if (static_cast<double>(eval_task(ds.spec.task, bag.classes())) != bag.label) {
          throw IntegrityError("label does not match the oracle value");
        }
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": corrupted line: " + e.what());
      } catch (const Error& e) {
        throw ParseError(where + ": corrupted line: " + e.what());
      }
      detail::assign_keys(bag, detail::bag_seed(ds.spec.seed, s, bags.size()));
      bags.push_back(std::move(bag));
    }
    if (bags.size() != entry.at("bags").get<std::size_t>()) {
      throw IntegrityError(file + ": expected " + entry.at("bags").dump() + " bags, found " +
                           std::to_string(bags.size()));
    }
    if (hex64(fnv1a64(body)) != entry.at("checksum").get<std::string>()) {
      throw IntegrityError(file + ": checksum mismatch");
    }
  }
  return ds;
}

// Image bank named by an image-mode spec (image_dir, else $CAPNET_DATA_DIR).
inline std::shared_ptr<const ImageBank> load_image_bank(const DatasetSpec& spec) {
  const std::string dir = spec.image_dir.empty() ? default_data_dir()
                                                 : resolve_data_path(spec.image_dir);
  if (dir.empty()) throw ConfigError("image mode needs image_dir or CAPNET_DATA_DIR");
  return std::make_shared<const ImageBank>(ImageBank::load(dir));
}

// Featurizer matching a dataset spec. Image mode reuses `bank` when given.
inline Featurizer make_featurizer(const DatasetSpec& spec,
                                  std::shared_ptr<const ImageBank> bank = nullptr) {
  if (spec.mode == FeatureMode::kSymbolic) return Featurizer(FeatureMode::kSymbolic, spec.noise);
  if (!bank) bank = load_image_bank(spec);
  return Featurizer(FeatureMode::kImage, 0.0, std::move(bank));
}

}  // namespace capnet
