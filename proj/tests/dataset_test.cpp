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

#include "capnet/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "idx_fixture.hpp"
#include "test_util.hpp"

namespace capnet {
namespace {

namespace fs = std::filesystem;

DatasetSpec small_spec(TaskKind kind, std::size_t size = 5) {
  DatasetSpec s;
  s.task = TaskSpec::make(kind);
  s.set_sizes = {size};
  s.counts = {50, 10, 10};
  s.seed = 3;
  return s;
}

TEST(GenerateTest, CountsSizesAndLabels) {
  const Dataset ds = generate_dataset(small_spec(TaskKind::kWTri, 7));
  EXPECT_EQ(ds.train.size(), 50u);
  EXPECT_EQ(ds.val.size(), 10u);
  EXPECT_EQ(ds.test.size(), 10u);
  for (SplitKind s : kAllSplits) {
    for (const Bag& b : ds.split(s)) {
      ASSERT_EQ(b.size(), 7u);
      EXPECT_EQ(b.label, static_cast<double>(eval_task(ds.spec.task, b.classes())));
      for (const auto& inst : b.instances) EXPECT_EQ(inst.img_idx, -1);
    }
  }
}

TEST(GenerateTest, Deterministic) {
  const Dataset a = generate_dataset(small_spec(TaskKind::kUS));
  const Dataset b = generate_dataset(small_spec(TaskKind::kUS));
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  DatasetSpec other = small_spec(TaskKind::kUS);
  other.seed = 4;
  EXPECT_NE(generate_dataset(other).train, a.train);
}

TEST(GenerateTest, BagsIndependentOfSplitSizes) {
  DatasetSpec big = small_spec(TaskKind::kUS);
  big.counts.train = 80;
  const Dataset a = generate_dataset(small_spec(TaskKind::kUS));
  const Dataset b = generate_dataset(big);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i], b.train[i]);
  EXPECT_EQ(a.val, b.val);
}

TEST(GenerateTest, MixedSizesDrawFromList) {
  DatasetSpec s = small_spec(TaskKind::kUS);
  s.set_sizes = {2, 9};
  s.counts.train = 200;
  std::set<std::size_t> seen;
  for (const Bag& b : generate_dataset(s).train) seen.insert(b.size());
  EXPECT_EQ(seen, (std::set<std::size_t>{2, 9}));
}

TEST(GenerateTest, UniqueSumSizeTenLabelsInRange) {
  DatasetSpec s = small_spec(TaskKind::kUS, 10);
  s.counts.train = 2000;
  for (const Bag& b : generate_dataset(s).train) {
    EXPECT_GE(b.label, 0.0);
    EXPECT_LE(b.label, 45.0);
  }
}

TEST(GenerateTest, MultNeverDrawsClassZero) {
  const Dataset ds = generate_dataset(small_spec(TaskKind::kMult, 4));
  for (const Bag& b : ds.train) {
    for (int c : b.classes()) EXPECT_GE(c, 1);
  }
}

TEST(GenerateTest, SynergyPairsMaterializedFromSeed) {
  DatasetSpec s = small_spec(TaskKind::kUSS);
  const Dataset ds = generate_dataset(s);
  EXPECT_EQ(ds.spec.task.pair_set.size(), kDefaultPairCount);
  EXPECT_EQ(ds.spec.task.pair_set, sample_pair_set(s.seed, kDefaultPairCount));
}

TEST(GenerateTest, InvalidSpecsRejected) {
  DatasetSpec s = small_spec(TaskKind::kUS);
  s.set_sizes = {0};
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = small_spec(TaskKind::kUS);
  s.counts.val = 0;
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = small_spec(TaskKind::kUS);
  s.noise = -1;
  EXPECT_THROW(generate_dataset(s), ConfigError);
  s = small_spec(TaskKind::kUS);
  s.mode = FeatureMode::kImage;
  EXPECT_THROW(generate_dataset(s), ConfigError);
}

// Closed-form moments for fixed-size bags with uniform classes, used as an
// independent check of the generator.
struct Moments {
  double mean;
  double variance;
};

// US: sum_c c * 1[c in X]; indicators are exchangeable with
// P(c in X) = 1 - 0.9^n and P(c, d in X) = 1 - 2 * 0.9^n + 0.8^n.
Moments unique_sum_moments(int n) {
  const double p1 = 1 - std::pow(0.9, n);
  const double p2 = 1 - 2 * std::pow(0.9, n) + std::pow(0.8, n);
  double mean = 0, second = 0;
  for (int c = 0; c < 10; ++c) {
    mean += c * p1;
    for (int d = 0; d < 10; ++d) second += c * d * (c == d ? p1 : p2);
  }
  return {mean, second - mean * mean};
}

TEST(StatisticsTest, UniqueSumMatchesClosedForm) {
  DatasetSpec s = small_spec(TaskKind::kUS, 10);
  s.counts.train = 40000;
  const LabelStats st = label_stats(generate_dataset(s).train);
  const Moments m = unique_sum_moments(10);
  // The reference sample mean 29.34 sits within two standard errors of this.
  EXPECT_NEAR(m.mean, 29.34, 0.05);
  EXPECT_NEAR(st.mean, m.mean, 0.15);
  EXPECT_NEAR(st.variance, m.variance, 0.05 * m.variance);
}

TEST(StatisticsTest, ReferenceValuesForSizeTen) {
  // Reference means and standard deviations of size-10 datasets.
  struct Row {
    TaskKind kind;
    double mean, stdev;
  };
  for (const Row& r : {Row{TaskKind::kUS, 29.34, 6.32}, Row{TaskKind::kWTri, 65.19, 20.18},
                       Row{TaskKind::kTriC, 14.50, 2.00}}) {
    DatasetSpec s = small_spec(r.kind, 10);
    s.counts.train = 20000;
    const LabelStats st = label_stats(generate_dataset(s).train);
    EXPECT_NEAR(st.mean, r.mean, 0.01 * r.mean) << task_name(r.kind);
    EXPECT_NEAR(st.stdev, r.stdev, 0.03 * r.stdev) << task_name(r.kind);
  }
}

TEST(StatisticsTest, SynergyMeanForAnyPairSet) {
  // Each of the 5 pairs is present with probability 1 - 2 * 0.9^10 + 0.8^10,
  // whatever the pairs are, so the mean does not depend on the draw.
  DatasetSpec s = small_spec(TaskKind::kUSS, 10);
  s.counts.train = 20000;
  for (std::uint64_t seed : {10, 11, 12}) {
    s.seed = seed;
    EXPECT_NEAR(label_stats(generate_dataset(s).train).mean, 49.80, 0.01 * 49.80);
  }
}

TEST(StatisticsTest, SynergySpreadWithDisjointPairs) {
  // The spread depends on how the pairs overlap; the reference 13.03 is
  // reproduced by five disjoint pairs.
  DatasetSpec s = small_spec(TaskKind::kUSS, 10);
  s.task = TaskSpec::make(TaskKind::kUSS, {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}});
  s.counts.train = 20000;
  const LabelStats st = label_stats(generate_dataset(s).train);
  EXPECT_NEAR(st.mean, 49.80, 0.01 * 49.80);
  EXPECT_NEAR(st.stdev, 13.03, 0.03 * 13.03);
}

TEST(StatisticsTest, LabelStatsHandValues) {
  std::vector<Bag> bags(4);
  const double labels[] = {1, 2, 3, 10};
  for (int i = 0; i < 4; ++i) bags[static_cast<std::size_t>(i)].label = labels[i];
  const LabelStats st = label_stats(bags);
  EXPECT_DOUBLE_EQ(st.mean, 4.0);
  EXPECT_DOUBLE_EQ(st.median, 2.5);
  EXPECT_DOUBLE_EQ(st.variance, 12.5);
}

TEST(JsonTest, SpecRoundTrip) {
  DatasetSpec s = small_spec(TaskKind::kUSS);
  s.task = TaskSpec::make(TaskKind::kUSS, {{1, 4}, {2, 3}});
  s.set_sizes = {3, 4, 5};
  s.noise = 0.1;
  const DatasetSpec back = dataset_spec_from_json(to_json(s));
  EXPECT_EQ(back, s);
}

TEST(JsonTest, DefaultsAndErrors) {
  const DatasetSpec s = dataset_spec_from_json(nlohmann::json{{"task", "Mult"}});
  EXPECT_EQ(s.task.class_lo, 1);
  EXPECT_EQ(s.set_sizes, (std::vector<std::size_t>{10}));
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"task", "Sum"}}), ConfigError);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"set_size", 3}}), ConfigError);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"task", "US"}, {"mode", "audio"}}),
               ConfigError);
  EXPECT_THROW(dataset_spec_from_json(nlohmann::json{{"task", "US"}, {"set_size", "x"}}),
               ConfigError);
}

TEST(PersistenceTest, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("dataset_roundtrip");
  DatasetSpec s = small_spec(TaskKind::kUSS);
  s.noise = 0.05;
  const Dataset ds = generate_dataset(s);
  save_dataset(ds, dir.string());
  const Dataset back = load_dataset(dir.string());
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.val, ds.val);
  EXPECT_EQ(back.test, ds.test);
}

TEST(PersistenceTest, SavingTwiceGivesIdenticalFiles) {
  const auto a = testing::scratch_dir("dataset_a");
  const auto b = testing::scratch_dir("dataset_b");
  save_dataset(generate_dataset(small_spec(TaskKind::kUS)), a.string());
  save_dataset(generate_dataset(small_spec(TaskKind::kUS)), b.string());
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
    EXPECT_EQ(read_text_file(a / f), read_text_file(b / f)) << f;
  }
}

TEST(PersistenceTest, CorruptedLineNamesFileAndLine) {
  const auto dir = testing::scratch_dir("dataset_corrupt");
  save_dataset(generate_dataset(small_spec(TaskKind::kUS)), dir.string());
  std::string body = read_text_file(dir / "val.jsonl");
  const std::size_t second = body.find('\n') + 1;
  body.insert(second, "{\"classes\": [1, 2");
  write_text_file(dir / "val.jsonl", body);
  try {
    load_dataset(dir.string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("val.jsonl:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("corrupted line"), std::string::npos) << msg;
  }
}

TEST(PersistenceTest, WrongLabelRejected) {
  const auto dir = testing::scratch_dir("dataset_label");
  const Dataset ds = generate_dataset(small_spec(TaskKind::kUS));
  save_dataset(ds, dir.string());
  std::string body = read_text_file(dir / "train.jsonl");
  const std::string needle = "\"label\":";
  const std::size_t pos = body.find(needle) + needle.size();
  body.insert(pos, "1");  // e.g. 21 -> 121
  write_text_file(dir / "train.jsonl", body);
  EXPECT_THROW(load_dataset(dir.string()), ParseError);
}

TEST(PersistenceTest, ChecksumAndVersionChecked) {
  const auto dir = testing::scratch_dir("dataset_checksum");
  const Dataset ds = generate_dataset(small_spec(TaskKind::kUS));
  save_dataset(ds, dir.string());
  // Swap two lines: every line stays valid but the checksum changes.
  std::string body = read_text_file(dir / "test.jsonl");
  const std::size_t a = body.find('\n') + 1;
  const std::size_t b = body.find('\n', a) + 1;
  body = body.substr(a, b - a) + body.substr(0, a) + body.substr(b);
  write_text_file(dir / "test.jsonl", body);
  EXPECT_THROW(load_dataset(dir.string()), IntegrityError);

  save_dataset(ds, dir.string());
  auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  manifest["oracle_version"] = 99;
  write_text_file(dir / "manifest.json", manifest.dump());
  EXPECT_THROW(load_dataset(dir.string()), IntegrityError);
}

TEST(PersistenceTest, MissingDirectory) {
  EXPECT_THROW(load_dataset("/nonexistent/capnet/dataset"), Error);
}

TEST(FeaturizerTest, OneHotAndNoise) {
  const Featurizer plain;
  Instance inst{4, -1, 123};
  const auto v = plain.featurize(inst);
  ASSERT_EQ(v.size(), kSymbolicDim);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], i == 4 ? 1.0 : 0.0);

  const Featurizer noisy(FeatureMode::kSymbolic, 0.1);
  const auto a = noisy.featurize(inst);
  const auto b = noisy.featurize(inst);
  EXPECT_EQ(a, b);  // noise is keyed by the instance, not drawn per call
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - v[i]), 0.1);
  EXPECT_NE(a, v);
}

TEST(FeaturizerTest, NoiseMovesWithInstanceUnderPermutation) {
  DatasetSpec s = small_spec(TaskKind::kUS);
  s.noise = 0.2;
  const Dataset ds = generate_dataset(s);
  const Featurizer f = make_featurizer(ds.spec);
  Bag bag = ds.train.front();
  std::vector<std::vector<double>> before;
  for (const auto& i : bag.instances) before.push_back(f.featurize(i));
  std::reverse(bag.instances.begin(), bag.instances.end());
  for (std::size_t i = 0; i < bag.size(); ++i) {
    EXPECT_EQ(f.featurize(bag.instances[i]), before[bag.size() - 1 - i]);
  }
}

TEST(FeaturizerTest, ImageModeNeedsBank) {
  EXPECT_THROW(Featurizer(FeatureMode::kImage), ConfigError);
}

class ImageModeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::scratch_dir("fake_mnist");
    testing::write_fake_mnist(dir_, testing::cycling_labels(6), testing::cycling_labels(3));
  }
  fs::path dir_;
};

TEST_F(ImageModeTest, SplitsDrawFromDisjointPools) {
  DatasetSpec s = small_spec(TaskKind::kUS, 4);
  s.mode = FeatureMode::kImage;
  s.image_dir = dir_.string();
  s.val_holdout = 20;
  auto bank = load_image_bank(s);
  EXPECT_EQ(bank->train_count(), 60u);
  const Dataset ds = generate_dataset(s, bank.get());
  for (SplitKind split : kAllSplits) {
    for (const Bag& b : ds.split(split)) {
      for (const auto& inst : b.instances) {
        EXPECT_EQ(bank->label(inst.img_idx), inst.cls);
        if (split == SplitKind::kTrain) {
          EXPECT_LT(inst.img_idx, 40);
        }
        if (split == SplitKind::kVal) {
          EXPECT_GE(inst.img_idx, 40);
          EXPECT_LT(inst.img_idx, 60);
        }
        if (split == SplitKind::kTest) {
          EXPECT_GE(inst.img_idx, 60);
        }
      }
    }
  }
  const Featurizer f = make_featurizer(ds.spec, bank);
  EXPECT_EQ(f.input_dim(), 4u);
  const Instance& inst = ds.test.front().instances.front();
  const auto px = f.featurize(inst);
  const auto local = static_cast<std::size_t>(inst.img_idx - 60);
  EXPECT_DOUBLE_EQ(px[0], static_cast<double>((inst.cls * 20 + local) % 256) / 255.0);
}

TEST_F(ImageModeTest, RoundTripKeepsImageIndices) {
  DatasetSpec s = small_spec(TaskKind::kWTri, 3);
  s.mode = FeatureMode::kImage;
  s.image_dir = dir_.string();
  s.val_holdout = 20;
  auto bank = load_image_bank(s);
  const Dataset ds = generate_dataset(s, bank.get());
  const auto out = testing::scratch_dir("image_roundtrip");
  save_dataset(ds, out.string());
  const Dataset back = load_dataset(out.string());
  EXPECT_EQ(back.train, ds.train);
}

TEST_F(ImageModeTest, MissingClassInPoolRejected) {
  testing::write_fake_mnist(dir_, testing::cycling_labels(6), {1, 2, 3});
  DatasetSpec s = small_spec(TaskKind::kUS, 3);
  s.mode = FeatureMode::kImage;
  s.image_dir = dir_.string();
  s.val_holdout = 20;
  auto bank = load_image_bank(s);
  EXPECT_THROW(generate_dataset(s, bank.get()), ConfigError);
}

}  // namespace
}  // namespace capnet
