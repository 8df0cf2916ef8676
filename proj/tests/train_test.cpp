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

#include "capnet/train.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace capnet {
namespace {

ModelSpec small_model(Family f, bool capacity) {
  ModelSpec s;
  s.family = f;
  s.capacity = capacity;
  s.embed_dim = 8;
  s.hidden_dim = 8;
  s.enc_layers = 2;
  s.dec_layers = 2;
  return s;
}

Dataset small_dataset(TaskKind kind, std::size_t train = 60, std::uint64_t seed = 3) {
  DatasetSpec spec;
  spec.task = TaskSpec::make(kind);
  spec.set_sizes = {4};
  spec.counts = {train, 20, 20};
  spec.seed = seed;
  return generate_dataset(spec);
}

RunConfig small_run(Family f, bool capacity) {
  RunConfig c;
  c.model = small_model(f, capacity);
  c.batch_size = 16;
  c.epochs = 3;
  c.seed = 11;
  return c;
}

TEST(LossTest, WorkedExample) {
  ForwardOutput out;
  out.intermediates = {0.5, 1.5};
  out.prediction = 2.0;
  // (2 - 2)^2 + 2 * (max(0, 0.5 - 1)^2 + max(0, 1.5 - 1)^2) = 0.5
  EXPECT_DOUBLE_EQ(compute_loss(out, 2.0, 2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(compute_loss(out, 3.0, 0.0, 1.0), 1.0);
  EXPECT_THROW(compute_loss(out, 2.0, -1.0, 1.0), ConfigError);
}

TEST(LossTest, PenaltyZeroBelowThreshold) {
  ForwardOutput out;
  out.intermediates = {0.0, 0.3, 1.0};
  out.prediction = 1.3;
  const LossTerms t = loss_terms(out, 1.3, 1.0);
  EXPECT_EQ(t.penalty, 0.0);
  EXPECT_EQ(t.squared_error, 0.0);
}

TEST(LossTest, GraphLossMatchesPerBagTerms) {
  const Featurizer feat;
  const Dataset ds = small_dataset(TaskKind::kUC);
  const Model model(small_model(Family::kGRU, true), 2);
  std::vector<const Bag*> bags;
  for (std::size_t i = 0; i < 10; ++i) bags.push_back(&ds.train[i]);
  ad::Tape tape;
  const auto gl = detail::group_loss(tape, model, bags, feat, 0.7, 0.05);
  double sq = 0, pen = 0;
  for (const Bag* b : bags) {
    const LossTerms t = loss_terms(model.forward(*b, feat), b->label, 0.05);
    sq += t.squared_error;
    pen += t.penalty;
  }
  EXPECT_NEAR(gl.squared.value().item(), sq, 1e-9);
  EXPECT_NEAR(gl.penalty_value, pen, 1e-12);
  ASSERT_TRUE(gl.has_penalty);
  EXPECT_NEAR(gl.penalty.value().item(), pen, 1e-12);
}

TEST(TrainTest, IdenticalRunsAreBitIdentical) {
  const Dataset ds = small_dataset(TaskKind::kUS);
  const Featurizer feat;
  const RunConfig c = small_run(Family::kGRU, true);
  const TrainResult a = train_run(c, ds, feat);
  const TrainResult b = train_run(c, ds, feat);
  EXPECT_EQ(metrics_csv(a.history), metrics_csv(b.history));
  for (const auto& [path, p] : a.model.params()) {
    EXPECT_EQ(p.value, b.model.params().at(path).value) << path;
  }
  RunConfig other = c;
  other.seed = 12;
  EXPECT_NE(metrics_csv(train_run(other, ds, feat).history), metrics_csv(a.history));
}

TEST(TrainTest, MetricsLayout) {
  const Dataset ds = small_dataset(TaskKind::kUS);
  std::vector<std::pair<std::size_t, std::size_t>> seen;
  const TrainResult r = train_run(small_run(Family::kDeepSet, false), ds, Featurizer(),
                                  [&](const MetricsRecord& t, const MetricsRecord& v) {
                                    seen.emplace_back(t.epoch, v.epoch);
                                  });
  EXPECT_EQ(seen.size(), 3u);
  std::istringstream in(metrics_csv(r.history));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,split,mse,penalty,seconds");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].substr(0, 8), "1,train,");
  EXPECT_EQ(rows[1].substr(0, 6), "1,val,");
  EXPECT_EQ(rows[5].substr(rows[5].size() - 2), ",0");
  EXPECT_EQ(r.final_val_mse, r.history.back().mse);
}

TEST(TrainTest, ValMetricMatchesIndependentEvaluation) {
  const Dataset ds = small_dataset(TaskKind::kWTri);
  const Featurizer feat;
  const TrainResult r = train_run(small_run(Family::kLSTM, true), ds, feat);
  double sq = 0;
  for (const Bag& b : ds.val) {
    const double e = r.model.forward(b, feat).prediction - b.label;
    sq += e * e;
  }
  EXPECT_NEAR(r.final_val_mse, sq / ds.val.size(), 1e-9);
}

TEST(TrainTest, FitsConstantLabel) {
  Dataset ds = small_dataset(TaskKind::kUS, 100);
  for (auto* split : {&ds.train, &ds.val, &ds.test})
    for (Bag& b : *split) b.label = 3.0;
  RunConfig c = small_run(Family::kGRU, true);
  c.epochs = 60;
  c.lr = 0.01;
  c.batch_size = 20;
  const TrainResult r = train_run(c, ds, Featurizer());
  EXPECT_LT(r.final_val_mse, 0.05);
  EXPECT_LT(r.final_val_mse, r.history[1].mse);
}

TEST(TrainTest, RegularizerLowersPenalty) {
  const Dataset ds = small_dataset(TaskKind::kUC, 100);
  RunConfig c = small_run(Family::kGRU, true);
  c.epochs = 10;
  c.reg_threshold = 0.05;
  const double free_pen = train_run(c, ds, Featurizer()).history.back().penalty;
  c.reg_lambda = 5.0;
  const double reg_pen = train_run(c, ds, Featurizer()).history.back().penalty;
  EXPECT_LT(reg_pen, free_pen);
}

TEST(TrainTest, ConfigValidation) {
  const Dataset ds = small_dataset(TaskKind::kUS);
  RunConfig c = small_run(Family::kGRU, false);
  c.reg_lambda = 1.0;
  EXPECT_THROW(train_run(c, ds, Featurizer()), ConfigError);
  c = small_run(Family::kGRU, true);
  c.batch_size = ds.train.size() + 1;
  EXPECT_THROW(train_run(c, ds, Featurizer()), ConfigError);
  c = small_run(Family::kGRU, true);
  c.model.input_dim = 4;
  EXPECT_THROW(train_run(c, ds, Featurizer()), ConfigError);
  c = small_run(Family::kGRU, true);
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainTest, RunConfigJsonRoundTrip) {
  RunConfig c = small_run(Family::kLSTM, true);
  c.reg_lambda = 0.5;
  c.reg_threshold = 0.1;
  c.shuffle_instances_per_epoch = false;
  c.dataset = "data/us";
  const RunConfig back = run_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"lr", 0.1}}), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json{{"model", {{"family", "RNN"}}}, {"lr", "x"}}),
               ConfigError);
}

TEST(MultiSeedTest, AggregatesPerSeedRuns) {
  const Dataset ds = small_dataset(TaskKind::kUS);
  const Featurizer feat;
  const RunConfig c = small_run(Family::kDeepSet, false);
  const std::vector<std::uint64_t> one{5};
  const MultiSeedResult single = multi_seed(c, ds, feat, one);
  ASSERT_EQ(single.runs.size(), 1u);
  EXPECT_EQ(single.val.mean, single.runs[0].val_mse);
  EXPECT_EQ(single.val.stdev, 0.0);

  const std::vector<std::uint64_t> same{5, 5, 5};
  const MultiSeedResult repeated = multi_seed(c, ds, feat, same);
  EXPECT_EQ(repeated.test.stdev, 0.0);
  EXPECT_EQ(repeated.test.mean, single.test.mean);

  EXPECT_THROW(multi_seed(c, ds, feat, std::span<const std::uint64_t>()), ConfigError);
}

}  // namespace
}  // namespace capnet
