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

// Runs the capnet binary end to end and checks files and exit codes.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "test_util.hpp"

namespace capnet {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = testing::scratch_dir(std::string("cli_") + info->name());
  }

  Result run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(CAPNET_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path write_json(const std::string& name, const nlohmann::json& j) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  static nlohmann::json dataset_json(const std::string& task = "US") {
    return {{"task", task},
            {"set_size", 4},
            {"counts", {{"train", 40}, {"val", 10}, {"test", 10}}},
            {"seed", 5}};
  }

  static nlohmann::json run_json(const std::string& dataset, const std::string& family,
                                 bool capacity) {
    return {{"dataset", dataset},
            {"model",
             {{"family", family},
              {"capacity", capacity},
              {"embed_dim", 8},
              {"hidden_dim", 8},
              {"enc_layers", 2},
              {"dec_layers", 2}}},
            {"batch_size", 10},
            {"epochs", 2},
            {"seed", 3}};
  }

  // Generates a dataset and trains one model; returns the run directory.
  fs::path trained(const std::string& family, bool capacity) {
    const fs::path data = dir_ / "data";
    if (!fs::exists(data / "manifest.json")) {
      const fs::path spec = write_json("spec.json", dataset_json());
      EXPECT_EQ(run("generate --config " + spec.string() + " --out " + data.string() + " -q").code, 0);
    }
    const fs::path run_dir = dir_ / ("run_" + family + (capacity ? "_c" : ""));
    const fs::path cfg = write_json("run.json", run_json(data.string(), family, capacity));
    const Result r = run("train --config " + cfg.string() + " --out " + run_dir.string() + " -q");
    EXPECT_EQ(r.code, 0) << r.err;
    return run_dir;
  }

  fs::path dir_;
};

TEST_F(CliTest, VersionAndUsage) {
  const Result v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(CAPNET_VERSION), std::string::npos);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train").code, 2);
}

TEST_F(CliTest, GenerateIsDeterministic) {
  const fs::path spec = write_json("spec.json", dataset_json("USS"));
  ASSERT_EQ(run("generate --config " + spec.string() + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("generate --config " + spec.string() + " --out " + (dir_ / "b").string()).code, 0);
  for (const char* f : {"manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    EXPECT_FALSE(slurp(dir_ / "a" / f).empty()) << f;
  }
}

TEST_F(CliTest, UnknownTaskIsUsageError) {
  const fs::path spec = write_json("spec.json", dataset_json("Sent"));
  const Result r = run("generate --config " + spec.string() + " --out " + (dir_ / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Sent"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingFilesAreUsageErrors) {
  EXPECT_EQ(run("generate --config " + (dir_ / "nope.json").string()).code, 2);
  const fs::path cfg = write_json("run.json", run_json((dir_ / "nowhere").string(), "GRU", true));
  const Result r = run("train --config " + cfg.string() + " --out " + (dir_ / "r").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos) << r.err;
}

TEST_F(CliTest, RegularizerNeedsCapacityModel) {
  const fs::path data = dir_ / "data";
  const fs::path spec = write_json("spec.json", dataset_json());
  ASSERT_EQ(run("generate --config " + spec.string() + " --out " + data.string() + " -q").code, 0);
  nlohmann::json j = run_json(data.string(), "GRU", false);
  j["reg_lambda"] = 1.0;
  const Result r = run("train --config " + write_json("run.json", j).string() + " --out " +
                       (dir_ / "r").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("capacity"), std::string::npos) << r.err;
}

TEST_F(CliTest, CorruptDatasetReportsLine) {
  const fs::path data = dir_ / "data";
  const fs::path spec = write_json("spec.json", dataset_json());
  ASSERT_EQ(run("generate --config " + spec.string() + " --out " + data.string() + " -q").code, 0);
  std::string text = slurp(data / "val.jsonl");
  const std::size_t second = text.find('\n') + 1;
  text.insert(second, "{");
  std::ofstream(data / "val.jsonl") << text;
  const fs::path cfg = write_json("run.json", run_json(data.string(), "GRU", true));
  const Result r = run("train --config " + cfg.string() + " --out " + (dir_ / "r").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("val.jsonl:2"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainWritesArtifactsAndRerunsIdentically) {
  const fs::path a = trained("GRU", true);
  const std::string first = slurp(a / "metrics.csv");
  const std::string ckpt = slurp(a / "model.ckpt");
  EXPECT_EQ(first.substr(0, first.find('\n')), "epoch,split,mse,penalty,seconds");
  EXPECT_TRUE(fs::exists(a / "model.json"));
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "train");
  fs::remove_all(a);
  trained("GRU", true);
  EXPECT_EQ(slurp(a / "metrics.csv"), first);
  EXPECT_EQ(slurp(a / "model.ckpt"), ckpt);
}

TEST_F(CliTest, EvalRoutesIntermediates) {
  const fs::path data = dir_ / "data";
  const fs::path cap = trained("GRU", true);
  const fs::path base = trained("GRU", false);
  const std::string common = " --dataset " + data.string() + " --metric mse,intermediates -q";
  ASSERT_EQ(run("eval --checkpoint " + cap.string() + common + " --out " + (dir_ / "ec").string()).code, 0);
  ASSERT_EQ(run("eval --checkpoint " + base.string() + common + " --out " + (dir_ / "eb").string()).code, 0);
  EXPECT_NE(slurp(dir_ / "ec" / "intermediates.csv").find(",capacity,"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "eb" / "intermediates.csv").find(",pseudo,"), std::string::npos);
  const std::string mse = slurp(dir_ / "ec" / "mse.csv");
  EXPECT_EQ(mse.substr(0, mse.find('\n')), "model,split,bags,mse");
  EXPECT_NE(mse.find("C-GRU,test,10,"), std::string::npos) << mse;
}

TEST_F(CliTest, EvalPermsensAndAccuracy) {
  const fs::path run_dir = trained("DeepSet", false);
  const std::string args = "eval --checkpoint " + (run_dir / "model.ckpt").string() +
                           " --dataset " + (dir_ / "data").string() +
                           " --metric permsens,accuracy --k 4 -q --out ";
  ASSERT_EQ(run(args + (dir_ / "e1").string()).code, 0);
  ASSERT_EQ(run(args + (dir_ / "e2").string()).code, 0);
  const std::string perm = slurp(dir_ / "e1" / "permsens.csv");
  EXPECT_EQ(std::count(perm.begin(), perm.end(), '\n'), 5);
  EXPECT_EQ(perm, slurp(dir_ / "e2" / "permsens.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "e1" / "accuracy.csv"));
}

TEST_F(CliTest, EvalArgumentErrors) {
  const fs::path run_dir = trained("GRU", true);
  const std::string base = "eval --checkpoint " + run_dir.string() + " --dataset " +
                           (dir_ / "data").string() + " --out " + (dir_ / "e").string();
  EXPECT_EQ(run(base + " --metric ''").code, 2);
  EXPECT_EQ(run(base + " --metric bogus").code, 2);
  EXPECT_EQ(run(base + " --metric permsens --k 1").code, 2);
  EXPECT_EQ(run(base + " --metric mse --split holdout").code, 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "none").string() + " --dataset " +
                (dir_ / "data").string() + " --metric mse")
                .code,
            2);
}

TEST_F(CliTest, SweepAndReport) {
  const nlohmann::json sweep = {
      {"dataset", dataset_json()},
      {"run", run_json("", "GRU", false)},
      {"models", {"GRU", "C-GRU"}},
      {"seeds", {1, 2}},
      {"train_sizes", {20, 40}}};
  const fs::path cfg = write_json("sweep.json", sweep);
  const Result a = run("sweep --config " + cfg.string() + " --out " + (dir_ / "s1").string() + " -q --jobs 2");
  ASSERT_EQ(a.code, 0) << a.err;
  const Result b = run("sweep --config " + cfg.string() + " --out " + (dir_ / "s2").string() + " -q");
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"sweep.csv", "sweep_runs.csv", "sweep_delta.csv"}) {
    EXPECT_EQ(slurp(dir_ / "s1" / f), slurp(dir_ / "s2" / f)) << f;
  }
  EXPECT_EQ(a.out, slurp(dir_ / "s1" / "sweep.csv"));
  const std::string runs = slurp(dir_ / "s1" / "sweep_runs.csv");
  EXPECT_EQ(std::count(runs.begin(), runs.end(), '\n'), 1 + 2 * 2 * 2);

  const fs::path r1 = trained("GRU", true);
  const fs::path report = write_json("report.json", {{"runs", {{"cgru", r1.string()}}}, {"threshold", 1e9}});
  ASSERT_EQ(run("report --config " + report.string() + " --out " + (dir_ / "rep").string() + " -q").code, 0);
  const std::string summary = slurp(dir_ / "rep" / "summary.csv");
  EXPECT_NE(summary.find("cgru,2,"), std::string::npos) << summary;
  EXPECT_EQ(summary.substr(summary.size() - 3), ",1\n");
  const fs::path bad = write_json("bad.json", {{"runs", nlohmann::json::object()}});
  EXPECT_EQ(run("report --config " + bad.string()).code, 2);
}

}  // namespace
}  // namespace capnet
