// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ddp/ddp.hpp"
#include "fixtures.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DDP_CLI + "\" " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Small enough to train in about a second.
const std::string kTiny =
    "--config synth_small --set synth.instances_per_period=1500 --set model.hidden=16 --set model.embedding_dim=4";

}  // namespace

TEST(Cli, TrainWritesArtifactsAndIsDeterministic) {
  fixture::TempDir dir("cli_train");
  const auto a = cli("train " + kTiny + " --mode DDP --out " + dir.file("a"));
  ASSERT_EQ(a.code, 0) << a.out;
  const auto metrics = slurp(dir.file("a/metrics.csv"));
  // Header, then ALL rows for periods 4..6 and three split rows for period 7.
  EXPECT_EQ(count_lines(metrics), 1u + 3u + 3u) << metrics;
  EXPECT_NE(slurp(dir.file("a/manifest.txt")).find("input_digest"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir.file("a/checkpoint.bin")));

  const auto b = cli("train " + kTiny + " --mode DDP --out " + dir.file("b"));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(dir.file("b/metrics.csv")), metrics);
}

TEST(Cli, ConfigErrorsExitTwo) {
  fixture::TempDir dir("cli_cfg");
  EXPECT_EQ(cli("train " + kTiny + " --mode PLAIN --lambda 0.5 --out " + dir.file("x")).code, 2);
  EXPECT_EQ(cli("train " + kTiny + " --set train.speed=3 --out " + dir.file("x")).code, 2);
  EXPECT_EQ(cli("train --config no_such_preset").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(Cli, EvalMatchesTrainFinalReport) {
  fixture::TempDir dir("cli_eval");
  ASSERT_EQ(cli("train " + kTiny + " --mode FP_ONLY --out " + dir.file("t")).code, 0);
  const auto train_csv = slurp(dir.file("t/metrics.csv"));
  const auto e1 = cli("eval " + kTiny + " --checkpoint " + dir.file("t/checkpoint.bin") + " --out " + dir.file("e"));
  ASSERT_EQ(e1.code, 0) << e1.out;
  const auto eval_csv = slurp(dir.file("e/eval.csv"));
  // Same period-7 numbers; the loss columns differ since eval trains nothing.
  std::istringstream in(eval_csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto prefix = line.substr(0, line.find(',', line.find(',', line.find(',', line.find(',') + 1) + 1) + 1));
    EXPECT_NE(train_csv.find(prefix), std::string::npos) << prefix;
  }
  ASSERT_EQ(cli("eval " + kTiny + " --checkpoint " + dir.file("t/checkpoint.bin") + " --out " + dir.file("e2")).code, 0);
  EXPECT_EQ(slurp(dir.file("e2/eval.csv")), eval_csv);
}

TEST(Cli, EvalOnEmptyDataFails) {
  fixture::TempDir dir("cli_empty");
  ASSERT_EQ(cli("train " + kTiny + " --out " + dir.file("t")).code, 0);
  ASSERT_EQ(cli("synth " + kTiny + " --out " + dir.file("s")).code, 0);
  std::ofstream(dir.file("empty.csv")) << "label,period,f0,f1,f2\n";
  const auto r = cli("eval --data " + dir.file("empty.csv") + " --schema " + dir.file("s/schema.conf") +
                     " --checkpoint " + dir.file("t/checkpoint.bin") + " --out " + dir.file("e"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("EMPTY_SET"), std::string::npos) << r.out;
}

TEST(Cli, SynthRoundTripAndSeeds) {
  fixture::TempDir dir("cli_synth");
  ASSERT_EQ(cli("synth " + kTiny + " --out " + dir.file("a")).code, 0);
  ASSERT_EQ(cli("synth " + kTiny + " --set synth.seed=9 --out " + dir.file("b")).code, 0);
  const auto data = slurp(dir.file("a/data.csv"));
  EXPECT_EQ(count_lines(data), 1u + 7u * 1500u);
  EXPECT_EQ(data.substr(0, data.find('\n')), "label,period,f0,f1,f2");
  EXPECT_NE(slurp(dir.file("b/data.csv")), data);
  EXPECT_EQ(slurp(dir.file("b/truth.csv")), slurp(dir.file("a/truth.csv")));

  const auto schema = ddp::Schema::load(dir.file("a/schema.conf"));
  EXPECT_EQ(ddp::ingest_csv(dir.file("a/data.csv"), schema).instances.size(), 7u * 1500u);

  // Training from the written CSV matches training on the generated stream.
  ASSERT_EQ(cli("train " + kTiny + " --out " + dir.file("gen")).code, 0);
  ASSERT_EQ(cli("train " + kTiny + " --data " + dir.file("a/data.csv") + " --schema " + dir.file("a/schema.conf") +
                " --out " + dir.file("csv"))
                .code,
            0);
  EXPECT_EQ(slurp(dir.file("csv/metrics.csv")), slurp(dir.file("gen/metrics.csv")));
}

TEST(Cli, KlDiag) {
  fixture::TempDir dir("cli_kl");
  const auto r = cli("kl-diag " + kTiny + " --top 5 --out " + dir.file("k"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mean KL feature"), std::string::npos);
  // One row per tracked key and period; only keys seen in every period count.
  const auto rows = count_lines(slurp(dir.file("k/kl.csv"))) - 1;
  EXPECT_GE(rows, 5u * 7u);
  EXPECT_EQ(rows % 7u, 0u);
}

TEST(Cli, GradCheckPassesAndCatchesCorruption) {
  const auto ok = cli("grad-check");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS DNN"), std::string::npos);
  EXPECT_NE(ok.out.find("PASS DEEPFM"), std::string::npos);
  const auto bad = cli("grad-check --kind DEEPFM --corrupt-slot fp.U");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("worst slot fp.U"), std::string::npos) << bad.out;
}
