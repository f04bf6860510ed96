// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpsum/harness.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "dpsum/common.h"
#include "dpsum/rng.h"
#include "dpsum/synth.h"

namespace dpsum {
namespace {

namespace fs = std::filesystem;
using ::testing::HasSubstr;

// A fresh scratch directory under the system temp dir.
std::string ScratchDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpsum_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// A small synthetic corpus file shared by the end-to-end tests.
std::string SmallCorpus() {
  static const std::string path = [] {
    const std::string dir = ScratchDir("corpus");
    SynthOptions o;
    o.meetings_per_domain = 12;
    o.profile.product_tokens = 16;
    const std::string p = dir + "/corpus.jsonl";
    WriteFileAtomic(p, SynthCorpusJsonl(o));
    return p;
  }();
  return path;
}

RunConfig SmallRun(TrainMode mode, const std::string& out) {
  RunConfig c;
  c.corpus = SmallCorpus();
  c.mode = mode;
  if (IsPrivate(mode)) c.target_epsilon = 8.0;
  c.epochs = 2;
  c.max_vocab = 200;
  c.model.context_length = 96;
  c.model.d_model = 16;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.lora.rank = 4;
  c.decoding.beam_width = 2;
  c.decoding.max_new_tokens = 8;
  c.output_dir = out;
  return c;
}

TEST(TrainModeTest, NamesRoundTrip) {
  for (TrainMode m : {TrainMode::kNonDp, TrainMode::kDpGhost, TrainMode::kDpPft}) {
    EXPECT_EQ(ParseTrainMode(TrainModeName(m)), m);
  }
  EXPECT_THROW(ParseTrainMode("dp"), ConfigError);
  EXPECT_FALSE(IsPrivate(TrainMode::kNonDp));
  EXPECT_TRUE(IsPrivate(TrainMode::kDpPft));
}

TEST(RunConfigTest, MergeJsonAppliesNestedKeys) {
  RunConfig c;
  c.MergeJson(nlohmann::json::parse(R"({
      "mode": "dp_pft", "train_domain": "Aca", "target_epsilon": 3,
      "model": {"d_model": 32, "n_heads": 2}, "lora": {"rank": 4},
      "decoding": {"beam_width": 3}, "seed": 9})"));
  EXPECT_EQ(c.mode, TrainMode::kDpPft);
  EXPECT_EQ(c.train_domain, Domain::kAcademic);
  EXPECT_EQ(c.target_epsilon, 3.0);
  EXPECT_EQ(c.model.d_model, 32);
  EXPECT_EQ(c.model.n_layers, ModelConfig{}.n_layers);
  EXPECT_EQ(c.lora.rank, 4);
  EXPECT_EQ(c.decoding.beam_width, 3);
  EXPECT_EQ(c.decoding.max_new_tokens, 32);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_NO_THROW(c.Validate());
  EXPECT_DOUBLE_EQ(c.ResolvedLearningRate(), 4e-4);
  EXPECT_DOUBLE_EQ(c.ResolvedWeightDecay(), 0.01);
  EXPECT_DOUBLE_EQ(c.ResolvedClippingNorm(), 0.1);
  EXPECT_TRUE(c.ResolvedLora().enabled);
}

TEST(RunConfigTest, MergeJsonRejectsUnknownAndMistypedKeys) {
  RunConfig c;
  EXPECT_THROW(c.MergeJson(nlohmann::json::parse(R"({"epoch": 3})")),
               ConfigError);
  EXPECT_THROW(c.MergeJson(nlohmann::json::parse(R"({"epochs": "3"})")),
               ConfigError);
  EXPECT_THROW(c.MergeJson(nlohmann::json::parse(R"({"model": {"width": 3}})")),
               ConfigError);
  EXPECT_THROW(
      c.MergeJson(nlohmann::json::parse(R"({"model": {"vocab_size": 30}})")),
      ConfigError);
  EXPECT_THROW(c.MergeJson(nlohmann::json::parse("[1]")), ConfigError);
  EXPECT_THROW(c.MergeJson(nlohmann::json::parse(R"({"clip_mode": "x"})")),
               Error);
}

TEST(RunConfigTest, NonDpRejectsEveryPrivacySetting) {
  RunConfig base;
  base.mode = TrainMode::kNonDp;
  EXPECT_NO_THROW(base.Validate());
  const char* keys[] = {"target_epsilon", "delta", "noise_multiplier",
                        "clipping_norm"};
  for (const char* k : keys) {
    RunConfig c = base;
    c.MergeJson({{k, 0.5}});
    try {
      c.Validate();
      ADD_FAILURE() << k << " accepted";
    } catch (const ConfigError& e) {
      EXPECT_THAT(e.what(), HasSubstr(k));
    }
  }
  RunConfig c = base;
  c.clip_mode = ClipMode::kNaive;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(RunConfigTest, ValidationErrors) {
  RunConfig c;
  EXPECT_THROW(c.Validate(), ConfigError);  // dp_ghost needs a target
  c.target_epsilon = 8.0;
  EXPECT_NO_THROW(c.Validate());
  RunConfig bad = c;
  bad.base_checkpoint = "x.ckpt";
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.target_epsilon = -1.0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.delta = 1.5;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.clipping_norm = 0.0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.max_vocab = 5;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = c;
  bad.model.n_heads = 5;
  EXPECT_THROW(bad.Validate(), Error);
  bad = c;
  bad.decoding.beam_width = 0;
  EXPECT_THROW(bad.Validate(), ConfigError);
}

TEST(RunConfigTest, ToJsonRoundTripsThroughMerge) {
  RunConfig c;
  c.target_epsilon = 3.0;
  c.model.d_model = 32;
  nlohmann::json j = nlohmann::json::parse(c.ToJson().dump());
  j.erase("optimizer");
  RunConfig back;
  back.MergeJson(j);
  EXPECT_EQ(back.ToJson(), c.ToJson());
}

TEST(RunConfigTest, LoadRunConfigReportsBadFiles) {
  const std::string dir = ScratchDir("config");
  WriteFileAtomic(dir + "/bad.json", "{ nope");
  EXPECT_THROW(LoadRunConfig(dir + "/bad.json"), ConfigError);
  EXPECT_THROW(LoadRunConfig(dir + "/missing.json"), ConfigError);
  WriteFileAtomic(dir + "/ok.json", R"({"epochs": 3})");
  EXPECT_EQ(LoadRunConfig(dir + "/ok.json").epochs, 3);
}

TEST(PlanPrivacyTest, CalibratesToTheTargetAtDefaultSettings) {
  const PrivacyPlan p = PlanPrivacy(8.0, std::nullopt, 690, 4, 20);
  EXPECT_EQ(p.steps, 20 * 173);
  EXPECT_DOUBLE_EQ(p.delta, 1.0 / 1380.0);
  EXPECT_DOUBLE_EQ(p.sample_rate, 4.0 / 690.0);
  EXPECT_GT(p.epsilon, 8.0 - 1e-3);
  EXPECT_LE(p.epsilon, 8.0);
  EXPECT_NEAR(p.noise_multiplier, 0.594626414, 1e-3);
  const Table t = p.ToTable();
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.header.size(), t.rows[0].size());
}

TEST(PlanPrivacyTest, ExplicitNoiseIsCheckedAgainstTheTarget) {
  const PrivacyPlan p = PlanPrivacy(8.0, 1e-5, 690, 4, 20, 2.0);
  EXPECT_DOUBLE_EQ(p.noise_multiplier, 2.0);
  EXPECT_LT(p.epsilon, 8.0);
  EXPECT_THROW(PlanPrivacy(8.0, 1e-5, 690, 4, 20, 0.4), CalibrationError);
  EXPECT_THROW(PlanPrivacy(8.0, 1e-5, 690, 4, 20, 0.0), CalibrationError);
  EXPECT_THROW(PlanPrivacy(8.0, 1e-5, 3, 4, 20), ConfigError);
}

// With no noise and a clipping norm no gradient can reach, the private path
// must follow the non-private trajectory up to summation order.
double TrajectoryGap(ClipMode clip_mode) {
  ModelConfig mc;
  mc.vocab_size = 13;
  mc.context_length = 16;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  ParamStore dp = InitParams(mc, 5);
  ParamStore plain = dp;
  OptimState dp_state, plain_state;
  StepConfig dp_cfg;
  dp_cfg.mode = TrainMode::kDpGhost;
  dp_cfg.clip.clipping_norm = 1e12;
  dp_cfg.clip.noise_multiplier = 0.0;
  dp_cfg.clip.mode = clip_mode;
  dp_cfg.seed = 5;
  StepConfig plain_cfg;
  CounterRng rng(77);
  double gap = 0.0;
  for (int64_t step = 0; step < 50; ++step) {
    const int64_t b = 1 + static_cast<int64_t>(rng.NextBelow(4));
    std::vector<SerializedExample> examples;
    for (int64_t i = 0; i < b; ++i) {
      std::vector<int32_t> q, x, y;
      for (int k = 0; k < 2; ++k) q.push_back(5 + rng.NextBelow(8));
      for (int k = 0; k < 4 + static_cast<int>(rng.NextBelow(4)); ++k) {
        x.push_back(5 + rng.NextBelow(8));
      }
      for (int k = 0; k < 1 + static_cast<int>(rng.NextBelow(3)); ++k) {
        y.push_back(5 + rng.NextBelow(8));
      }
      examples.push_back(*SerializeExample(q, x, y, mc.context_length));
    }
    std::vector<const SerializedExample*> ptrs;
    for (const auto& e : examples) ptrs.push_back(&e);
    const Batch batch = MakeBatch(ptrs);
    dp_cfg.clip.batch_size = b;
    TrainStep(dp, dp_state, mc, LoraConfig{}, batch, dp_cfg, step);
    TrainStep(plain, plain_state, mc, LoraConfig{}, batch, plain_cfg, step);
    for (const auto& [name, p] : plain) {
      const Tensor& a = p.value;
      const Tensor& d = dp.at(name).value;
      for (int64_t i = 0; i < a.size(); ++i) {
        gap = std::max(gap, std::abs(a[i] - d[i]));
      }
    }
  }
  return gap;
}

TEST(TrainStepTest, NoiselessUnclippedPrivateStepsMatchNonPrivateGhost) {
  EXPECT_LE(TrajectoryGap(ClipMode::kGhost), 1e-12);
}

TEST(TrainStepTest, NoiselessUnclippedPrivateStepsMatchNonPrivateNaive) {
  EXPECT_LE(TrajectoryGap(ClipMode::kNaive), 1e-12);
}

TEST(OutputLockTest, SecondLockFailsUntilReleased) {
  const std::string dir = ScratchDir("lock");
  {
    OutputLock lock(dir);
    EXPECT_TRUE(fs::exists(dir + "/.lock"));
    EXPECT_THROW(OutputLock second(dir), Error);
  }
  EXPECT_FALSE(fs::exists(dir + "/.lock"));
  EXPECT_NO_THROW(OutputLock again(dir));
}

TEST(PrepareDataTest, TokenizerCoversAllTrainingSplits) {
  const PreparedData d = PrepareData(SmallCorpus(), 200);
  EXPECT_EQ(d.splits.size(), 3u);
  for (Domain dom : kAllDomains) {
    EXPECT_FALSE(d.splits.at(dom).train.empty());
    EXPECT_FALSE(d.splits.at(dom).test.empty());
  }
  EXPECT_LE(d.tokenizer.size(), 200);
  EXPECT_EQ(d.corpus_hash, HexDigest(HashFile(SmallCorpus())));
}

TEST(TrainRunTest, PrivateRunWritesManifestWithinBudget) {
  const std::string out = ScratchDir("train_ghost");
  std::ostringstream log;
  const auto m = TrainRun(SmallRun(TrainMode::kDpGhost, out), nullptr, &log);
  EXPECT_THAT(log.str(), HasSubstr("epoch 2/2"));
  const double eps = m["privacy"]["epsilon"].get<double>();
  EXPECT_LE(eps, 8.0);
  EXPECT_GT(eps, 7.999);
  const int64_t n = m["data"]["train_examples"].get<int64_t>();
  EXPECT_DOUBLE_EQ(m["privacy"]["delta"].get<double>(), 1.0 / (2.0 * n));
  EXPECT_EQ(m["steps"].get<int64_t>(), 2 * ((n + 3) / 4));
  EXPECT_EQ(m["epoch_losses"].size(), 2u);
  EXPECT_DOUBLE_EQ(m["trainable_fraction"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(out + "/" + kCheckpointFile));
  EXPECT_TRUE(fs::exists(out + "/" + kTokenizerFile));
  EXPECT_FALSE(fs::exists(out + "/.lock"));
  const auto on_disk =
      nlohmann::json::parse(ReadFile(out + "/" + kManifestFile));
  EXPECT_EQ(on_disk["artifacts"][kCheckpointFile],
            HexDigest(HashFile(out + "/" + kCheckpointFile)));
}

TEST(TrainRunTest, RepeatedRunsAreByteIdentical) {
  const std::string a = ScratchDir("det_a");
  const std::string b = ScratchDir("det_b");
  TrainRun(SmallRun(TrainMode::kDpGhost, a));
  TrainRun(SmallRun(TrainMode::kDpGhost, b));
  EXPECT_EQ(ReadFile(a + "/" + kCheckpointFile),
            ReadFile(b + "/" + kCheckpointFile));
  RunConfig other = SmallRun(TrainMode::kDpGhost, ScratchDir("det_c"));
  other.seed = 99;
  TrainRun(other);
  EXPECT_NE(ReadFile(a + "/" + kCheckpointFile),
            ReadFile(other.output_dir + "/" + kCheckpointFile));
}

TEST(TrainRunTest, NonPrivateRunReducesLossAndHasNoPrivacyBlock) {
  const std::string out = ScratchDir("train_nondp");
  RunConfig c = SmallRun(TrainMode::kNonDp, out);
  c.epochs = 4;
  const auto m = TrainRun(c);
  EXPECT_TRUE(m["privacy"].is_null());
  const auto& losses = m["epoch_losses"];
  EXPECT_LT(losses.back().get<double>(), losses.front().get<double>());
}

TEST(TrainRunTest, PftTrainsOnlyAdaptersOnTopOfABaseCheckpoint) {
  const std::string base_dir = ScratchDir("pft_base");
  TrainRun(SmallRun(TrainMode::kNonDp, base_dir));
  const std::string out = ScratchDir("pft");
  RunConfig c = SmallRun(TrainMode::kDpPft, out);
  c.base_checkpoint = base_dir + "/" + kCheckpointFile;
  const auto m = TrainRun(c);
  EXPECT_LT(m["trainable_fraction"].get<double>(), 0.15);
  const PreparedData d = PrepareData(SmallCorpus(), 200);
  const Checkpoint base = LoadCheckpointFor(c.base_checkpoint, d.tokenizer);
  const Checkpoint tuned = LoadCheckpointFor(out + "/" + kCheckpointFile,
                                             d.tokenizer);
  EXPECT_EQ(tuned.metadata["lora"]["enabled"], true);
  for (const auto& [name, p] : base.params) {
    EXPECT_EQ(tuned.params.at(name).value, p.value) << name;
  }
  EXPECT_GT(tuned.params.size(), base.params.size());
  // The adapted model decodes through the KV cache.
  const auto preds = Generate(tuned, d.tokenizer,
                              d.splits.at(Domain::kProduct).test, c.decoding);
  EXPECT_EQ(preds.size(), d.splits.at(Domain::kProduct).test.size());
}

TEST(TrainRunTest, RejectsLockedOutputAndMismatchedBase) {
  const std::string out = ScratchDir("locked");
  {
    OutputLock lock(out);
    EXPECT_THROW(TrainRun(SmallRun(TrainMode::kNonDp, out)), Error);
  }
  const std::string base_dir = ScratchDir("mismatch_base");
  TrainRun(SmallRun(TrainMode::kNonDp, base_dir));
  RunConfig c = SmallRun(TrainMode::kDpPft, ScratchDir("mismatch"));
  c.base_checkpoint = base_dir + "/" + kCheckpointFile;
  c.model.d_model = 8;
  EXPECT_THROW(TrainRun(c), ConfigError);
}

TEST(GenerateEvaluateTest, PredictionsRoundTripAndScore) {
  const std::string out = ScratchDir("gen");
  RunConfig c = SmallRun(TrainMode::kNonDp, out);
  TrainRun(c);
  const PreparedData d = PrepareData(SmallCorpus(), 200);
  const Checkpoint ck = LoadCheckpointFor(out + "/" + kCheckpointFile, d.tokenizer);
  const auto& gold = d.splits.at(Domain::kCommittee).valid;
  const auto preds = Generate(ck, d.tokenizer, gold, c.decoding);
  ASSERT_EQ(preds.size(), gold.size());
  EXPECT_EQ(preds, Generate(ck, d.tokenizer, gold, c.decoding));
  const auto parsed = ParsePredictionsJsonl(PredictionsToJsonl(preds), "p");
  ASSERT_EQ(parsed.size(), preds.size());
  for (const Prediction& p : preds) {
    EXPECT_EQ(parsed.at(p.id), p.text);
    EXPECT_LE(static_cast<int64_t>(WordTokens(p.text).size()),
              c.decoding.max_new_tokens);
  }
  const ScoreReport r = Evaluate(gold, parsed, Domain::kProduct);
  ASSERT_EQ(r.cells.size(), 1u);
  const CellScores& cell = r.cells.at({Domain::kProduct, Domain::kCommittee});
  EXPECT_EQ(cell.n, static_cast<int64_t>(gold.size()));
  for (double v : {cell.rouge1, cell.rouge2, cell.rouge_l,
                   cell.faithfulness_rouge_l, cell.hallucination_rate}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(PredictionLengths(gold, parsed).size(), gold.size());
}

TEST(GenerateEvaluateTest, CheckpointMustMatchTokenizer) {
  const std::string out = ScratchDir("tok_mismatch");
  TrainRun(SmallRun(TrainMode::kNonDp, out));
  const PreparedData d = PrepareData(SmallCorpus(), 100);
  EXPECT_THROW(LoadCheckpointFor(out + "/" + kCheckpointFile, d.tokenizer),
               ConfigError);
  EXPECT_THROW(LoadCheckpointFor(out + "/absent.ckpt", d.tokenizer), Error);
}

Example Gold(const std::string& id, const std::string& summary) {
  Example e;
  e.id = id;
  e.meeting_id = "m";
  e.query = "q";
  e.transcript = "A: the cat sat";
  e.summary = summary;
  return e;
}

TEST(JsonlTest, PredictionErrorsNameTheLine) {
  try {
    ParsePredictionsJsonl("{\"id\":\"a\",\"prediction\":\"x\"}\n{oops\n", "p.jsonl");
    ADD_FAILURE();
  } catch (const ParseError& e) {
    EXPECT_THAT(e.what(), HasSubstr("p.jsonl: line 2"));
  }
  EXPECT_THROW(ParsePredictionsJsonl("{\"id\":\"a\"}\n", "p"), ParseError);
  EXPECT_THROW(ParsePredictionsJsonl("{\"id\":\"a\",\"prediction\":\"x\"}\n"
                                     "{\"id\":\"a\",\"prediction\":\"y\"}\n",
                                     "p"),
               ParseError);
  EXPECT_TRUE(ParsePredictionsJsonl("\n  \n", "p").empty());
}

TEST(JsonlTest, EvaluateRequiresAnExactIdJoin) {
  const std::vector<Example> gold = {Gold("a", "the cat"), Gold("b", "sat")};
  EXPECT_THROW(Evaluate(gold, {{"a", "cat"}}, Domain::kProduct), ParseError);
  EXPECT_THROW(Evaluate(gold, {{"a", "x"}, {"b", "y"}, {"c", "z"}},
                        Domain::kProduct),
               ParseError);
  const ScoreReport r =
      Evaluate(gold, {{"a", "the cat"}, {"b", "sat"}}, Domain::kAcademic);
  const CellScores& c = r.cells.at({Domain::kAcademic, Domain::kProduct});
  EXPECT_DOUBLE_EQ(c.rouge1, 1.0);
  EXPECT_DOUBLE_EQ(c.rouge_l, 1.0);
  EXPECT_DOUBLE_EQ(c.mean_length, 1.5);
}

TEST(JsonlTest, ExamplesRoundTrip) {
  const PreparedData d = PrepareData(SmallCorpus(), 200);
  const auto& ex = d.splits.at(Domain::kAcademic).test;
  const auto back = ParseExamplesJsonl(ExamplesToJsonl(ex), "x");
  ASSERT_EQ(back.size(), ex.size());
  for (size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(back[i].id, ex[i].id);
    EXPECT_EQ(back[i].transcript, ex[i].transcript);
    EXPECT_EQ(back[i].summary, ex[i].summary);
    EXPECT_EQ(back[i].domain, ex[i].domain);
  }
  EXPECT_THROW(ParseExamplesJsonl("", "x"), ParseError);
  const std::string line = ExampleToJson(ex[0]).dump() + "\n";
  EXPECT_THROW(ParseExamplesJsonl(line + line, "x"), ParseError);
}

TEST(CrossDomainTest, ReuseReportsTheMissingCheckpoint) {
  CrossDomainOptions o;
  o.base = SmallRun(TrainMode::kDpGhost, "");
  o.modes = {TrainMode::kNonDp};
  o.seeds = {1};
  o.out_dir = ScratchDir("cross_missing");
  o.reuse_checkpoints = true;
  try {
    RunCrossDomain(o);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_THAT(e.what(), HasSubstr("product"));
    EXPECT_THAT(e.what(), HasSubstr("model.ckpt"));
  }
}

TEST(CrossDomainTest, EmitsCompleteReports) {
  CrossDomainOptions o;
  o.base = SmallRun(TrainMode::kDpGhost, "");
  o.base.epochs = 1;
  o.modes = {TrainMode::kDpGhost, TrainMode::kNonDp};
  o.seeds = {1};
  o.out_dir = ScratchDir("cross");
  const CrossDomainResult r = RunCrossDomain(o);
  for (TrainMode m : o.modes) {
    EXPECT_EQ(r.test.at(m).cells.size(), 9u);
    EXPECT_EQ(r.valid.at(m).cells.size(), 9u);
    const fs::path dir = fs::path(o.out_dir) / std::string(TrainModeName(m));
    for (const char* f : {"report.csv", "report.txt", "report.md",
                          "faithfulness_valid.csv", "faithfulness_valid.md"}) {
      EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_TRUE(fs::exists(dir / "seed1" / "academic" /
                           "pred_committee_valid.jsonl"));
  }
  EXPECT_EQ(r.lengths.rows.size(), 8u);
  EXPECT_TRUE(fs::exists(fs::path(o.out_dir) / "lengths.csv"));
  const std::string report = ReadFile(o.out_dir + "/nondp/report.csv");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 10);
  // Reusing the checkpoints reproduces the same report.
  o.reuse_checkpoints = true;
  RunCrossDomain(o);
  EXPECT_EQ(ReadFile(o.out_dir + "/nondp/report.csv"), report);
}

}  // namespace
}  // namespace dpsum
