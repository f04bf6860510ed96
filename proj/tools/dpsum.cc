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

// Command-line front end: synth, ingest, account, train, generate, evaluate
// and crossdomain.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "dpsum/common.h"
#include "dpsum/harness.h"
#include "dpsum/synth.h"

namespace dpsum {
namespace {

namespace fs = std::filesystem;

// Prints a table to stdout and optionally writes it as CSV ('-' = stdout in
// place of the text rendering).
void EmitTable(const Table& table, const std::string& csv) {
  if (csv == "-") {
    std::cout << table.ToCsv();
    return;
  }
  std::cout << table.ToText();
  if (!csv.empty()) WriteFileAtomic(csv, table.ToCsv());
}

// Training flags shared by `train` and `crossdomain`; unset flags leave the
// config file (or built-in defaults) untouched.
struct TrainFlags {
  std::string config;
  std::string corpus;
  std::string mode;
  std::string train_domain;
  std::optional<double> target_epsilon;
  std::optional<double> delta;
  std::optional<double> noise_multiplier;
  std::optional<double> clipping_norm;
  std::string clip_mode;
  std::optional<int64_t> batch_size;
  std::optional<int64_t> epochs;
  std::optional<double> learning_rate;
  std::optional<double> weight_decay;
  std::optional<int64_t> max_vocab;
  std::optional<int64_t> context_length;
  std::optional<int64_t> d_model;
  std::optional<int64_t> n_layers;
  std::optional<int64_t> n_heads;
  std::optional<int64_t> lora_rank;
  std::optional<double> lora_alpha;
  std::string base_checkpoint;
  std::optional<uint64_t> seed;
  std::optional<int64_t> beam_width;
  std::optional<int64_t> max_new_tokens;
  std::optional<double> length_penalty;

  void Register(CLI::App* app, bool with_domain_and_mode) {
    app->add_option("--config", config, "JSON run config; flags override it");
    app->add_option("--corpus", corpus, "Corpus JSONL file");
    if (with_domain_and_mode) {
      app->add_option("--mode", mode, "nondp, dp_ghost or dp_pft");
      app->add_option("--train-domain", train_domain,
                      "product, academic or committee");
      app->add_option("--base-checkpoint", base_checkpoint,
                      "Frozen starting weights for dp_pft");
    }
    app->add_option("--target-eps", target_epsilon, "Target epsilon");
    app->add_option("--delta", delta, "Delta (default 1/(2|train|))");
    app->add_option("--noise-multiplier", noise_multiplier,
                    "Fixed noise multiplier instead of calibration");
    app->add_option("--clip", clipping_norm, "Per-example clipping norm C");
    app->add_option("--clip-mode", clip_mode, "ghost or naive");
    app->add_option("--batch-size", batch_size);
    app->add_option("--epochs", epochs);
    app->add_option("--lr", learning_rate, "Learning rate");
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--max-vocab", max_vocab,
                    "Vocabulary size including special tokens");
    app->add_option("--context-length", context_length);
    app->add_option("--d-model", d_model);
    app->add_option("--layers", n_layers);
    app->add_option("--heads", n_heads);
    app->add_option("--lora-rank", lora_rank);
    app->add_option("--lora-alpha", lora_alpha);
    app->add_option("--seed", seed);
    app->add_option("--beam", beam_width, "Beam width");
    app->add_option("--max-new-tokens", max_new_tokens);
    app->add_option("--length-penalty", length_penalty);
  }

  RunConfig Resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : LoadRunConfig(config);
    if (!corpus.empty()) c.corpus = corpus;
    if (!mode.empty()) c.mode = ParseTrainMode(mode);
    if (!train_domain.empty()) c.train_domain = ParseDomain(train_domain);
    if (target_epsilon) c.target_epsilon = target_epsilon;
    if (delta) c.delta = delta;
    if (noise_multiplier) c.noise_multiplier = noise_multiplier;
    if (clipping_norm) c.clipping_norm = clipping_norm;
    if (!clip_mode.empty()) c.clip_mode = ParseClipMode(clip_mode);
    if (batch_size) c.batch_size = *batch_size;
    if (epochs) c.epochs = *epochs;
    if (learning_rate) c.learning_rate = learning_rate;
    if (weight_decay) c.weight_decay = weight_decay;
    if (max_vocab) c.max_vocab = *max_vocab;
    if (context_length) c.model.context_length = *context_length;
    if (d_model) c.model.d_model = *d_model;
    if (n_layers) c.model.n_layers = *n_layers;
    if (n_heads) c.model.n_heads = *n_heads;
    if (lora_rank) c.lora.rank = *lora_rank;
    if (lora_alpha) c.lora.alpha = *lora_alpha;
    if (!base_checkpoint.empty()) c.base_checkpoint = base_checkpoint;
    if (seed) c.seed = *seed;
    if (beam_width) c.decoding.beam_width = *beam_width;
    if (max_new_tokens) c.decoding.max_new_tokens = *max_new_tokens;
    if (length_penalty) c.decoding.length_penalty = *length_penalty;
    return c;
  }
};

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    if (end > start) out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

uint64_t ParseSeed(const std::string& s) {
  size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-') {
    throw ConfigError(fmt::format("invalid seed '{}'", s));
  }
  return v;
}

int Run(int argc, char** argv) {
  CLI::App app{"Differentially private query-focused meeting summarization"};
  app.require_subcommand(1);

  // synth
  SynthOptions synth;
  std::string synth_out;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Write a synthetic meeting corpus (JSONL)");
  synth_cmd->add_option("--out", synth_out, "Output JSONL path")->required();
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--meetings-per-domain", synth.meetings_per_domain);
  synth_cmd->add_option("--min-queries", synth.min_queries);
  synth_cmd->add_option("--max-queries", synth.max_queries);
  synth_cmd->add_option("--product-tokens", synth.profile.product_tokens,
                        "Mean transcript length of product meetings");
  synth_cmd->add_option("--academic-ratio", synth.profile.academic_ratio);
  synth_cmd->add_option("--committee-ratio", synth.profile.committee_ratio);

  // ingest
  std::string ingest_corpus, ingest_out, ingest_csv;
  int64_t ingest_vocab = 512;
  bool skip_malformed = false;
  CLI::App* ingest_cmd = app.add_subcommand(
      "ingest", "Validate a corpus, split it and build the tokenizer");
  ingest_cmd->add_option("--corpus", ingest_corpus)->required();
  ingest_cmd->add_option("--out-dir", ingest_out,
                         "Write <domain>_<split>.jsonl and tokenizer.json");
  ingest_cmd->add_option("--max-vocab", ingest_vocab);
  ingest_cmd->add_flag("--skip-malformed", skip_malformed,
                       "Report and skip malformed lines instead of failing");
  ingest_cmd->add_option("--csv", ingest_csv, "Also write counts as CSV");

  // account
  double acc_eps = 8.0;
  std::optional<double> acc_delta, acc_sigma;
  int64_t acc_n = 0, acc_batch = 4, acc_epochs = 20;
  std::string acc_csv;
  CLI::App* account_cmd = app.add_subcommand(
      "account", "Calibrate the noise multiplier for a privacy budget");
  account_cmd->add_option("--target-eps", acc_eps);
  account_cmd->add_option("--delta", acc_delta, "Default 1/(2 N)");
  account_cmd->add_option("--dataset-size", acc_n)->required();
  account_cmd->add_option("--batch-size", acc_batch);
  account_cmd->add_option("--epochs", acc_epochs);
  account_cmd->add_option("--noise-multiplier", acc_sigma,
                          "Account a fixed noise multiplier instead");
  account_cmd->add_option("--csv", acc_csv);

  // train
  TrainFlags train_flags;
  std::string train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model");
  train_flags.Register(train_cmd, true);
  train_cmd->add_option("--out-dir", train_out, "Run directory");

  // generate
  std::string gen_run, gen_examples, gen_corpus, gen_domain, gen_split = "test",
                                                             gen_out;
  std::optional<int64_t> gen_beam, gen_max_new;
  std::optional<double> gen_penalty;
  CLI::App* gen_cmd =
      app.add_subcommand("generate", "Decode summaries with a trained model");
  gen_cmd->add_option("--run-dir", gen_run,
                      "Directory holding model.ckpt and tokenizer.json")
      ->required();
  gen_cmd->add_option("--examples", gen_examples, "Examples JSONL");
  gen_cmd->add_option("--corpus", gen_corpus, "Corpus JSONL (with --domain)");
  gen_cmd->add_option("--domain", gen_domain);
  gen_cmd->add_option("--split", gen_split, "train, valid or test");
  gen_cmd->add_option("--out", gen_out, "Predictions JSONL ('-' = stdout)")
      ->required();
  gen_cmd->add_option("--beam", gen_beam);
  gen_cmd->add_option("--max-new-tokens", gen_max_new);
  gen_cmd->add_option("--length-penalty", gen_penalty);

  // evaluate
  std::string eval_gold, eval_pred, eval_train = "product", eval_csv;
  CLI::App* eval_cmd =
      app.add_subcommand("evaluate", "Score predictions against gold summaries");
  eval_cmd->add_option("--gold", eval_gold, "Examples JSONL")->required();
  eval_cmd->add_option("--pred", eval_pred, "Predictions JSONL")->required();
  eval_cmd->add_option("--train-domain", eval_train);
  eval_cmd->add_option("--csv", eval_csv);

  // crossdomain
  TrainFlags cross_flags;
  std::string cross_modes = "dp_ghost,nondp", cross_seeds, cross_out,
              cross_csv;
  bool reuse = false;
  CLI::App* cross_cmd = app.add_subcommand(
      "crossdomain",
      "Train on each domain, evaluate on all three, and write reports");
  cross_flags.Register(cross_cmd, false);
  cross_cmd->add_option("--modes", cross_modes, "Comma-separated modes");
  cross_cmd->add_option("--seeds", cross_seeds,
                        "Comma-separated seeds (default: the config seed)");
  cross_cmd->add_option("--out-dir", cross_out)->required();
  cross_cmd->add_flag("--reuse-checkpoints", reuse,
                      "Score existing checkpoints instead of training");
  cross_cmd->add_option("--csv", cross_csv, "Also write length stats as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (synth_cmd->parsed()) {
    synth.Validate();
    WriteFileAtomic(synth_out, SynthCorpusJsonl(synth));
    std::cout << fmt::format("wrote {} meetings per domain to {}\n",
                             synth.meetings_per_domain, synth_out);
  } else if (ingest_cmd->parsed()) {
    LoadOptions lo;
    lo.skip_malformed = skip_malformed;
    LoadResult loaded = LoadCorpus(ingest_corpus, lo);
    for (const std::string& d : loaded.diagnostics) {
      std::cerr << "skipped: " << d << "\n";
    }
    std::vector<Example> all_train;
    Table t;
    t.header = {"domain", "meetings", "train", "valid", "test"};
    std::map<Domain, CorpusSplit> splits;
    for (Domain dom : kAllDomains) {
      CorpusSplit s = SplitCorpus(loaded.records, dom);
      int64_t meetings = 0;
      for (const MeetingRecord& r : loaded.records) meetings += r.domain == dom;
      t.AddRow({std::string(DomainName(dom)), std::to_string(meetings),
                std::to_string(s.train.size()), std::to_string(s.valid.size()),
                std::to_string(s.test.size())});
      all_train.insert(all_train.end(), s.train.begin(), s.train.end());
      splits.emplace(dom, std::move(s));
    }
    const Tokenizer tok = Tokenizer::Build(all_train, ingest_vocab);
    if (!ingest_out.empty()) {
      fs::create_directories(ingest_out);
      for (const auto& [dom, s] : splits) {
        for (Split sp : {Split::kTrain, Split::kValid, Split::kTest}) {
          WriteFileAtomic(
              (fs::path(ingest_out) /
               fmt::format("{}_{}.jsonl", DomainName(dom), SplitName(sp)))
                  .string(),
              ExamplesToJsonl(s.Get(sp)));
        }
      }
      WriteFileAtomic((fs::path(ingest_out) / kTokenizerFile).string(),
                      tok.ToJson());
    }
    EmitTable(t, ingest_csv);
    if (ingest_csv != "-") {
      std::cout << fmt::format("vocabulary: {} tokens (hash {})\n", tok.size(),
                               tok.Hash());
    }
  } else if (account_cmd->parsed()) {
    if (acc_n < 1 || acc_batch < 1 || acc_epochs < 1) {
      throw ConfigError(
          "--dataset-size, --batch-size and --epochs must be >= 1");
    }
    if (!(acc_eps > 0.0)) throw ConfigError("--target-eps must be positive");
    if (acc_delta && !(*acc_delta > 0.0 && *acc_delta < 1.0)) {
      throw ConfigError("--delta must lie in (0, 1)");
    }
    EmitTable(PlanPrivacy(acc_eps, acc_delta, acc_n, acc_batch, acc_epochs,
                          acc_sigma)
                  .ToTable(),
              acc_csv);
  } else if (train_cmd->parsed()) {
    RunConfig c = train_flags.Resolve();
    if (!train_out.empty()) c.output_dir = train_out;
    const auto manifest = TrainRun(c, nullptr, &std::cerr);
    std::cout << fmt::format("wrote {}\n",
                             (fs::path(c.output_dir) / kManifestFile).string());
    if (!manifest["privacy"].is_null()) {
      std::cout << fmt::format("epsilon {:.6f} at delta {:.6g}\n",
                               manifest["privacy"]["epsilon"].get<double>(),
                               manifest["privacy"]["delta"].get<double>());
    }
  } else if (gen_cmd->parsed()) {
    if (gen_examples.empty() == (gen_corpus.empty() || gen_domain.empty())) {
      throw ConfigError(
          "give either --examples or both --corpus and --domain");
    }
    const Tokenizer tok = Tokenizer::FromJson(
        ReadFile((fs::path(gen_run) / kTokenizerFile).string()));
    const Checkpoint ck =
        LoadCheckpointFor((fs::path(gen_run) / kCheckpointFile).string(), tok);
    BeamOptions opts = RunConfig{}.decoding;
    const fs::path manifest_path = fs::path(gen_run) / kManifestFile;
    if (fs::exists(manifest_path)) {
      RunConfig saved;
      saved.decoding = opts;
      const auto m = nlohmann::json::parse(ReadFile(manifest_path.string()));
      if (m.contains("config") && m["config"].contains("decoding")) {
        saved.MergeJson({{"decoding", m["config"]["decoding"]}});
      }
      opts = saved.decoding;
    }
    if (gen_beam) opts.beam_width = *gen_beam;
    if (gen_max_new) opts.max_new_tokens = *gen_max_new;
    if (gen_penalty) opts.length_penalty = *gen_penalty;
    std::vector<Example> prompts;
    if (!gen_examples.empty()) {
      prompts = ParseExamplesJsonl(ReadFile(gen_examples), gen_examples);
    } else {
      const auto records = LoadCorpus(gen_corpus).records;
      prompts = SplitCorpus(records, ParseDomain(gen_domain))
                    .Get(ParseSplit(gen_split));
    }
    const std::string jsonl =
        PredictionsToJsonl(Generate(ck, tok, prompts, opts));
    if (gen_out == "-") {
      std::cout << jsonl;
    } else {
      WriteFileAtomic(gen_out, jsonl);
      std::cout << fmt::format("wrote {} predictions to {}\n", prompts.size(),
                               gen_out);
    }
  } else if (eval_cmd->parsed()) {
    const auto gold = ParseExamplesJsonl(ReadFile(eval_gold), eval_gold);
    const auto preds = ParsePredictionsJsonl(ReadFile(eval_pred), eval_pred);
    EmitTable(Evaluate(gold, preds, ParseDomain(eval_train)).ToTable(),
              eval_csv);
  } else if (cross_cmd->parsed()) {
    CrossDomainOptions o;
    o.base = cross_flags.Resolve();
    for (const std::string& m : SplitList(cross_modes)) {
      o.modes.push_back(ParseTrainMode(m));
    }
    if (cross_seeds.empty()) {
      o.seeds = {o.base.seed};
    } else {
      for (const std::string& s : SplitList(cross_seeds)) {
        o.seeds.push_back(ParseSeed(s));
      }
    }
    o.out_dir = cross_out;
    o.reuse_checkpoints = reuse;
    const CrossDomainResult r = RunCrossDomain(o, &std::cerr);
    for (const auto& [mode, report] : r.test) {
      std::cout << fmt::format("== {} (test ROUGE, mean over {} seed(s))\n",
                               TrainModeName(mode), o.seeds.size())
                << report.ToMarkdown() << "\n";
    }
    std::cout << "== prediction lengths (words)\n";
    EmitTable(r.lengths, cross_csv);
  }
  return 0;
}

}  // namespace
}  // namespace dpsum

int main(int argc, char** argv) {
  try {
    return dpsum::Run(argc, argv);
  } catch (const dpsum::ConfigError& e) {
    std::cerr << "dpsum: configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dpsum: error: " << e.what() << "\n";
    return 3;
  }
}
