#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhsum/asr/channel.hpp"
#include "mhsum/eval/metrics.hpp"
#include "mhsum/model/decode.hpp"
#include "mhsum/model/model.hpp"
#include "mhsum/model/train.hpp"
#include "mhsum/pipeline/corpus.hpp"
#include "mhsum/text/vocab.hpp"
#include "mhsum/util/kvfile.hpp"

namespace mhsum::pipeline {

/// The systems ladder. oracle-text trains and tests on clean text;
/// baseline-1best reuses that model on ASR 1-best input; the rest are trained
/// on simulated ASR output.
enum class System { kOracleText, kBaseline1Best, kRetrain1Best, kConfidence, kPosteriorFusion, kAttentionFusion };

const std::vector<System>& all_systems();
std::string system_name(System s);
System parse_system(std::string_view name);
model::FusionMode system_mode(System s);
/// Systems with their own checkpoint (everything but baseline-1best).
bool system_trains(System s);

struct TrainingConfig {
  std::size_t steps = 3000;
  /// Steps for ASR-input systems when they start from the oracle-text model.
  std::size_t finetune_steps = 1000;
  bool finetune_from_oracle = true;
  std::size_t batch = 32;
  model::OptimizerConfig optimizer{.peak_lr = 3e-3, .warmup = 300};
  std::size_t log_every = 250;
};

struct DecodeConfig {
  std::size_t beam = 4;
  double lm_weight = 0.0;
  double lm_add_k = 0.1;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  /// sub_rate is the training and headline test rate.
  asr::ChannelSpec channel{.sub_rate = 0.2};
  std::vector<double> sweep_rates{0.05, 0.10, 0.20};
  /// Two encoder layers with fusion at the second: the six-layer stack does
  /// not fit the single-core budget.
  model::ModelConfig model{.enc_layers = 2, .fusion_layer = 2};
  std::size_t attention_hyps = 5;
  std::size_t posterior_hyps = 10;
  /// Target BPE vocabulary size; 0 merges until every word is one symbol.
  std::size_t bpe_size = 0;
  TrainingConfig training;
  DecodeConfig decode;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<System> systems = all_systems();

  void validate() const;
  util::KeyValues to_kv() const;
  static ExperimentConfig from_kv(const util::KeyValues& kv);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Model configuration for a system given the vocabulary size.
  model::ModelConfig model_for(System s, std::size_t vocab_size) const;
  /// Hypotheses a system reads per document.
  std::size_t hyps_for(System s) const;
};

struct TokenizedDoc {
  std::string doc_id;
  text::TokenSeq source;
  std::vector<int> summary;
  eval::Words reference;  // normalized summary words
};

/// BPE over the source sentences of the training documents.
text::Vocab build_vocab(std::span<const DocumentPair> train, std::size_t bpe_size);
std::vector<TokenizedDoc> tokenize(std::span<const DocumentPair> docs, const text::Vocab& vocab);

/// Aligned N-best for every document; each document's channel seed is
/// derived from spec.seed and its id.
std::vector<asr::HypothesisSet> simulate_asr(std::span<const TokenizedDoc> docs, const text::Vocab& vocab,
                                             const asr::ChannelSpec& spec, std::size_t n);
std::vector<asr::HypothesisSet> clean_inputs(std::span<const TokenizedDoc> docs);
/// Word-level WER of the 1-best against the clean source, pooled over documents.
double corpus_wer(std::span<const TokenizedDoc> docs, std::span<const asr::HypothesisSet> hyps,
                  const text::Vocab& vocab);

/// Copies every parameter whose name and shape match; returns the count.
std::size_t copy_matching_parameters(const model::Model& from, model::Model& to);

/// Mini-batch training with a per-epoch shuffle drawn from `seed`. Progress
/// goes to `log` when given.
std::vector<double> train_model(model::Model& m, std::span<const model::Example> examples, const TrainingConfig& cfg,
                                std::size_t steps, std::uint64_t seed, std::ostream* log = nullptr,
                                const std::string& tag = {});

struct EvalOutput {
  std::vector<std::string> summaries;
  eval::RougeScores mean;
};

EvalOutput evaluate_model(const model::Model& m, std::span<const asr::HypothesisSet> inputs,
                          std::span<const TokenizedDoc> docs, const text::Vocab& vocab, const DecodeConfig& decode,
                          const model::LMTable* lm);

struct ResultRow {
  System system = System::kOracleText;
  std::uint64_t seed = 0;
  double rate = 0.0;
  double wer = 0.0;
  std::size_t hyps = 1;
  eval::RougeScores rouge;
  bool ok = true;
  std::string error;
};

std::string results_csv(std::span<const ResultRow> rows);
/// Seed-averaged ROUGE per system, aligned text.
std::string results_table(std::span<const ResultRow> rows);
/// Seed-averaged ROUGE-1 per system (failed rows excluded).
std::optional<double> mean_rouge1(std::span<const ResultRow> rows, System s);

/// Layout under the output directory, per seed.
std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed);
std::filesystem::path model_dir(const std::filesystem::path& out, std::uint64_t seed, System s);

/// Prepares data for one seed under seed_dir: corpus files, vocabulary,
/// hypotheses at the training rate and the summary LM.
struct SeedData {
  Corpus corpus;
  text::Vocab vocab;
  std::vector<TokenizedDoc> train;
  std::vector<TokenizedDoc> test;
  std::vector<asr::HypothesisSet> train_hyps;
  std::vector<asr::HypothesisSet> test_hyps;
  model::LMTable lm;
};
SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out);

/// Trains every configured system, evaluates on the test split at the
/// training rate, and writes results.csv, results.txt, per-system summaries
/// and checkpoints under `out`. A system whose training fails is reported
/// as failed and the others continue.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                      std::ostream& log);

struct SweepRow {
  double rate = 0.0;
  double wer = 0.0;
  System system = System::kRetrain1Best;
  double rouge1_delta = 0.0;
};

/// Re-corrupts the test split at every sweep rate and scores each trained
/// corrupted-input system against retrain-1best. Reads checkpoints written
/// by run_experiment; values are averaged over seeds. Writes sweep.csv.
std::vector<SweepRow> wer_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
std::string sweep_csv(std::span<const SweepRow> rows);

/// Channel seed for a (run seed, rate) pair.
std::uint64_t channel_seed(std::uint64_t seed, double rate);

}  // namespace mhsum::pipeline
