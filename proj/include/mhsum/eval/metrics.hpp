#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Summarization metrics. Scores are fractions in [0, 1] unless a field says
// otherwise; reports scale to percentages.
namespace mhsum::eval {

using Words = std::vector<std::string>;

/// Lowercased whitespace tokens.
Words normalize_words(std::string_view text);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped n-gram overlap, n in {1, 2}. F1 is 0 when either side has no
/// n-grams.
Prf rouge_n_prf(std::span<const std::string> hyp, std::span<const std::string> ref, int n);
double rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
Prf rouge_l_prf(std::span<const std::string> hyp, std::span<const std::string> ref);
double rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref);

struct RougeScores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;

  double mean() const { return (rouge1 + rouge2 + rougeL) / 3.0; }
};

RougeScores rouge_all(std::span<const std::string> hyp, std::span<const std::string> ref);

/// A document and its reference summary, both as sentence lists.
struct SummaryPair {
  std::vector<std::string> source;
  std::vector<std::string> summary;
};

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t skipped = 0;
  double mean_source_sentences = 0.0;
  double mean_source_words = 0.0;
  double mean_summary_sentences = 0.0;
  double mean_summary_words = 0.0;
  /// Mean per-document summary/source length ratios, percent.
  double compression_sentence = 0.0;
  double compression_word = 0.0;
  /// Mean percentage of summary word tokens whose type occurs in the source.
  double word_overlap = 0.0;
};

/// Documents with an empty source are skipped and counted in `skipped`.
CorpusStats corpus_stats(std::span<const SummaryPair> corpus);

enum class OracleMode { kAuto, kExhaustive, kGreedy };

/// Objective maximized by the oracle.
enum class OracleObjective { kMeanRouge, kRouge1, kRouge2, kRougeL };

struct OracleResult {
  std::vector<std::size_t> indices;  // ascending
  RougeScores scores;
  double objective = 0.0;
};

inline constexpr std::size_t kExhaustiveOracleLimit = 12;

double oracle_objective(const RougeScores& s, OracleObjective objective);

/// Sentence subset of size 1..max_k, concatenated in document order, that
/// maximizes the objective against `reference`. Exhaustive search breaks ties
/// toward the lexicographically smallest index list; greedy adds the best
/// sentence (lowest index on ties) while the objective strictly improves.
/// kAuto is exhaustive up to kExhaustiveOracleLimit sentences.
OracleResult oracle_extractive(std::span<const std::string> sentences, std::span<const std::string> reference,
                               std::size_t max_k, OracleMode mode = OracleMode::kAuto,
                               OracleObjective objective = OracleObjective::kMeanRouge);

/// Named values in display order.
struct MetricReport {
  std::vector<std::pair<std::string, double>> values;

  void add(std::string name, double value) { values.emplace_back(std::move(name), value); }
  std::optional<double> get(std::string_view name) const;

  /// "metric,value" header then one row per value.
  std::string to_csv() const;
  std::string to_table() const;
};

/// Right-aligned plain-text table; every row must match the header width.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

/// Fixed-point formatting used by reports.
std::string format_number(double value, int decimals = 2);

}  // namespace mhsum::eval
