#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mhsum/text/vocab.hpp"

namespace mhsum::asr {

/// Number of candidates carried by every posterior row: the emitted token
/// plus nine confusers.
inline constexpr std::size_t kPosteriorCandidates = 10;

/// Parameters of the simulated recognizer.
///
/// Each content token is substituted with probability `sub_rate` by a
/// different token of the same word-boundary class. Its posterior row puts
/// mass exp(-c*k)/Z on the candidate of rank k = 0..9 (rank 0 is the emitted
/// token), where c = confusion_sharpness on correct positions and
/// c = confusion_sharpness * error_sharpness_ratio on substituted ones, so
/// errors come out less confident. On substituted positions the reference
/// token sits at confuser rank k with probability proportional to
/// ref_rank_decay^(k-1).
struct ChannelSpec {
  double sub_rate = 0.1;
  double confusion_sharpness = 2.0;
  std::uint64_t seed = 0;
  double error_sharpness_ratio = 0.5;
  double ref_rank_decay = 0.5;
  /// Insertion and deletion probability per token; only used when drawing
  /// unaligned hypotheses.
  double indel_rate = 0.0;

  void validate() const;
};

/// Dense per-position distribution over the vocabulary.
struct PosteriorMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<bool> structural;

  std::span<const double> row(std::size_t m) const { return {values.data() + m * cols, cols}; }
  double at(std::size_t m, std::size_t v) const { return values[m * cols + v]; }
};

struct ChannelOutput {
  PosteriorMatrix posteriors;
  text::TokenSeq emitted;
  std::size_t substitutions = 0;
};

/// N hypotheses with per-token posteriors for one document. Rows produced by
/// the aligned generator all share one length.
struct HypothesisSet {
  std::string doc_id;
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<double>> posteriors;

  std::size_t n() const { return tokens.size(); }
  bool aligned() const;
  const std::vector<int>& one_best() const { return tokens.front(); }
};

ChannelOutput channel_corrupt(const text::TokenSeq& ref, const text::Vocab& vocab, const ChannelSpec& spec);

/// Position-wise top-n selection along the 1-best path. Structural positions
/// repeat their token with posterior 1.0 in every hypothesis.
HypothesisSet generate_nbest_aligned(const ChannelOutput& channel, std::size_t n, std::string doc_id = {});

/// n independent channel draws with insertions and deletions; rows may differ
/// in length. Each token carries the posterior of its emitted candidate.
HypothesisSet generate_unaligned(const text::TokenSeq& ref, const text::Vocab& vocab, const ChannelSpec& spec,
                                 std::size_t n, std::string doc_id = {});

/// Clean text as a single hypothesis with posterior 1.
HypothesisSet reference_hypothesis(const text::TokenSeq& ref, std::string doc_id = {});

/// Word-level edit distance divided by the reference length.
double wer(std::span<const std::string> hyp, std::span<const std::string> ref);
double wer(std::span<const int> hyp, std::span<const int> ref, const text::Vocab& vocab);

struct EditCounts {
  std::size_t errors = 0;
  std::size_t ref_words = 0;
};
EditCounts word_edits(std::span<const std::string> hyp, std::span<const std::string> ref);

/// seed for one document, mixed from the global seed and the document id.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view doc_id);

// One JSON object per line: {"doc_id", "n", "tokens", "posteriors"}.
std::string hypothesis_to_json(const HypothesisSet& set);
HypothesisSet hypothesis_from_json(const std::string& line);
void write_hypotheses(const std::filesystem::path& path, std::span<const HypothesisSet> sets);
std::vector<HypothesisSet> read_hypotheses(const std::filesystem::path& path);

}  // namespace mhsum::asr
