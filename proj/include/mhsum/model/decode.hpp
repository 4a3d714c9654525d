#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mhsum/model/model.hpp"

namespace mhsum::model {

/// Bigram language model as a dense table of log-probabilities; row `prev`
/// is a normalized distribution over the next token.
class LMTable {
 public:
  LMTable(std::size_t vocab_size, std::vector<double> log_probs);

  static LMTable uniform(std::size_t vocab_size);
  /// Add-k estimate from token sequences, each bracketed by BOS and EOS.
  static LMTable estimate(std::span<const std::vector<int>> sequences, std::size_t vocab_size, double add_k = 0.1);

  std::size_t vocab_size() const { return vocab_; }
  double log_prob(int prev, int next) const;

  /// Stored as a single V x V tensor named "lm.logp" in checkpoint format.
  void save(const std::filesystem::path& path) const;
  static LMTable load(const std::filesystem::path& path);

 private:
  std::size_t vocab_;
  std::vector<double> logp_;
};

struct DecodeOptions {
  std::size_t beam = 4;
  /// Weight of the LM term; 0 disables shallow fusion.
  double lm_weight = 0.0;
  const LMTable* lm = nullptr;
};

struct Decoded {
  std::vector<int> tokens;  // without BOS and EOS
  double score = 0.0;
  /// Sum of model log-probabilities of the emitted tokens and EOS.
  double model_score = 0.0;
};

/// Beam search maximizing sum(log p_model + lm_weight * log p_lm) over the
/// emitted tokens including EOS. Reserved ids other than EOS are never
/// emitted; at the length cap only EOS is allowed. Ties prefer the earlier
/// beam, then the lower token id.
Decoded decode_summary(const Model& model, const Memory& memory, const DecodeOptions& options);
/// Argmax decoding under the model alone.
Decoded greedy_decode(const Model& model, const Memory& memory);

/// Encodes then beam-decodes one document.
Decoded summarize(const Model& model, const asr::HypothesisSet& hyps, const DecodeOptions& options);

}  // namespace mhsum::model
