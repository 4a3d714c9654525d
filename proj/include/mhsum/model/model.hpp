#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mhsum/asr/channel.hpp"
#include "mhsum/fusion/fusion.hpp"
#include "mhsum/num/checkpoint.hpp"
#include "mhsum/num/tensor.hpp"
#include "mhsum/util/kvfile.hpp"

namespace mhsum::model {

enum class FusionMode { kNone, kConfidence, kPosterior, kAttention };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t enc_layers = 6;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  /// Longest accepted source document, in tokens.
  std::size_t max_len = 512;
  /// Longest generated summary, in tokens (EOS excluded).
  std::size_t max_summary_len = 64;
  FusionMode fusion_mode = FusionMode::kNone;
  /// 1-based encoder layer whose input is replaced by the fused stream.
  std::size_t fusion_layer = 5;
  /// Hypotheses consumed by the posterior and attention modes.
  std::size_t num_hyps = 5;
  std::size_t fusion_heads = 4;
  fusion::Similarity fusion_similarity = fusion::Similarity::kCosine;
  fusion::InitMode fusion_init = fusion::InitMode::kIdentity;
  bool posterior_renormalize = false;

  void validate() const;
  /// Hypotheses the encoder reads for this mode.
  std::size_t hyps_used() const;

  util::KeyValues to_kv() const;
  /// Keys prefixed "model." in `kv` override the values in `base`.
  static ModelConfig from_kv(const util::KeyValues& kv, ModelConfig base);
  static ModelConfig from_kv(const util::KeyValues& kv);
};

struct Linear {
  num::Tensor weight;  // in x out
  num::Tensor bias;    // 1 x out
};

struct LayerNormParams {
  num::Tensor gain;
  num::Tensor bias;
};

struct AttentionParams {
  Linear query, key, value, out;
};

struct EncoderLayer {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  Linear ffn_in, ffn_out;
};

struct DecoderLayer {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  LayerNormParams ln_cross;
  AttentionParams cross_attn;
  LayerNormParams ln_ffn;
  Linear ffn_in, ffn_out;
};

/// Encoder intermediates exposed for inspection.
struct EncodeTrace {
  /// 1-best stream entering the fusion layer (pre-fusion).
  num::Tensor fusion_input;
  /// Stream entering the fusion layer after fusion.
  num::Tensor fused;
  /// Per-head alpha from attention fusion (M x N each).
  std::vector<num::Tensor> fusion_weights;
};

/// Cached cross-attention keys and values for one encoded document.
struct Memory {
  num::Tensor states;  // M x B
  std::vector<num::Tensor> keys;
  std::vector<num::Tensor> values;
};

/// Pre-LN transformer encoder-decoder with learned positions, tied input and
/// output token embeddings, and an optional hypothesis-fusion stage in the
/// encoder.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  /// Encoder states, one row per 1-best token.
  num::Tensor encode(const asr::HypothesisSet& hyps, EncodeTrace* trace = nullptr) const;

  Memory prepare_memory(const num::Tensor& states) const;
  /// Next-token logits for every prefix position: T x V.
  num::Tensor decoder_logits(const Memory& memory, std::span<const int> prefix) const;

  /// Teacher-forced mean cross-entropy of `summary` (no BOS/EOS) given the
  /// document.
  num::Tensor loss(const asr::HypothesisSet& hyps, std::span<const int> summary) const;

  std::vector<num::Tensor> parameters() const;
  std::vector<num::NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

  // Exposed for tests and initialization experiments.
  num::Tensor token_embedding;  // V x B
  num::Tensor enc_positions;    // max_len x B
  num::Tensor dec_positions;    // (max_summary_len + 1) x B
  std::vector<EncoderLayer> encoder;
  LayerNormParams enc_final;
  std::vector<DecoderLayer> decoder;
  LayerNormParams dec_final;
  num::Tensor output_bias;  // 1 x V
  fusion::ConfidenceEmbed confidence;
  fusion::FusionParams fusion;

 private:
  /// Token embeddings scaled by sqrt(dim); the output layer uses them unscaled.
  num::Tensor token_embed(std::span<const int> ids) const;
  num::Tensor embed(std::span<const int> ids) const;
  num::Tensor run_encoder_layers(num::Tensor x, std::size_t begin, std::size_t end) const;

  ModelConfig cfg_;
};

/// Decoder input for a summary: BOS followed by the summary tokens.
std::vector<int> decoder_input(std::span<const int> summary);
/// Decoder targets: the summary tokens followed by EOS.
std::vector<int> decoder_targets(std::span<const int> summary);

}  // namespace mhsum::model
