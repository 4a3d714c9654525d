#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mhsum/num/checkpoint.hpp"
#include "mhsum/num/tensor.hpp"

// Multi-hypothesis fusion layers.
//
// Shapes: M = 1-best length, M_n = length of hypothesis n, B = embedding
// width, B' = per-head projection width, H = heads, N = hypotheses.
namespace mhsum::fusion {

enum class Similarity { kCosine, kDot };
enum class InitMode { kIdentity, kRandom };

struct HeadProjections {
  num::Tensor query;  // B x B'
  num::Tensor key;    // B x B'
  num::Tensor value;  // B x B'
};

struct FusionParams {
  std::vector<HeadProjections> heads;
  num::Tensor output;  // (H*B') x B
  Similarity similarity = Similarity::kCosine;
  /// Divide similarities by sqrt(B'). Off by default; ablation only.
  bool scaled = false;
  InitMode init_mode = InitMode::kIdentity;

  std::size_t num_heads() const { return heads.size(); }
  std::size_t model_dim() const { return output.cols(); }
  std::size_t head_dim() const { return heads.front().query.cols(); }

  std::vector<num::Tensor> parameters() const;
  /// Records named "fuse.h{h}.Wq|Wk|Wv" and "fuse.Wo".
  std::vector<num::NamedTensor> named() const;
  /// Copies values from records carrying the names above.
  void assign(const std::vector<num::NamedTensor>& records);
};

/// Identity mode sets every per-head projection to I (requires B' == B) and
/// the output matrix to H stacked identities scaled by 1/H, so the initial
/// output is the mean over heads. Random mode draws Xavier-uniform values.
FusionParams init_fusion_params(std::size_t heads, std::size_t dim, InitMode mode, std::uint64_t seed = 0,
                                std::size_t head_dim = 0);

/// Linear map from a scalar confidence to R^B.
struct ConfidenceEmbed {
  num::Tensor weight;  // 1 x B
  num::Tensor bias;    // 1 x B

  static ConfidenceEmbed zeros(std::size_t dim);
};

/// Row m: e_m + p_m * weight + bias.
num::Tensor confidence_embed(const num::Tensor& e1, std::span<const double> posteriors, const ConfidenceEmbed& ce);

/// Sum over hypotheses of posterior-weighted embeddings, position by position.
/// `posteriors` is N x M. With `renormalize`, weights at each position are
/// divided by their sum.
num::Tensor posterior_fuse(std::span<const num::Tensor> embeds, const num::Tensor& posteriors,
                           bool renormalize = false);

struct Alignment {
  num::Tensor aligned;  // M x B'
  num::Tensor weights;  // M x M_n, rows sum to 1
};

/// Time-aligns hypothesis `en` to the 1-best `e1` through head `head`:
/// softmax(sim(e1 Wq, en Wk)) en Wv.
Alignment align_hypothesis(const num::Tensor& e1, const num::Tensor& en, const FusionParams& params,
                           std::size_t head);

struct HeadFusion {
  num::Tensor fused;    // M x B'
  num::Tensor weights;  // M x N, alpha per position
  std::vector<num::Tensor> aligned;
};

/// Single-head fusion: aligns every hypothesis (the 1-best included) and
/// attends across them at each position with the projected 1-best as query.
HeadFusion fuse_head(std::span<const num::Tensor> hyps, const FusionParams& params, std::size_t head);

struct AttentionFusion {
  num::Tensor fused;                      // M x B
  std::vector<num::Tensor> head_weights;  // H tensors of M x N

  /// alpha for position m as H x N values, row-major.
  std::vector<double> position_weights(std::size_t m) const;
};

/// Multi-head attention fusion. hyps.front() is the 1-best and also the query.
AttentionFusion attention_fuse(std::span<const num::Tensor> hyps, const FusionParams& params);

}  // namespace mhsum::fusion
