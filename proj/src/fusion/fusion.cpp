#include "mhsum/fusion/fusion.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "mhsum/num/ops.hpp"

namespace mhsum::fusion {

using num::Tensor;

namespace {

Tensor xavier(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> d(rows * cols);
  for (auto& v : d) v = u(rng);
  return Tensor::matrix(rows, cols, std::move(d), true);
}

Tensor similarity(const Tensor& q, const Tensor& k, const FusionParams& p) {
  Tensor s = p.similarity == Similarity::kCosine ? num::cosine_rows(q, k) : num::matmul_nt(q, k);
  if (p.scaled) s = num::scale(s, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  return s;
}

Tensor pair_similarity(const Tensor& q, const Tensor& k, const FusionParams& p) {
  Tensor s = p.similarity == Similarity::kCosine ? num::cosine_pairs(q, k) : num::dot_pairs(q, k);
  if (p.scaled) s = num::scale(s, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  return s;
}

void check_head(const FusionParams& p, std::size_t head) {
  if (head >= p.num_heads()) {
    throw std::out_of_range("fusion: head " + std::to_string(head) + " of " + std::to_string(p.num_heads()));
  }
}

void check_hyps(std::span<const Tensor> hyps, const FusionParams& p) {
  if (hyps.empty()) throw std::invalid_argument("attention_fuse: empty hypothesis list");
  for (const auto& h : hyps) {
    if (h.ndim() != 2 || h.rows() == 0 || h.cols() != p.model_dim()) {
      throw num::DimensionError("attention_fuse: hypothesis shape " + num::shape_str(h.shape()) +
                                " incompatible with model width " + std::to_string(p.model_dim()));
    }
  }
}

}  // namespace

std::vector<Tensor> FusionParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& h : heads) {
    out.push_back(h.query);
    out.push_back(h.key);
    out.push_back(h.value);
  }
  out.push_back(output);
  return out;
}

std::vector<num::NamedTensor> FusionParams::named() const {
  std::vector<num::NamedTensor> out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string p = "fuse.h" + std::to_string(h) + ".";
    out.emplace_back(p + "Wq", heads[h].query);
    out.emplace_back(p + "Wk", heads[h].key);
    out.emplace_back(p + "Wv", heads[h].value);
  }
  out.emplace_back("fuse.Wo", output);
  return out;
}

void FusionParams::assign(const std::vector<num::NamedTensor>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name[name] = &t;
  for (auto& [name, t] : named()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("fusion params: missing record " + name);
    if (it->second->shape() != t.shape()) {
      throw num::DimensionError("fusion params: record " + name + " has shape " +
                                num::shape_str(it->second->shape()) + ", expected " + num::shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

FusionParams init_fusion_params(std::size_t heads, std::size_t dim, InitMode mode, std::uint64_t seed,
                                std::size_t head_dim) {
  if (heads == 0) throw std::invalid_argument("init_fusion_params: at least one head is required");
  if (dim == 0) throw std::invalid_argument("init_fusion_params: zero width");
  if (head_dim == 0) head_dim = dim;
  FusionParams p;
  p.init_mode = mode;
  if (mode == InitMode::kIdentity) {
    if (head_dim != dim) {
      throw std::invalid_argument("init_fusion_params: identity init needs B' == B (got B'=" +
                                  std::to_string(head_dim) + ", B=" + std::to_string(dim) + ")");
    }
    for (std::size_t h = 0; h < heads; ++h) {
      HeadProjections hp{Tensor::identity(dim), Tensor::identity(dim), Tensor::identity(dim)};
      for (auto* t : {&hp.query, &hp.key, &hp.value}) t->set_requires_grad(true);
      p.heads.push_back(std::move(hp));
    }
    std::vector<double> wo(heads * dim * dim, 0.0);
    const double w = 1.0 / static_cast<double>(heads);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < dim; ++i) wo[(h * dim + i) * dim + i] = w;
    p.output = Tensor::matrix(heads * dim, dim, std::move(wo), true);
  } else {
    std::mt19937_64 rng(seed);
    for (std::size_t h = 0; h < heads; ++h) {
      HeadProjections hp;
      hp.query = xavier(rng, dim, head_dim);
      hp.key = xavier(rng, dim, head_dim);
      hp.value = xavier(rng, dim, head_dim);
      p.heads.push_back(std::move(hp));
    }
    p.output = xavier(rng, heads * head_dim, dim);
  }
  return p;
}

ConfidenceEmbed ConfidenceEmbed::zeros(std::size_t dim) {
  return {Tensor::zeros({1, dim}, true), Tensor::zeros({1, dim}, true)};
}

Tensor confidence_embed(const Tensor& e1, std::span<const double> posteriors, const ConfidenceEmbed& ce) {
  if (e1.ndim() != 2 || e1.rows() != posteriors.size()) {
    throw num::DimensionError("confidence_embed: " + std::to_string(posteriors.size()) +
                              " posteriors for embeddings " + num::shape_str(e1.shape()));
  }
  for (double p : posteriors)
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("confidence_embed: posterior outside (0, 1]");
  const Tensor p = Tensor::matrix(posteriors.size(), 1, {posteriors.begin(), posteriors.end()});
  const Tensor c = num::add_bias(num::matmul(p, ce.weight), ce.bias);
  return num::add(e1, c);
}

Tensor posterior_fuse(std::span<const Tensor> embeds, const Tensor& posteriors, bool renormalize) {
  if (embeds.empty()) throw std::invalid_argument("posterior_fuse: no hypotheses");
  const auto m = embeds.front().rows();
  for (const auto& e : embeds) {
    if (e.ndim() != 2 || e.rows() != m || e.cols() != embeds.front().cols()) {
      throw num::DimensionError("posterior_fuse: hypotheses are not aligned (" +
                                num::shape_str(embeds.front().shape()) + " vs " + num::shape_str(e.shape()) + ")");
    }
  }
  if (posteriors.ndim() != 2 || posteriors.rows() != embeds.size() || posteriors.cols() != m) {
    throw num::DimensionError("posterior_fuse: posteriors " + num::shape_str(posteriors.shape()) + " for " +
                              std::to_string(embeds.size()) + " hypotheses of length " + std::to_string(m));
  }
  for (double p : posteriors.data())
    if (!(p > 0.0)) throw std::invalid_argument("posterior_fuse: posteriors must be positive");

  Tensor weights = posteriors;
  if (renormalize) {
    std::vector<double> col(m, 0.0);
    for (std::size_t n = 0; n < embeds.size(); ++n)
      for (std::size_t i = 0; i < m; ++i) col[i] += posteriors(n, i);
    std::vector<double> inv(m);
    for (std::size_t i = 0; i < m; ++i) inv[i] = 1.0 / col[i];
    std::vector<double> scaled(posteriors.data().begin(), posteriors.data().end());
    for (std::size_t n = 0; n < embeds.size(); ++n)
      for (std::size_t i = 0; i < m; ++i) scaled[n * m + i] *= inv[i];
    weights = Tensor::matrix(embeds.size(), m, std::move(scaled));
  }
  Tensor out = num::scale_rows(embeds[0], num::slice_rows(weights, 0, 1));
  for (std::size_t n = 1; n < embeds.size(); ++n)
    out = num::add(out, num::scale_rows(embeds[n], num::slice_rows(weights, n, n + 1)));
  return out;
}

Alignment align_hypothesis(const Tensor& e1, const Tensor& en, const FusionParams& params, std::size_t head) {
  check_head(params, head);
  const auto& hp = params.heads[head];
  const Tensor q = num::matmul(e1, hp.query);
  const Tensor k = num::matmul(en, hp.key);
  const Tensor v = num::matmul(en, hp.value);
  const Tensor w = num::softmax(similarity(q, k, params), 1);
  return {num::matmul(w, v), w};
}

HeadFusion fuse_head(std::span<const Tensor> hyps, const FusionParams& params, std::size_t head) {
  check_head(params, head);
  check_hyps(hyps, params);
  const auto& hp = params.heads[head];
  const Tensor& e1 = hyps.front();
  const Tensor q = num::matmul(e1, hp.query);

  HeadFusion out;
  std::vector<Tensor> sims;
  for (const auto& en : hyps) {
    const Tensor k = num::matmul(en, hp.key);
    const Tensor v = num::matmul(en, hp.value);
    const Tensor w = num::softmax(similarity(q, k, params), 1);
    out.aligned.push_back(num::matmul(w, v));
    sims.push_back(pair_similarity(q, out.aligned.back(), params));
  }
  out.weights = num::softmax(num::concat(sims, 1), 1);
  out.fused = num::scale_rows(out.aligned[0], num::slice_cols(out.weights, 0, 1));
  for (std::size_t n = 1; n < hyps.size(); ++n)
    out.fused = num::add(out.fused, num::scale_rows(out.aligned[n], num::slice_cols(out.weights, n, n + 1)));
  return out;
}

AttentionFusion attention_fuse(std::span<const Tensor> hyps, const FusionParams& params) {
  check_hyps(hyps, params);
  AttentionFusion out;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < params.num_heads(); ++h) {
    auto hf = fuse_head(hyps, params, h);
    heads.push_back(std::move(hf.fused));
    out.head_weights.push_back(std::move(hf.weights));
  }
  out.fused = num::matmul(num::concat(heads, 1), params.output);
  return out;
}

std::vector<double> AttentionFusion::position_weights(std::size_t m) const {
  std::vector<double> out;
  for (const auto& w : head_weights)
    for (std::size_t n = 0; n < w.cols(); ++n) out.push_back(w(m, n));
  return out;
}

}  // namespace mhsum::fusion
