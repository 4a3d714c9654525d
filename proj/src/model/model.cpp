#include "mhsum/model/model.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "mhsum/num/ops.hpp"
#include "mhsum/text/vocab.hpp"

namespace mhsum::model {

using num::Tensor;

namespace {

constexpr double kMaskValue = -1e9;

Tensor normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  std::vector<double> d(rows * cols);
  for (auto& v : d) v = nd(rng);
  return Tensor::matrix(rows, cols, std::move(d), true);
}

Tensor sinusoid_matrix(std::size_t rows, std::size_t dim) {
  std::vector<double> d(rows * dim);
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      d[p * dim + i] = i % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return Tensor::matrix(rows, dim, std::move(d), true);
}

Linear make_linear(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> w(in * out);
  for (auto& v : w) v = u(rng);
  return {Tensor::matrix(in, out, std::move(w), true), Tensor::zeros({1, out}, true)};
}

LayerNormParams make_layernorm(std::size_t dim) {
  return {Tensor::matrix(1, dim, std::vector<double>(dim, 1.0), true), Tensor::zeros({1, dim}, true)};
}

AttentionParams make_attention(std::mt19937_64& rng, std::size_t dim) {
  AttentionParams p;
  p.query = make_linear(rng, dim, dim);
  p.key = make_linear(rng, dim, dim);
  p.value = make_linear(rng, dim, dim);
  p.out = make_linear(rng, dim, dim);
  return p;
}

Tensor linear(const Tensor& x, const Linear& l) { return num::add_bias(num::matmul(x, l.weight), l.bias); }

Tensor norm(const Tensor& x, const LayerNormParams& p) { return num::layernorm(x, p.gain, p.bias); }

Tensor feed_forward(const Tensor& x, const Linear& in, const Linear& out) {
  return linear(num::gelu(linear(x, in)), out);
}

Tensor causal_mask(std::size_t t) {
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = kMaskValue;
  return Tensor::matrix(t, t, std::move(m));
}

// Scaled dot-product attention over `heads` column blocks of q, k and v.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const Tensor* mask) {
  const std::size_t d = q.cols() / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : num::slice_cols(q, h * d, (h + 1) * d);
    const Tensor kh = heads == 1 ? k : num::slice_cols(k, h * d, (h + 1) * d);
    const Tensor vh = heads == 1 ? v : num::slice_cols(v, h * d, (h + 1) * d);
    Tensor scores = num::scale(num::matmul_nt(qh, kh), s);
    if (mask) scores = num::add(scores, *mask);
    outs.push_back(num::matmul(num::softmax(scores, 1), vh));
  }
  return heads == 1 ? outs.front() : num::concat(outs, 1);
}

Tensor self_attention(const Tensor& x, const AttentionParams& p, std::size_t heads, const Tensor* mask) {
  return linear(attend(linear(x, p.query), linear(x, p.key), linear(x, p.value), heads, mask), p.out);
}

void add_linear(std::vector<num::NamedTensor>& out, const std::string& name, const Linear& l) {
  out.emplace_back(name + ".w", l.weight);
  out.emplace_back(name + ".b", l.bias);
}

void add_norm(std::vector<num::NamedTensor>& out, const std::string& name, const LayerNormParams& p) {
  out.emplace_back(name + ".g", p.gain);
  out.emplace_back(name + ".b", p.bias);
}

void add_attention(std::vector<num::NamedTensor>& out, const std::string& name, const AttentionParams& p) {
  add_linear(out, name + ".q", p.query);
  add_linear(out, name + ".k", p.key);
  add_linear(out, name + ".v", p.value);
  add_linear(out, name + ".o", p.out);
}

std::size_t to_size(long long v, const char* key) {
  if (v < 0) throw std::invalid_argument(std::string("config key '") + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kConfidence: return "confidence";
    case FusionMode::kPosterior: return "posterior";
    case FusionMode::kAttention: return "attention";
  }
  return "none";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "none") return FusionMode::kNone;
  if (name == "confidence") return FusionMode::kConfidence;
  if (name == "posterior") return FusionMode::kPosterior;
  if (name == "attention") return FusionMode::kAttention;
  throw std::invalid_argument("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(text::kNumReserved)) {
    throw std::invalid_argument("ModelConfig: vocab_size must exceed the reserved ids");
  }
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("ModelConfig: dim " + std::to_string(dim) + " not divisible into " +
                                std::to_string(heads) + " heads");
  }
  if (enc_layers == 0 || dec_layers == 0) throw std::invalid_argument("ModelConfig: need at least one layer each");
  if (ffn_dim == 0 || max_len == 0 || max_summary_len == 0) throw std::invalid_argument("ModelConfig: zero size");
  if (fusion_layer < 1 || fusion_layer > enc_layers) {
    throw std::invalid_argument("ModelConfig: fusion_layer " + std::to_string(fusion_layer) + " outside [1, " +
                                std::to_string(enc_layers) + "]");
  }
  if (fusion_mode != FusionMode::kNone && fusion_mode != FusionMode::kConfidence && num_hyps == 0) {
    throw std::invalid_argument("ModelConfig: fusion needs at least one hypothesis");
  }
  if (fusion_mode == FusionMode::kAttention && fusion_heads == 0) {
    throw std::invalid_argument("ModelConfig: attention fusion needs at least one head");
  }
}

std::size_t ModelConfig::hyps_used() const {
  switch (fusion_mode) {
    case FusionMode::kPosterior:
    case FusionMode::kAttention: return num_hyps;
    default: return 1;
  }
}

util::KeyValues ModelConfig::to_kv() const {
  util::KeyValues kv;
  kv["model.vocab_size"] = std::to_string(vocab_size);
  kv["model.dim"] = std::to_string(dim);
  kv["model.enc_layers"] = std::to_string(enc_layers);
  kv["model.dec_layers"] = std::to_string(dec_layers);
  kv["model.heads"] = std::to_string(heads);
  kv["model.ffn_dim"] = std::to_string(ffn_dim);
  kv["model.max_len"] = std::to_string(max_len);
  kv["model.max_summary_len"] = std::to_string(max_summary_len);
  kv["model.fusion_mode"] = to_string(fusion_mode);
  kv["model.fusion_layer"] = std::to_string(fusion_layer);
  kv["model.num_hyps"] = std::to_string(num_hyps);
  kv["model.fusion_heads"] = std::to_string(fusion_heads);
  kv["model.fusion_similarity"] = fusion_similarity == fusion::Similarity::kCosine ? "cosine" : "dot";
  kv["model.fusion_init"] = fusion_init == fusion::InitMode::kIdentity ? "identity" : "random";
  kv["model.posterior_renormalize"] = posterior_renormalize ? "true" : "false";
  return kv;
}

ModelConfig ModelConfig::from_kv(const util::KeyValues& kv) { return from_kv(kv, ModelConfig{}); }

ModelConfig ModelConfig::from_kv(const util::KeyValues& kv, ModelConfig c) {
  auto sz = [&](const char* key, std::size_t fallback) {
    return to_size(util::kv_int(kv, key, static_cast<long long>(fallback)), key);
  };
  c.vocab_size = sz("model.vocab_size", c.vocab_size);
  c.dim = sz("model.dim", c.dim);
  c.enc_layers = sz("model.enc_layers", c.enc_layers);
  c.dec_layers = sz("model.dec_layers", c.dec_layers);
  c.heads = sz("model.heads", c.heads);
  c.ffn_dim = sz("model.ffn_dim", c.ffn_dim);
  c.max_len = sz("model.max_len", c.max_len);
  c.max_summary_len = sz("model.max_summary_len", c.max_summary_len);
  c.fusion_mode = parse_fusion_mode(util::kv_string(kv, "model.fusion_mode", to_string(c.fusion_mode)));
  c.fusion_layer = sz("model.fusion_layer", c.fusion_layer);
  c.num_hyps = sz("model.num_hyps", c.num_hyps);
  c.fusion_heads = sz("model.fusion_heads", c.fusion_heads);
  const auto sim = util::kv_string(kv, "model.fusion_similarity",
                                   c.fusion_similarity == fusion::Similarity::kCosine ? "cosine" : "dot");
  if (sim != "cosine" && sim != "dot") throw std::invalid_argument("unknown fusion similarity '" + sim + "'");
  c.fusion_similarity = sim == "cosine" ? fusion::Similarity::kCosine : fusion::Similarity::kDot;
  const auto init = util::kv_string(kv, "model.fusion_init",
                                    c.fusion_init == fusion::InitMode::kIdentity ? "identity" : "random");
  if (init != "identity" && init != "random") throw std::invalid_argument("unknown fusion init '" + init + "'");
  c.fusion_init = init == "identity" ? fusion::InitMode::kIdentity : fusion::InitMode::kRandom;
  c.posterior_renormalize = util::kv_bool(kv, "model.posterior_renormalize", c.posterior_renormalize);
  return c;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t b = cfg_.dim;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(b));
  token_embedding = normal_matrix(rng, cfg_.vocab_size, b, emb_std);
  // Learned positions start from the sinusoid table, at the scale of the
  // sqrt(dim)-scaled token embeddings; offsets are then linear maps from step 0.
  enc_positions = sinusoid_matrix(cfg_.max_len, b);
  dec_positions = sinusoid_matrix(cfg_.max_summary_len + 1, b);
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    EncoderLayer layer;
    layer.ln_attn = make_layernorm(b);
    layer.attn = make_attention(rng, b);
    layer.ln_ffn = make_layernorm(b);
    layer.ffn_in = make_linear(rng, b, cfg_.ffn_dim);
    layer.ffn_out = make_linear(rng, cfg_.ffn_dim, b);
    encoder.push_back(std::move(layer));
  }
  enc_final = make_layernorm(b);
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    DecoderLayer layer;
    layer.ln_self = make_layernorm(b);
    layer.self_attn = make_attention(rng, b);
    layer.ln_cross = make_layernorm(b);
    layer.cross_attn = make_attention(rng, b);
    layer.ln_ffn = make_layernorm(b);
    layer.ffn_in = make_linear(rng, b, cfg_.ffn_dim);
    layer.ffn_out = make_linear(rng, cfg_.ffn_dim, b);
    decoder.push_back(std::move(layer));
  }
  dec_final = make_layernorm(b);
  output_bias = Tensor::zeros({1, cfg_.vocab_size}, true);
  if (cfg_.fusion_mode == FusionMode::kConfidence) confidence = fusion::ConfidenceEmbed::zeros(b);
  if (cfg_.fusion_mode == FusionMode::kAttention) {
    fusion = fusion::init_fusion_params(cfg_.fusion_heads, b, cfg_.fusion_init, rng());
    fusion.similarity = cfg_.fusion_similarity;
  }
}

Tensor Model::embed(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("Model: empty token sequence");
  if (ids.size() > cfg_.max_len) {
    throw std::invalid_argument("Model: sequence of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                                std::to_string(cfg_.max_len));
  }
  return num::add(token_embed(ids), num::slice_rows(enc_positions, 0, ids.size()));
}

Tensor Model::token_embed(std::span<const int> ids) const {
  return num::scale(num::embed_lookup(token_embedding, ids), std::sqrt(static_cast<double>(cfg_.dim)));
}

Tensor Model::run_encoder_layers(Tensor x, std::size_t begin, std::size_t end) const {
  for (std::size_t l = begin; l < end; ++l) {
    const auto& layer = encoder[l];
    x = num::add(x, self_attention(norm(x, layer.ln_attn), layer.attn, cfg_.heads, nullptr));
    x = num::add(x, feed_forward(norm(x, layer.ln_ffn), layer.ffn_in, layer.ffn_out));
  }
  return x;
}

Tensor Model::encode(const asr::HypothesisSet& hyps, EncodeTrace* trace) const {
  const std::size_t needed = cfg_.hyps_used();
  if (hyps.n() == 0) throw std::invalid_argument("encode: document '" + hyps.doc_id + "' has no hypotheses");
  if (hyps.n() < needed) {
    throw std::invalid_argument("encode: " + to_string(cfg_.fusion_mode) + " fusion needs " + std::to_string(needed) +
                                " hypotheses, document '" + hyps.doc_id + "' has " + std::to_string(hyps.n()));
  }
  const auto& best = hyps.tokens[0];
  if (best.empty() || best.size() > cfg_.max_len) {
    throw std::invalid_argument("encode: document '" + hyps.doc_id + "' has " + std::to_string(best.size()) +
                                " tokens; accepted range is [1, " + std::to_string(cfg_.max_len) + "]");
  }
  const std::size_t fl = cfg_.fusion_layer - 1;
  Tensor x;
  std::vector<Tensor> alpha;
  Tensor before;
  switch (cfg_.fusion_mode) {
    case FusionMode::kNone:
      x = run_encoder_layers(embed(best), 0, fl);
      before = x;
      break;
    case FusionMode::kConfidence: {
      const Tensor pos = num::slice_rows(enc_positions, 0, best.size());
      const Tensor tok = fusion::confidence_embed(token_embed(best), hyps.posteriors[0], confidence);
      x = run_encoder_layers(num::add(tok, pos), 0, fl);
      before = x;
      break;
    }
    case FusionMode::kPosterior: {
      std::vector<Tensor> embeds;
      std::vector<double> post;
      for (std::size_t n = 0; n < needed; ++n) {
        if (hyps.tokens[n].size() != best.size()) {
          throw num::DimensionError("encode: posterior fusion requires aligned hypotheses (document '" + hyps.doc_id +
                                    "')");
        }
        embeds.push_back(token_embed(hyps.tokens[n]));
        post.insert(post.end(), hyps.posteriors[n].begin(), hyps.posteriors[n].end());
      }
      const Tensor p = Tensor::matrix(needed, best.size(), std::move(post));
      const Tensor fused = fusion::posterior_fuse(embeds, p, cfg_.posterior_renormalize);
      x = run_encoder_layers(num::add(fused, num::slice_rows(enc_positions, 0, best.size())), 0, fl);
      before = x;
      break;
    }
    case FusionMode::kAttention: {
      std::vector<Tensor> streams;
      for (std::size_t n = 0; n < needed; ++n) streams.push_back(run_encoder_layers(embed(hyps.tokens[n]), 0, fl));
      before = streams.front();
      auto fused = fusion::attention_fuse(streams, fusion);
      x = std::move(fused.fused);
      alpha = std::move(fused.head_weights);
      break;
    }
  }
  if (trace) {
    trace->fusion_input = before;
    trace->fused = x;
    trace->fusion_weights = std::move(alpha);
  }
  x = run_encoder_layers(std::move(x), fl, cfg_.enc_layers);
  return norm(x, enc_final);
}

Memory Model::prepare_memory(const Tensor& states) const {
  Memory m;
  m.states = states;
  for (const auto& layer : decoder) {
    m.keys.push_back(linear(states, layer.cross_attn.key));
    m.values.push_back(linear(states, layer.cross_attn.value));
  }
  return m;
}

Tensor Model::decoder_logits(const Memory& memory, std::span<const int> prefix) const {
  if (prefix.empty()) throw std::invalid_argument("decoder_logits: empty prefix");
  if (prefix.size() > cfg_.max_summary_len + 1) {
    throw std::invalid_argument("decoder_logits: prefix of " + std::to_string(prefix.size()) +
                                " tokens exceeds the summary cap");
  }
  Tensor x = num::add(token_embed(prefix), num::slice_rows(dec_positions, 0, prefix.size()));
  const Tensor mask = causal_mask(prefix.size());
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const auto& layer = decoder[l];
    x = num::add(x, self_attention(norm(x, layer.ln_self), layer.self_attn, cfg_.heads, &mask));
    const Tensor q = linear(norm(x, layer.ln_cross), layer.cross_attn.query);
    x = num::add(x, linear(attend(q, memory.keys[l], memory.values[l], cfg_.heads, nullptr), layer.cross_attn.out));
    x = num::add(x, feed_forward(norm(x, layer.ln_ffn), layer.ffn_in, layer.ffn_out));
  }
  return num::add_bias(num::matmul_nt(norm(x, dec_final), token_embedding), output_bias);
}

Tensor Model::loss(const asr::HypothesisSet& hyps, std::span<const int> summary) const {
  if (summary.size() > cfg_.max_summary_len) {
    throw std::invalid_argument("loss: summary of " + std::to_string(summary.size()) + " tokens exceeds the cap " +
                                std::to_string(cfg_.max_summary_len));
  }
  const Memory mem = prepare_memory(encode(hyps));
  const auto input = decoder_input(summary);
  const auto targets = decoder_targets(summary);
  return num::cross_entropy(decoder_logits(mem, input), targets);
}

std::vector<num::NamedTensor> Model::named_parameters() const {
  std::vector<num::NamedTensor> out;
  out.emplace_back("tok_emb", token_embedding);
  out.emplace_back("enc.pos", enc_positions);
  out.emplace_back("dec.pos", dec_positions);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    add_norm(out, p + ".ln_attn", encoder[l].ln_attn);
    add_attention(out, p + ".attn", encoder[l].attn);
    add_norm(out, p + ".ln_ffn", encoder[l].ln_ffn);
    add_linear(out, p + ".ffn_in", encoder[l].ffn_in);
    add_linear(out, p + ".ffn_out", encoder[l].ffn_out);
  }
  add_norm(out, "enc.final", enc_final);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    add_norm(out, p + ".ln_self", decoder[l].ln_self);
    add_attention(out, p + ".self", decoder[l].self_attn);
    add_norm(out, p + ".ln_cross", decoder[l].ln_cross);
    add_attention(out, p + ".cross", decoder[l].cross_attn);
    add_norm(out, p + ".ln_ffn", decoder[l].ln_ffn);
    add_linear(out, p + ".ffn_in", decoder[l].ffn_in);
    add_linear(out, p + ".ffn_out", decoder[l].ffn_out);
  }
  add_norm(out, "dec.final", dec_final);
  out.emplace_back("out.bias", output_bias);
  if (cfg_.fusion_mode == FusionMode::kConfidence) {
    out.emplace_back("conf.w", confidence.weight);
    out.emplace_back("conf.b", confidence.bias);
  }
  if (cfg_.fusion_mode == FusionMode::kAttention) {
    for (auto& r : fusion.named()) out.push_back(std::move(r));
  }
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  util::write_file(dir / "model.cfg", util::format_kv(cfg_.to_kv()));
  num::save_checkpoint(dir / "model.ckpt", named_parameters());
}

Model Model::load(const std::filesystem::path& dir) {
  const auto cfg = ModelConfig::from_kv(util::load_kv(dir / "model.cfg"));
  Model m(cfg, 0);
  const auto records = num::load_checkpoint(dir / "model.ckpt");
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name[name] = &t;
  for (auto& [name, t] : m.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint " + dir.string() + ": missing tensor " + name);
    if (it->second->shape() != t.shape()) {
      throw num::DimensionError("checkpoint " + dir.string() + ": tensor " + name + " has shape " +
                                num::shape_str(it->second->shape()) + ", expected " + num::shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
  if (records.size() != m.named_parameters().size()) {
    throw std::runtime_error("checkpoint " + dir.string() + ": unexpected extra tensors");
  }
  return m;
}

std::vector<int> decoder_input(std::span<const int> summary) {
  std::vector<int> out{text::kBos};
  out.insert(out.end(), summary.begin(), summary.end());
  return out;
}

std::vector<int> decoder_targets(std::span<const int> summary) {
  std::vector<int> out(summary.begin(), summary.end());
  out.push_back(text::kEos);
  return out;
}

}  // namespace mhsum::model
