#include "mhsum/model/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mhsum/num/checkpoint.hpp"
#include "mhsum/text/vocab.hpp"

namespace mhsum::model {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Log-softmax of the last logits row with disallowed ids set to -inf.
std::vector<double> next_log_probs(const Model& model, const Memory& memory, const std::vector<int>& prefix,
                                   bool eos_only) {
  const num::Tensor logits = model.decoder_logits(memory, prefix);
  const std::size_t v = logits.cols();
  const auto row = logits.data().subspan((logits.rows() - 1) * v, v);
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double x : row) z += std::exp(x - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - lz;
  for (int r = 0; r < text::kNumReserved; ++r)
    if (r != text::kEos) out[static_cast<std::size_t>(r)] = kNegInf;
  if (eos_only) {
    for (std::size_t i = 0; i < v; ++i)
      if (static_cast<int>(i) != text::kEos) out[i] = kNegInf;
  }
  return out;
}

struct Beam {
  std::vector<int> prefix;  // starts with BOS
  double score = 0.0;
  double model_score = 0.0;
};

struct Candidate {
  double score;
  double model_score;
  std::size_t beam;
  int token;
};

}  // namespace

LMTable::LMTable(std::size_t vocab_size, std::vector<double> log_probs)
    : vocab_(vocab_size), logp_(std::move(log_probs)) {
  if (vocab_ == 0 || logp_.size() != vocab_ * vocab_) {
    throw std::invalid_argument("LMTable: expected " + std::to_string(vocab_ * vocab_) + " entries, got " +
                                std::to_string(logp_.size()));
  }
  for (std::size_t r = 0; r < vocab_; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < vocab_; ++c) {
      const double lp = logp_[r * vocab_ + c];
      if (std::isnan(lp) || lp > 0.0) throw std::invalid_argument("LMTable: invalid log-probability");
      z += std::exp(lp);
    }
    if (std::abs(z - 1.0) > 1e-9) {
      throw std::invalid_argument("LMTable: row " + std::to_string(r) + " sums to " + std::to_string(z));
    }
  }
}

LMTable LMTable::uniform(std::size_t vocab_size) {
  return LMTable(vocab_size, std::vector<double>(vocab_size * vocab_size, -std::log(static_cast<double>(vocab_size))));
}

LMTable LMTable::estimate(std::span<const std::vector<int>> sequences, std::size_t vocab_size, double add_k) {
  if (!(add_k > 0.0)) throw std::invalid_argument("LMTable::estimate: add_k must be positive");
  std::vector<double> counts(vocab_size * vocab_size, add_k);
  auto bump = [&](int prev, int next) {
    if (prev < 0 || next < 0 || static_cast<std::size_t>(prev) >= vocab_size ||
        static_cast<std::size_t>(next) >= vocab_size) {
      throw std::out_of_range("LMTable::estimate: token id outside the vocabulary");
    }
    counts[static_cast<std::size_t>(prev) * vocab_size + static_cast<std::size_t>(next)] += 1.0;
  };
  for (const auto& seq : sequences) {
    int prev = text::kBos;
    for (int t : seq) {
      bump(prev, t);
      prev = t;
    }
    bump(prev, text::kEos);
  }
  for (std::size_t r = 0; r < vocab_size; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < vocab_size; ++c) z += counts[r * vocab_size + c];
    const double lz = std::log(z);
    for (std::size_t c = 0; c < vocab_size; ++c) counts[r * vocab_size + c] = std::log(counts[r * vocab_size + c]) - lz;
  }
  return LMTable(vocab_size, std::move(counts));
}

double LMTable::log_prob(int prev, int next) const {
  if (prev < 0 || next < 0 || static_cast<std::size_t>(prev) >= vocab_ || static_cast<std::size_t>(next) >= vocab_) {
    throw std::out_of_range("LMTable: token id outside the vocabulary");
  }
  return logp_[static_cast<std::size_t>(prev) * vocab_ + static_cast<std::size_t>(next)];
}

void LMTable::save(const std::filesystem::path& path) const {
  num::save_checkpoint(path, {{"lm.logp", num::Tensor::matrix(vocab_, vocab_, logp_)}});
}

LMTable LMTable::load(const std::filesystem::path& path) {
  const auto records = num::load_checkpoint(path);
  if (records.size() != 1 || records[0].first != "lm.logp" || records[0].second.ndim() != 2 ||
      records[0].second.rows() != records[0].second.cols()) {
    throw std::runtime_error("LMTable: " + path.string() + " is not a bigram table");
  }
  const auto& t = records[0].second;
  return LMTable(t.rows(), {t.data().begin(), t.data().end()});
}

Decoded decode_summary(const Model& model, const Memory& memory, const DecodeOptions& options) {
  if (options.beam == 0) throw std::invalid_argument("decode_summary: beam width must be at least 1");
  if (!(options.lm_weight >= 0.0)) throw std::invalid_argument("decode_summary: lm_weight must be non-negative");
  const bool use_lm = options.lm_weight > 0.0;
  if (use_lm && !options.lm) throw std::invalid_argument("decode_summary: lm_weight > 0 without an LM table");
  if (use_lm && options.lm->vocab_size() != model.config().vocab_size) {
    throw std::invalid_argument("decode_summary: LM vocabulary size differs from the model's");
  }
  const std::size_t cap = model.config().max_summary_len;

  std::vector<Beam> live{Beam{{text::kBos}, 0.0, 0.0}};
  std::vector<Beam> finished;
  for (std::size_t step = 0; step <= cap && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = next_log_probs(model, memory, live[b].prefix, step == cap);
      const int prev = live[b].prefix.back();
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (lp[tok] == kNegInf) continue;
        const int t = static_cast<int>(tok);
        double s = live[b].score + lp[tok];
        if (use_lm) s += options.lm_weight * options.lm->log_prob(prev, t);
        cands.push_back({s, live[b].model_score + lp[tok], b, t});
      }
    }
    const std::size_t keep = std::min(options.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      Beam nb{live[c.beam].prefix, c.score, c.model_score};
      if (c.token == text::kEos) {
        finished.push_back(std::move(nb));
      } else {
        nb.prefix.push_back(c.token);
        next.push_back(std::move(nb));
      }
    }
    live = std::move(next);
    // Scores never increase along a path, so no live beam can overtake the
    // best finished one once it is ahead.
    if (!finished.empty() && !live.empty()) {
      double best_done = kNegInf;
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      if (best_done >= live.front().score) break;
    }
  }
  if (finished.empty()) throw std::logic_error("decode_summary: search ended without a finished hypothesis");
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const Beam& a, const Beam& b) { return a.score < b.score; });
  return {std::vector<int>(best->prefix.begin() + 1, best->prefix.end()), best->score, best->model_score};
}

Decoded greedy_decode(const Model& model, const Memory& memory) {
  const std::size_t cap = model.config().max_summary_len;
  std::vector<int> prefix{text::kBos};
  Decoded out;
  for (std::size_t step = 0; step <= cap; ++step) {
    const auto lp = next_log_probs(model, memory, prefix, step == cap);
    const auto it = std::max_element(lp.begin(), lp.end());
    out.score += *it;
    const int tok = static_cast<int>(it - lp.begin());
    if (tok == text::kEos) break;
    prefix.push_back(tok);
  }
  out.model_score = out.score;
  out.tokens.assign(prefix.begin() + 1, prefix.end());
  return out;
}

Decoded summarize(const Model& model, const asr::HypothesisSet& hyps, const DecodeOptions& options) {
  return decode_summary(model, model.prepare_memory(model.encode(hyps)), options);
}

}  // namespace mhsum::model
