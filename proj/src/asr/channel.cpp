#include "mhsum/asr/channel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace mhsum::asr {

namespace {

using text::TokenSeq;
using text::Vocab;

struct Pools {
  std::vector<int> word_final;
  std::vector<int> word_inner;

  const std::vector<int>& for_token(const Vocab& vocab, int id) const {
    if (Vocab::is_reserved(id) || vocab.is_word_final(id)) return word_final;
    return word_inner;
  }
};

Pools build_pools(const Vocab& vocab) {
  Pools p;
  for (int id = text::kNumReserved; id < static_cast<int>(vocab.size()); ++id)
    (vocab.is_word_final(id) ? p.word_final : p.word_inner).push_back(id);
  return p;
}

class Draws {
 public:
  explicit Draws(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  int token_other_than(const std::vector<int>& pool, std::span<const int> exclude) {
    for (;;) {
      const int t = pool[index(pool.size())];
      if (std::find(exclude.begin(), exclude.end(), t) == exclude.end()) return t;
    }
  }

  // Truncated geometric over 1..kPosteriorCandidates-1.
  std::size_t reference_rank(double decay) {
    const std::size_t slots = kPosteriorCandidates - 1;
    std::vector<double> w(slots);
    double total = 0.0;
    for (std::size_t k = 0; k < slots; ++k) total += (w[k] = std::pow(decay, static_cast<double>(k)));
    double u = uniform() * total;
    for (std::size_t k = 0; k < slots; ++k) {
      if (u < w[k]) return k + 1;
      u -= w[k];
    }
    return slots;
  }

 private:
  std::mt19937_64 rng_;
};

std::array<double, kPosteriorCandidates> rank_masses(double concentration) {
  std::array<double, kPosteriorCandidates> w{};
  double z = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) z += (w[k] = std::exp(-concentration * static_cast<double>(k)));
  for (auto& v : w) v /= z;
  return w;
}

struct PositionDraw {
  int emitted;
  bool substituted;
  std::array<int, kPosteriorCandidates> candidates;
  std::array<double, kPosteriorCandidates> masses;
};

PositionDraw draw_position(int ref, const std::vector<int>& pool, const ChannelSpec& spec, Draws& draws) {
  if (pool.size() < kPosteriorCandidates + 1) {
    throw std::invalid_argument("channel: only " + std::to_string(pool.size()) +
                                " content tokens available; at least 11 are needed for ten distinct candidates");
  }
  PositionDraw d{};
  d.substituted = draws.uniform() < spec.sub_rate;
  const int self[1] = {ref};
  d.emitted = d.substituted ? draws.token_other_than(pool, self) : ref;
  d.candidates.fill(-1);
  d.candidates[0] = d.emitted;
  if (d.substituted) d.candidates[draws.reference_rank(spec.ref_rank_decay)] = ref;
  for (std::size_t k = 1; k < kPosteriorCandidates; ++k) {
    if (d.candidates[k] >= 0) continue;
    std::vector<int> taken{ref};
    for (int c : d.candidates)
      if (c >= 0) taken.push_back(c);
    d.candidates[k] = draws.token_other_than(pool, taken);
  }
  const double c = spec.confusion_sharpness * (d.substituted ? spec.error_sharpness_ratio : 1.0);
  d.masses = rank_masses(c);
  return d;
}

}  // namespace

void ChannelSpec::validate() const {
  if (!(sub_rate >= 0.0 && sub_rate <= 1.0)) throw std::invalid_argument("channel: sub_rate must lie in [0, 1]");
  if (!(confusion_sharpness > 0.0)) throw std::invalid_argument("channel: confusion_sharpness must be positive");
  if (!(error_sharpness_ratio > 0.0)) throw std::invalid_argument("channel: error_sharpness_ratio must be positive");
  if (!(ref_rank_decay > 0.0)) throw std::invalid_argument("channel: ref_rank_decay must be positive");
  if (!(indel_rate >= 0.0 && indel_rate <= 1.0)) throw std::invalid_argument("channel: indel_rate must lie in [0, 1]");
}

bool HypothesisSet::aligned() const {
  for (const auto& row : tokens)
    if (row.size() != tokens.front().size()) return false;
  return true;
}

ChannelOutput channel_corrupt(const TokenSeq& ref, const Vocab& vocab, const ChannelSpec& spec) {
  spec.validate();
  if (ref.empty()) throw std::invalid_argument("channel_corrupt: empty reference");
  const Pools pools = build_pools(vocab);
  Draws draws(spec.seed);

  ChannelOutput out;
  auto& pm = out.posteriors;
  pm.rows = ref.size();
  pm.cols = vocab.size();
  pm.values.assign(pm.rows * pm.cols, 0.0);
  pm.structural.assign(pm.rows, false);
  out.emitted.sentence_starts = ref.sentence_starts;
  out.emitted.structural_mask = ref.structural_mask;
  out.emitted.structural_mask.resize(ref.size(), false);

  for (std::size_t m = 0; m < ref.size(); ++m) {
    const int token = ref.ids[m];
    const bool structural = m < ref.structural_mask.size() && ref.structural_mask[m];
    if (structural) {
      pm.structural[m] = true;
      pm.values[m * pm.cols + static_cast<std::size_t>(token)] = 1.0;
      out.emitted.ids.push_back(token);
      continue;
    }
    const auto d = draw_position(token, pools.for_token(vocab, token), spec, draws);
    for (std::size_t k = 0; k < kPosteriorCandidates; ++k)
      pm.values[m * pm.cols + static_cast<std::size_t>(d.candidates[k])] = d.masses[k];
    out.emitted.ids.push_back(d.emitted);
    if (d.substituted) ++out.substitutions;
  }
  return out;
}

HypothesisSet generate_nbest_aligned(const ChannelOutput& channel, std::size_t n, std::string doc_id) {
  if (n == 0 || n > kPosteriorCandidates) {
    throw std::invalid_argument("generate_nbest_aligned: n must lie in [1, 10], got " + std::to_string(n));
  }
  const auto& pm = channel.posteriors;
  HypothesisSet set;
  set.doc_id = std::move(doc_id);
  set.tokens.assign(n, std::vector<int>(pm.rows));
  set.posteriors.assign(n, std::vector<double>(pm.rows));
  std::vector<int> order(pm.cols);
  for (std::size_t m = 0; m < pm.rows; ++m) {
    if (pm.structural[m]) {
      const int token = channel.emitted.ids[m];
      for (std::size_t h = 0; h < n; ++h) {
        set.tokens[h][m] = token;
        set.posteriors[h][m] = 1.0;
      }
      continue;
    }
    const auto row = pm.row(m);
    order.clear();
    for (std::size_t v = 0; v < pm.cols; ++v)
      if (row[v] > 0.0) order.push_back(static_cast<int>(v));
    if (order.size() < n) {
      throw std::invalid_argument("generate_nbest_aligned: position " + std::to_string(m) + " has only " +
                                  std::to_string(order.size()) + " candidate tokens, " + std::to_string(n) +
                                  " requested");
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), [&](int a, int b) {
      if (row[static_cast<std::size_t>(a)] != row[static_cast<std::size_t>(b)])
        return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
      return a < b;
    });
    for (std::size_t h = 0; h < n; ++h) {
      set.tokens[h][m] = order[h];
      set.posteriors[h][m] = row[static_cast<std::size_t>(order[h])];
    }
  }
  return set;
}

HypothesisSet generate_unaligned(const TokenSeq& ref, const Vocab& vocab, const ChannelSpec& spec, std::size_t n,
                                 std::string doc_id) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("generate_unaligned: n must be positive");
  if (ref.empty()) throw std::invalid_argument("generate_unaligned: empty reference");
  const Pools pools = build_pools(vocab);
  HypothesisSet set;
  set.doc_id = std::move(doc_id);
  for (std::size_t h = 0; h < n; ++h) {
    Draws draws(derive_seed(spec.seed, "hyp" + std::to_string(h)));
    std::vector<int> toks;
    std::vector<double> post;
    for (std::size_t m = 0; m < ref.size(); ++m) {
      const int token = ref.ids[m];
      if (m < ref.structural_mask.size() && ref.structural_mask[m]) {
        toks.push_back(token);
        post.push_back(1.0);
        continue;
      }
      const auto& pool = pools.for_token(vocab, token);
      const double u = draws.uniform();
      if (u < spec.indel_rate / 2.0) continue;  // deletion
      if (u < spec.indel_rate) {                // insertion ahead of the token
        const int self[1] = {token};
        const int ins = draws.token_other_than(pools.word_final, self);
        toks.push_back(ins);
        post.push_back(rank_masses(spec.confusion_sharpness * spec.error_sharpness_ratio)[0]);
      }
      const auto d = draw_position(token, pool, spec, draws);
      toks.push_back(d.emitted);
      post.push_back(d.masses[0]);
    }
    set.tokens.push_back(std::move(toks));
    set.posteriors.push_back(std::move(post));
  }
  return set;
}

HypothesisSet reference_hypothesis(const TokenSeq& ref, std::string doc_id) {
  HypothesisSet set;
  set.doc_id = std::move(doc_id);
  set.tokens.push_back(ref.ids);
  set.posteriors.emplace_back(ref.size(), 1.0);
  return set;
}

EditCounts word_edits(std::span<const std::string> hyp, std::span<const std::string> ref) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return {prev[hyp.size()], ref.size()};
}

double wer(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  const auto e = word_edits(hyp, ref);
  return static_cast<double>(e.errors) / static_cast<double>(e.ref_words);
}

double wer(std::span<const int> hyp, std::span<const int> ref, const Vocab& vocab) {
  const auto h = text::split_words(text::decode(hyp, vocab));
  const auto r = text::split_words(text::decode(ref, vocab));
  return wer(h, r);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view doc_id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : doc_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  // splitmix64 finalizer over the combination
  std::uint64_t z = global_seed ^ (h + 0x9e3779b97f4a7c15ULL + (global_seed << 6) + (global_seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string hypothesis_to_json(const HypothesisSet& set) {
  nlohmann::json j;
  j["doc_id"] = set.doc_id;
  j["n"] = set.n();
  j["tokens"] = set.tokens;
  j["posteriors"] = set.posteriors;
  return j.dump();
}

HypothesisSet hypothesis_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  HypothesisSet set;
  set.doc_id = j.at("doc_id").get<std::string>();
  set.tokens = j.at("tokens").get<std::vector<std::vector<int>>>();
  set.posteriors = j.at("posteriors").get<std::vector<std::vector<double>>>();
  const auto n = j.at("n").get<std::size_t>();
  if (n != set.tokens.size() || n != set.posteriors.size()) {
    throw std::runtime_error("hypothesis record " + set.doc_id + ": n does not match row count");
  }
  for (std::size_t h = 0; h < n; ++h) {
    if (set.tokens[h].size() != set.posteriors[h].size()) {
      throw std::runtime_error("hypothesis record " + set.doc_id + ": token/posterior length mismatch");
    }
  }
  return set;
}

void write_hypotheses(const std::filesystem::path& path, std::span<const HypothesisSet> sets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : sets) out << hypothesis_to_json(s) << '\n';
}

std::vector<HypothesisSet> read_hypotheses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<HypothesisSet> sets;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) sets.push_back(hypothesis_from_json(line));
  return sets;
}

}  // namespace mhsum::asr
