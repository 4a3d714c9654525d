#include "mhsum/eval/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>

namespace mhsum::eval {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(std::span<const std::string> words, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  if (words.size() < n) return out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++out[Ngram(words.begin() + i, words.begin() + i + n)];
  return out;
}

Prf make_prf(double overlap, double hyp_total, double ref_total) {
  Prf p;
  if (hyp_total == 0.0 || ref_total == 0.0) return p;
  p.precision = overlap / hyp_total;
  p.recall = overlap / ref_total;
  p.f1 = p.precision + p.recall > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
  return p;
}

Words concat_sentences(std::span<const std::string> sentences, std::span<const std::size_t> idx) {
  Words out;
  for (auto i : idx) {
    auto w = normalize_words(sentences[i]);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

}  // namespace

Words normalize_words(std::string_view text) {
  Words out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Prf rouge_n_prf(std::span<const std::string> hyp, std::span<const std::string> ref, int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("rouge_n: n must be 1 or 2, got " + std::to_string(n));
  const auto hc = ngram_counts(hyp, static_cast<std::size_t>(n));
  const auto rc = ngram_counts(ref, static_cast<std::size_t>(n));
  std::size_t overlap = 0, ht = 0, rt = 0;
  for (const auto& [g, c] : hc) {
    ht += c;
    auto it = rc.find(g);
    if (it != rc.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : rc) rt += c;
  return make_prf(static_cast<double>(overlap), static_cast<double>(ht), static_cast<double>(rt));
}

double rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n) {
  return rouge_n_prf(hyp, ref, n).f1;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Prf rouge_l_prf(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return make_prf(static_cast<double>(lcs_length(hyp, ref)), static_cast<double>(hyp.size()),
                  static_cast<double>(ref.size()));
}

double rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref) { return rouge_l_prf(hyp, ref).f1; }

RougeScores rouge_all(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return {rouge_n(hyp, ref, 1), rouge_n(hyp, ref, 2), rouge_l(hyp, ref)};
}

CorpusStats corpus_stats(std::span<const SummaryPair> corpus) {
  if (corpus.empty()) throw std::invalid_argument("corpus_stats: empty corpus");
  CorpusStats s;
  for (const auto& doc : corpus) {
    Words src;
    for (const auto& sent : doc.source) {
      auto w = normalize_words(sent);
      src.insert(src.end(), w.begin(), w.end());
    }
    if (src.empty()) {
      std::cerr << "corpus_stats: skipping document with an empty source\n";
      ++s.skipped;
      continue;
    }
    Words sum;
    for (const auto& sent : doc.summary) {
      auto w = normalize_words(sent);
      sum.insert(sum.end(), w.begin(), w.end());
    }
    const std::set<std::string> types(src.begin(), src.end());
    std::size_t covered = 0;
    for (const auto& w : sum) covered += types.count(w);
    ++s.documents;
    s.mean_source_sentences += static_cast<double>(doc.source.size());
    s.mean_source_words += static_cast<double>(src.size());
    s.mean_summary_sentences += static_cast<double>(doc.summary.size());
    s.mean_summary_words += static_cast<double>(sum.size());
    s.compression_sentence += static_cast<double>(doc.summary.size()) / static_cast<double>(doc.source.size());
    s.compression_word += static_cast<double>(sum.size()) / static_cast<double>(src.size());
    s.word_overlap += sum.empty() ? 0.0 : static_cast<double>(covered) / static_cast<double>(sum.size());
  }
  if (s.documents == 0) throw std::invalid_argument("corpus_stats: every document has an empty source");
  const double n = static_cast<double>(s.documents);
  s.mean_source_sentences /= n;
  s.mean_source_words /= n;
  s.mean_summary_sentences /= n;
  s.mean_summary_words /= n;
  s.compression_sentence = 100.0 * s.compression_sentence / n;
  s.compression_word = 100.0 * s.compression_word / n;
  s.word_overlap = 100.0 * s.word_overlap / n;
  return s;
}

double oracle_objective(const RougeScores& s, OracleObjective objective) {
  switch (objective) {
    case OracleObjective::kRouge1: return s.rouge1;
    case OracleObjective::kRouge2: return s.rouge2;
    case OracleObjective::kRougeL: return s.rougeL;
    case OracleObjective::kMeanRouge: break;
  }
  return s.mean();
}

OracleResult oracle_extractive(std::span<const std::string> sentences, std::span<const std::string> reference,
                               std::size_t max_k, OracleMode mode, OracleObjective objective) {
  if (sentences.empty()) throw std::invalid_argument("oracle_extractive: empty document");
  if (max_k == 0) throw std::invalid_argument("oracle_extractive: max_k must be at least 1");
  if (mode == OracleMode::kAuto) {
    mode = sentences.size() <= kExhaustiveOracleLimit ? OracleMode::kExhaustive : OracleMode::kGreedy;
  }
  if (mode == OracleMode::kExhaustive && sentences.size() > kExhaustiveOracleLimit) {
    throw std::invalid_argument("oracle_extractive: exhaustive search is limited to " +
                                std::to_string(kExhaustiveOracleLimit) + " sentences");
  }
  auto evaluate = [&](const std::vector<std::size_t>& idx) {
    OracleResult r;
    r.indices = idx;
    r.scores = rouge_all(concat_sentences(sentences, idx), reference);
    r.objective = oracle_objective(r.scores, objective);
    return r;
  };

  const std::size_t k_max = std::min(max_k, sentences.size());
  OracleResult best;
  bool have = false;
  if (mode == OracleMode::kExhaustive) {
    const std::size_t n = sentences.size();
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) > k_max) continue;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) idx.push_back(i);
      auto r = evaluate(idx);
      if (!have || r.objective > best.objective || (r.objective == best.objective && r.indices < best.indices)) {
        best = std::move(r);
        have = true;
      }
    }
    return best;
  }

  std::vector<std::size_t> chosen;
  best = evaluate({});
  best.objective = -1.0;
  while (chosen.size() < k_max) {
    OracleResult step;
    bool found = false;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      auto idx = chosen;
      idx.insert(std::upper_bound(idx.begin(), idx.end(), i), i);
      auto r = evaluate(idx);
      if (!found || r.objective > step.objective) {
        step = std::move(r);
        found = true;
      }
    }
    if (!found || step.objective <= best.objective) break;
    best = std::move(step);
    chosen = best.indices;
  }
  return best;
}

std::optional<double> MetricReport::get(std::string_view name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  return std::nullopt;
}

std::string format_number(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string MetricReport::to_csv() const {
  std::string out = "metric,value\n";
  for (const auto& [k, v] : values) out += k + "," + format_number(v, 4) + "\n";
  return out;
}

std::string MetricReport::to_table() const {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [k, v] : values) rows.push_back({k, format_number(v)});
  return format_table({"metric", "value"}, rows);
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw std::invalid_argument("format_table: row width differs from header");
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += "  ";
      const std::string pad(width[c] - cells[c].size(), ' ');
      out += c == 0 ? cells[c] + pad : pad + cells[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

}  // namespace mhsum::eval
