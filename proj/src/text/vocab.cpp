#include "mhsum/text/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mhsum::text {

namespace {

std::string rank_key(const std::string& left, const std::string& right) { return left + ' ' + right; }

bool ends_with_eow(std::string_view s) {
  return s.size() >= kEndOfWord.size() && s.substr(s.size() - kEndOfWord.size()) == kEndOfWord;
}

// One pass of the merge over a symbol sequence.
void apply_merge(std::vector<std::string>& syms, const std::string& left, const std::string& right) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(std::move(syms[i]));
    }
  }
  syms = std::move(out);
}

}  // namespace

const std::vector<std::string>& reserved_symbols() {
  static const std::vector<std::string> kReserved{"[PAD]", "[CLS]", "[SEP]", "[BOS]", "[EOS]", "[UNK]"};
  return kReserved;
}

Vocab::Vocab(std::vector<std::string> alphabet, std::vector<MergeRule> merges) : merges_(std::move(merges)) {
  symbols_ = reserved_symbols();
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  for (auto& a : alphabet) {
    if (std::find(symbols_.begin(), symbols_.end(), a) != symbols_.end()) {
      throw std::invalid_argument("vocab: alphabet symbol collides with a reserved token: " + a);
    }
    symbols_.push_back(std::move(a));
  }
  alphabet_size_ = symbols_.size() - kNumReserved;
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<int>(i));
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    if (!index_.contains(left) || !index_.contains(right)) {
      throw std::invalid_argument("vocab: merge '" + left + " " + right + "' uses an unknown symbol");
    }
    merge_ranks_.emplace(rank_key(left, right), r);
    std::string merged = left + right;
    if (!index_.contains(merged)) {
      index_.emplace(merged, static_cast<int>(symbols_.size()));
      symbols_.push_back(std::move(merged));
    }
  }
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(size()) + ")");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Vocab::merge_rank(const std::string& left, const std::string& right) const {
  auto it = merge_ranks_.find(rank_key(left, right));
  if (it == merge_ranks_.end()) return std::nullopt;
  return it->second;
}

bool Vocab::is_word_final(int id) const { return !is_reserved(id) && ends_with_eow(symbol(id)); }

std::string Vocab::serialize() const {
  std::ostringstream os;
  os << "#mhsum-bpe 1\n#reserved";
  for (const auto& r : reserved_symbols()) os << ' ' << r;
  os << "\n#alphabet " << alphabet_size_ << '\n';
  for (std::size_t i = 0; i < alphabet_size_; ++i) os << symbols_[kNumReserved + i] << '\n';
  os << "#merges " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) os << l << ' ' << r << '\n';
  return os.str();
}

Vocab Vocab::parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(is, line)) throw std::runtime_error(std::string("vocab file: missing ") + what);
    return line;
  };
  if (next("header") != "#mhsum-bpe 1") throw std::runtime_error("vocab file: bad header line");
  {
    std::istringstream rs(next("reserved line"));
    std::string tag, tok;
    rs >> tag;
    std::vector<std::string> reserved;
    while (rs >> tok) reserved.push_back(tok);
    if (tag != "#reserved" || reserved != reserved_symbols()) {
      throw std::runtime_error("vocab file: reserved tokens do not match this build");
    }
  }
  auto count_after = [&](const char* tag) {
    std::istringstream cs(next(tag));
    std::string t;
    std::size_t n = 0;
    if (!(cs >> t >> n) || t != tag) throw std::runtime_error(std::string("vocab file: expected ") + tag);
    return n;
  };
  const auto n_alpha = count_after("#alphabet");
  std::vector<std::string> alphabet;
  for (std::size_t i = 0; i < n_alpha; ++i) alphabet.push_back(next("alphabet symbol"));
  const auto n_merges = count_after("#merges");
  std::vector<MergeRule> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    const auto l = next("merge rule");
    const auto sp = l.find(' ');
    if (sp == std::string::npos || l.find(' ', sp + 1) != std::string::npos) {
      throw std::runtime_error("vocab file: malformed merge rule '" + l + "'");
    }
    merges.emplace_back(l.substr(0, sp), l.substr(sp + 1));
  }
  return Vocab(std::move(alphabet), std::move(merges));
}

void Vocab::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocab: cannot write " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> split_utf8(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) ++word_counts[w];

  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, count] : word_counts) {
    auto chars = split_utf8(w);
    for (const auto& c : chars) {
      alphabet.insert(c);
      alphabet.insert(c + std::string(kEndOfWord));
    }
    chars.back() += kEndOfWord;
    words.emplace_back(std::move(chars), count);
  }
  const std::size_t base = kNumReserved + alphabet.size();
  if (target_size < base) {
    throw std::invalid_argument("train_bpe: target size " + std::to_string(target_size) +
                                " below reserved + base alphabet (" + std::to_string(base) + ")");
  }

  std::set<std::string> symbols(alphabet);
  std::vector<MergeRule> merges;
  std::size_t size = base;
  while (size < target_size) {
    std::map<MergeRule, std::size_t> pair_counts;
    for (const auto& [syms, count] : words)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pair_counts[{syms[i], syms[i + 1]}] += count;
    if (pair_counts.empty()) break;
    // std::map iterates pairs in lexicographic order, so the first maximum
    // wins ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;
    const MergeRule rule = best->first;
    for (auto& [syms, count] : words) apply_merge(syms, rule.first, rule.second);
    if (symbols.insert(rule.first + rule.second).second) ++size;
    merges.push_back(rule);
  }
  return Vocab(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(merges));
}

namespace {

// BPE over a run of known characters: repeatedly merges the lowest-ranked
// adjacent pair, which replays merges in learned order.
void encode_run(std::vector<std::string> syms, const Vocab& vocab, std::vector<int>& out) {
  while (syms.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto r = vocab.merge_rank(syms[i], syms[i + 1]);
      if (r && *r < best_rank) {
        best_rank = *r;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const auto left = syms[best_pos], right = syms[best_pos + 1];
    apply_merge(syms, left, right);
  }
  for (const auto& s : syms) out.push_back(*vocab.find(s));
}

}  // namespace

TokenSeq encode(std::string_view text, const Vocab& vocab) {
  TokenSeq seq;
  for (const auto& word : split_words(text)) {
    const auto chars = split_utf8(word);
    std::vector<std::string> run;
    for (std::size_t i = 0; i < chars.size(); ++i) {
      std::string sym = chars[i];
      if (i + 1 == chars.size()) sym += kEndOfWord;
      if (vocab.find(sym)) {
        run.push_back(std::move(sym));
      } else {
        if (!run.empty()) encode_run(std::move(run), vocab, seq.ids);
        run.clear();
        seq.ids.push_back(kUnk);
      }
    }
    if (!run.empty()) encode_run(std::move(run), vocab, seq.ids);
  }
  seq.structural_mask.assign(seq.ids.size(), false);
  return seq;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const auto& sym = vocab.symbol(id);
    if (Vocab::is_reserved(id)) continue;
    if (ends_with_eow(sym)) {
      out.append(sym, 0, sym.size() - kEndOfWord.size());
      out.push_back(' ');
    } else {
      out += sym;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab) { return decode(std::span<const int>(seq.ids), vocab); }

TokenSeq prepare_document(std::span<const std::string> sentences, const Vocab& vocab) {
  if (sentences.empty()) throw std::invalid_argument("prepare_document: no sentences");
  TokenSeq doc;
  for (const auto& s : sentences) {
    doc.sentence_starts.push_back(doc.ids.size());
    doc.ids.push_back(kCls);
    doc.structural_mask.push_back(true);
    const auto body = encode(s, vocab);
    doc.ids.insert(doc.ids.end(), body.ids.begin(), body.ids.end());
    doc.structural_mask.insert(doc.structural_mask.end(), body.ids.size(), false);
    doc.ids.push_back(kSep);
    doc.structural_mask.push_back(true);
  }
  return doc;
}

}  // namespace mhsum::text
