#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mhsum::text {

/// Reserved IDs; they occupy the lowest indices of every vocabulary.
enum SpecialId : int { kPad = 0, kCls = 1, kSep = 2, kBos = 3, kEos = 4, kUnk = 5 };
inline constexpr int kNumReserved = 6;

/// Suffix marking the last symbol of a word.
inline constexpr std::string_view kEndOfWord = "</w>";

using MergeRule = std::pair<std::string, std::string>;

/// Token sequence with sentence and structural annotations.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::size_t> sentence_starts;
  std::vector<bool> structural_mask;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

/// BPE vocabulary. IDs: reserved tokens, then the base alphabet (every
/// character in plain and word-final form, sorted), then one symbol per merge
/// in learned order.
class Vocab {
 public:
  Vocab(std::vector<std::string> alphabet, std::vector<MergeRule> merges);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(int id) const;
  std::optional<int> find(std::string_view symbol) const;
  const std::vector<MergeRule>& merges() const { return merges_; }
  std::size_t alphabet_size() const { return alphabet_size_; }
  /// Rank of a merge in learned order, if the pair was ever merged.
  std::optional<std::size_t> merge_rank(const std::string& left, const std::string& right) const;

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }
  bool is_word_final(int id) const;

  /// Text form: reserved header, alphabet, then one merge rule per line.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  std::vector<MergeRule> merges_;
  std::unordered_map<std::string, std::size_t> merge_ranks_;
  std::size_t alphabet_size_ = 0;
};

const std::vector<std::string>& reserved_symbols();

/// Splits UTF-8 text into code points (invalid bytes become single units).
std::vector<std::string> split_utf8(std::string_view word);
std::vector<std::string> split_words(std::string_view text);

/// Greedy BPE: merges the most frequent adjacent pair until the vocabulary
/// reaches `target_size` or no pair remains. Ties go to the lexicographically
/// smallest pair. Merges never cross whitespace.
Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_size);

TokenSeq encode(std::string_view text, const Vocab& vocab);
std::string decode(std::span<const int> ids, const Vocab& vocab);
std::string decode(const TokenSeq& seq, const Vocab& vocab);

/// CLS s1 SEP CLS s2 SEP ... with sentence_starts on each CLS.
TokenSeq prepare_document(std::span<const std::string> sentences, const Vocab& vocab);

}  // namespace mhsum::text
