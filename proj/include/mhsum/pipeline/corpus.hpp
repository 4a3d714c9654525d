#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mhsum/util/kvfile.hpp"

namespace mhsum::pipeline {

/// Synthetic summarization corpus. A document's content words are drawn
/// without repetition from its topic's slice of a pseudo-word lexicon, so a
/// slice must hold sentences * max_words words. Exactly `markers` sentences
/// begin with the marker word; the reference summary is those sentences,
/// marker removed, in document order. With several topics the decoder tends to
/// settle on topic unigrams instead of copying, so one topic is the default.
struct CorpusConfig {
  std::size_t train_docs = 20000;
  std::size_t test_docs = 200;
  std::size_t sentences = 6;
  std::size_t min_words = 5;
  std::size_t max_words = 10;
  std::size_t markers = 2;
  std::size_t lexicon_size = 240;
  std::size_t topics = 1;
  std::string marker = "key";

  void validate() const;
  void write_kv(util::KeyValues& kv) const;
  static CorpusConfig from_kv(const util::KeyValues& kv);
};

struct DocumentPair {
  std::string doc_id;
  std::vector<std::string> sentences;
  std::vector<std::string> summary;
};

/// Summary sentences joined by single spaces.
std::string summary_text(const DocumentPair& doc);

struct Corpus {
  std::vector<std::string> lexicon;
  std::vector<DocumentPair> train;
  std::vector<DocumentPair> test;
};

/// Deterministic given (cfg, seed). Train ids are "train-NNNNN", test ids
/// "test-NNNNN".
Corpus gen_corpus(const CorpusConfig& cfg, std::uint64_t seed);

/// Pseudo-words of two or three consonant-vowel syllables, distinct, in
/// generation order.
std::vector<std::string> make_lexicon(std::size_t size, std::uint64_t seed);

std::string document_to_json(const DocumentPair& doc);
DocumentPair document_from_json(const std::string& line);
void write_documents(const std::filesystem::path& path, std::span<const DocumentPair> docs);
std::vector<DocumentPair> read_documents(const std::filesystem::path& path);

}  // namespace mhsum::pipeline
