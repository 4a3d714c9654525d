#include "mhsum/pipeline/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace mhsum::pipeline {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", prefix, i);
  return buf;
}

DocumentPair make_document(const CorpusConfig& cfg, std::span<const std::string> topic_words, std::mt19937_64& rng,
                           std::string id) {
  std::uniform_int_distribution<std::size_t> len(cfg.min_words, cfg.max_words);
  // Words never repeat within a document: walk a shuffled copy of the topic.
  std::vector<std::size_t> pool(topic_words.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t next = 0;
  std::vector<std::size_t> order(cfg.sentences);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> marked(cfg.sentences, false);
  for (std::size_t i = 0; i < cfg.markers; ++i) marked[order[i]] = true;

  DocumentPair doc;
  doc.doc_id = std::move(id);
  for (std::size_t s = 0; s < cfg.sentences; ++s) {
    std::vector<std::string> words;
    const std::size_t n = len(rng);
    for (std::size_t w = 0; w < n; ++w) words.push_back(topic_words[pool[next++]]);
    if (marked[s]) {
      doc.summary.push_back(join(words));
      words.insert(words.begin(), cfg.marker);
    }
    doc.sentences.push_back(join(words));
  }
  return doc;
}

}  // namespace

void CorpusConfig::validate() const {
  if (sentences == 0) throw std::invalid_argument("corpus: need at least one sentence per document");
  if (markers > sentences) {
    throw std::invalid_argument("corpus: " + std::to_string(markers) + " marker sentences exceed " +
                                std::to_string(sentences) + " sentences per document");
  }
  if (markers == 0) throw std::invalid_argument("corpus: at least one marker sentence is required");
  if (min_words == 0 || min_words > max_words) throw std::invalid_argument("corpus: invalid sentence length range");
  if (topics == 0 || lexicon_size < topics) throw std::invalid_argument("corpus: lexicon smaller than topic count");
  if (lexicon_size < 200) throw std::invalid_argument("corpus: lexicon needs at least 200 content words");
  if (lexicon_size / topics < sentences * max_words) {
    throw std::invalid_argument("corpus: each topic needs at least sentences * max_words = " +
                                std::to_string(sentences * max_words) + " words, got " +
                                std::to_string(lexicon_size / topics));
  }
  if (marker.empty() || marker.find(' ') != std::string::npos) throw std::invalid_argument("corpus: bad marker word");
}

void CorpusConfig::write_kv(util::KeyValues& kv) const {
  kv["corpus.train_docs"] = std::to_string(train_docs);
  kv["corpus.test_docs"] = std::to_string(test_docs);
  kv["corpus.sentences"] = std::to_string(sentences);
  kv["corpus.min_words"] = std::to_string(min_words);
  kv["corpus.max_words"] = std::to_string(max_words);
  kv["corpus.markers"] = std::to_string(markers);
  kv["corpus.lexicon_size"] = std::to_string(lexicon_size);
  kv["corpus.topics"] = std::to_string(topics);
  kv["corpus.marker"] = marker;
}

CorpusConfig CorpusConfig::from_kv(const util::KeyValues& kv) {
  CorpusConfig c;
  auto sz = [&](const char* key, std::size_t fallback) {
    const auto v = util::kv_int(kv, key, static_cast<long long>(fallback));
    if (v < 0) throw std::invalid_argument(std::string("config key '") + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.train_docs = sz("corpus.train_docs", c.train_docs);
  c.test_docs = sz("corpus.test_docs", c.test_docs);
  c.sentences = sz("corpus.sentences", c.sentences);
  c.min_words = sz("corpus.min_words", c.min_words);
  c.max_words = sz("corpus.max_words", c.max_words);
  c.markers = sz("corpus.markers", c.markers);
  c.lexicon_size = sz("corpus.lexicon_size", c.lexicon_size);
  c.topics = sz("corpus.topics", c.topics);
  c.marker = util::kv_string(kv, "corpus.marker", c.marker);
  return c;
}

std::vector<std::string> make_lexicon(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> c(0, kConsonants.size() - 1), v(0, kVowels.size() - 1), syl(2, 3);
  std::vector<std::string> out;
  std::set<std::string> seen;
  while (out.size() < size) {
    std::string w;
    const std::size_t n = syl(rng);
    for (std::size_t i = 0; i < n; ++i) {
      w += kConsonants[c(rng)];
      w += kVowels[v(rng)];
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

Corpus gen_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus corpus;
  corpus.lexicon = make_lexicon(cfg.lexicon_size, seed);
  const std::size_t per_topic = cfg.lexicon_size / cfg.topics;
  std::vector<std::vector<std::string>> topics(cfg.topics);
  for (std::size_t i = 0; i < per_topic * cfg.topics; ++i) topics[i % cfg.topics].push_back(corpus.lexicon[i]);

  std::mt19937_64 rng(seed ^ 0x5eedc0de5eedc0deULL);
  std::uniform_int_distribution<std::size_t> topic(0, cfg.topics - 1);
  for (std::size_t i = 0; i < cfg.train_docs; ++i)
    corpus.train.push_back(make_document(cfg, topics[topic(rng)], rng, make_id("train", i)));
  for (std::size_t i = 0; i < cfg.test_docs; ++i)
    corpus.test.push_back(make_document(cfg, topics[topic(rng)], rng, make_id("test", i)));
  return corpus;
}

std::string summary_text(const DocumentPair& doc) { return join(doc.summary); }

std::string document_to_json(const DocumentPair& doc) {
  nlohmann::ordered_json j;
  j["doc_id"] = doc.doc_id;
  j["sentences"] = doc.sentences;
  j["summary"] = doc.summary;
  return j.dump();
}

DocumentPair document_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  DocumentPair d;
  d.doc_id = j.at("doc_id").get<std::string>();
  d.sentences = j.at("sentences").get<std::vector<std::string>>();
  d.summary = j.at("summary").get<std::vector<std::string>>();
  return d;
}

void write_documents(const std::filesystem::path& path, std::span<const DocumentPair> docs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : docs) out << document_to_json(d) << '\n';
}

std::vector<DocumentPair> read_documents(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DocumentPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(document_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mhsum::pipeline
