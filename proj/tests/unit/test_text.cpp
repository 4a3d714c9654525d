#include <algorithm>
#include <random>

#include "doctest.h"
#include "mhsum/text/vocab.hpp"

using namespace mhsum::text;

namespace {

const std::vector<std::string> kCorpus{
    "the cat sat on the mat", "the dog sat on the log", "a cat and a dog", "cats and dogs sat together"};

}  // namespace

TEST_CASE("train_bpe first merge on a hand-counted corpus") {
  const std::vector<std::string> corpus{"aaab"};
  // Symbols a a a b</w>: pair (a,a) occurs twice, (a,b</w>) once.
  const Vocab v = train_bpe(corpus, kNumReserved + 4 + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == MergeRule{"a", "a"});
}

TEST_CASE("train_bpe size limits") {
  const std::vector<std::string> corpus{"aaab"};
  const std::size_t base = kNumReserved + 4;  // a, a</w>, b, b</w>
  CHECK(train_bpe(corpus, base).merges().empty());
  CHECK(train_bpe(corpus, base).size() == base);
  CHECK_THROWS_AS(train_bpe(corpus, base - 1), std::invalid_argument);
  CHECK_THROWS_AS(train_bpe(std::vector<std::string>{}, 100), std::invalid_argument);
  // Runs out of pairs before reaching a huge target.
  const Vocab big = train_bpe(corpus, 1000);
  CHECK(encode("aaab", big).ids.size() == 1);
}

TEST_CASE("train_bpe ties break on lexicographic pair order") {
  // (x,y) and (p,q) both occur once; (p,q) sorts first.
  const std::vector<std::string> corpus{"xy pq"};
  const Vocab v = train_bpe(corpus, kNumReserved + 8 + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == MergeRule{"p", "q</w>"});
}

TEST_CASE("vocab layout and determinism") {
  const Vocab a = train_bpe(kCorpus, 60);
  const Vocab b = train_bpe(kCorpus, 60);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.merges() == b.merges());
  CHECK(a.symbol(kPad) == "[PAD]");
  CHECK(a.symbol(kUnk) == "[UNK]");
  for (int id = 0; id < static_cast<int>(a.size()); ++id) CHECK(*a.find(a.symbol(id)) == id);
  const Vocab c = Vocab::parse(a.serialize());
  CHECK(c.serialize() == a.serialize());
  CHECK(c.size() == a.size());
  CHECK_THROWS(Vocab::parse("not a vocab\n"));
}

TEST_CASE("encode / decode") {
  const Vocab v = train_bpe(kCorpus, 80);
  CHECK(decode(encode("the cat sat", v), v) == "the cat sat");
  CHECK(encode("", v).empty());
  CHECK(decode(encode("", v), v).empty());

  const auto unk = encode("#", v);
  REQUIRE(unk.ids.size() == 1);
  CHECK(unk.ids[0] == kUnk);

  const std::vector<int> bad{static_cast<int>(v.size())};
  CHECK_THROWS_AS(decode(bad, v), std::out_of_range);
  const std::vector<int> with_structure{kCls, *v.find("a</w>"), kSep, kEos};
  CHECK(decode(with_structure, v) == "a");
}

TEST_CASE("round trip over random strings from the training charset") {
  const Vocab v = train_bpe(kCorpus, 70);
  std::string charset;
  for (const auto& line : kCorpus)
    for (char ch : line)
      if (ch != ' ' && charset.find(ch) == std::string::npos) charset.push_back(ch);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n_words = rng() % 6;
    std::string s;
    for (std::size_t w = 0; w < n_words; ++w) {
      if (w) s.push_back(' ');
      const std::size_t len = 1 + rng() % 7;
      for (std::size_t k = 0; k < len; ++k) s.push_back(charset[rng() % charset.size()]);
    }
    const auto enc = encode(s, v);
    for (int id : enc.ids) CHECK(id != kUnk);
    CHECK(decode(enc, v) == s);
  }
}

TEST_CASE("prepare_document") {
  const std::vector<std::string> corpus{"a b c"};
  const Vocab v = train_bpe(corpus, kNumReserved + 6);  // alphabet only
  const int a = *v.find("a</w>"), b = *v.find("b</w>"), c = *v.find("c</w>");

  const std::vector<std::string> sents{"a b", "c"};
  const TokenSeq doc = prepare_document(sents, v);
  CHECK(doc.ids == std::vector<int>{kCls, a, b, kSep, kCls, c, kSep});
  CHECK(doc.sentence_starts == std::vector<std::size_t>{0, 4});
  CHECK(doc.structural_mask == std::vector<bool>{true, false, false, true, true, false, true});

  const std::vector<std::string> one{"a"};
  const auto single = prepare_document(one, v);
  CHECK(std::count(single.ids.begin(), single.ids.end(), kCls) == 1);
  CHECK_THROWS_AS(prepare_document(std::vector<std::string>{}, v), std::invalid_argument);
}

TEST_CASE("prepare_document annotations stay consistent") {
  const Vocab v = train_bpe(kCorpus, 70);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> sents;
    const std::size_t k = 1 + rng() % 8;
    for (std::size_t i = 0; i < k; ++i) sents.push_back(kCorpus[rng() % kCorpus.size()]);
    const auto doc = prepare_document(sents, v);
    CHECK(static_cast<std::size_t>(std::count(doc.ids.begin(), doc.ids.end(), kCls)) == k);
    CHECK(doc.sentence_starts.size() == k);
    for (auto s : doc.sentence_starts) CHECK(doc.ids[s] == kCls);
    for (std::size_t i = 0; i < doc.size(); ++i)
      CHECK(doc.structural_mask[i] == (doc.ids[i] == kCls || doc.ids[i] == kSep));
  }
}
