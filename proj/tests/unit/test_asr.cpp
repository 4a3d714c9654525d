#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "mhsum/asr/channel.hpp"

using namespace mhsum;
using namespace mhsum::asr;

namespace {

// 60 distinct words, merged all the way so each word is one token.
struct Fixture {
  std::vector<std::string> words;
  text::Vocab vocab;

  Fixture() : vocab(make()) {}

  text::Vocab make() {
    const std::string cons = "bdfgklmnprst", vow = "aeiou";
    for (std::size_t i = 0; words.size() < 60; ++i)
      words.push_back(std::string{cons[i % cons.size()], vow[(i / cons.size()) % vow.size()],
                                  cons[(i * 7 + 3) % cons.size()]});
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    std::string line;
    for (const auto& w : words) line += w + " ";
    return text::train_bpe(std::vector<std::string>{line}, 10000);
  }

  text::TokenSeq random_doc(std::mt19937_64& rng, std::size_t sentences, std::size_t words_per) const {
    std::vector<std::string> sents;
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string line;
      for (std::size_t w = 0; w < words_per; ++w) line += (w ? " " : "") + words[rng() % words.size()];
      sents.push_back(line);
    }
    return text::prepare_document(sents, vocab);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

std::size_t content_positions(const text::TokenSeq& s) {
  return static_cast<std::size_t>(std::count(s.structural_mask.begin(), s.structural_mask.end(), false));
}

// Plain recursive edit distance, exponential but fine for short inputs.
std::size_t brute_edit(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
                       std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = brute_edit(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  return std::min({sub, brute_edit(a, i + 1, b, j) + 1, brute_edit(a, i, b, j + 1) + 1});
}

}  // namespace

TEST_CASE("every fixture word is a single token") {
  const auto& f = fixture();
  for (const auto& w : f.words) CHECK(text::encode(w, f.vocab).size() == 1);
}

TEST_CASE("channel_corrupt extremes") {
  const auto& f = fixture();
  std::mt19937_64 rng(1);
  const auto ref = f.random_doc(rng, 4, 6);
  SUBCASE("sub_rate 0 passes the reference through") {
    const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.0, .seed = 3});
    CHECK(out.emitted.ids == ref.ids);
    CHECK(wer(out.emitted.ids, ref.ids, f.vocab) == 0.0);
  }
  SUBCASE("sub_rate 1 changes every content position") {
    const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 1.0, .seed = 3});
    for (std::size_t m = 0; m < ref.size(); ++m) {
      if (ref.structural_mask[m]) CHECK(out.emitted.ids[m] == ref.ids[m]);
      else CHECK(out.emitted.ids[m] != ref.ids[m]);
    }
    CHECK(out.substitutions == content_positions(ref));
  }
  SUBCASE("rows are distributions and structure passes through") {
    const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.3, .seed = 4});
    for (std::size_t m = 0; m < ref.size(); ++m) {
      const auto row = out.posteriors.row(m);
      double s = 0.0;
      for (double v : row) s += v;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      CHECK(best == out.emitted.ids[m]);
      CHECK(out.posteriors.structural[m] == ref.structural_mask[m]);
    }
  }
  SUBCASE("invalid specs") {
    CHECK_THROWS_AS(channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 1.5}), std::invalid_argument);
    CHECK_THROWS_AS(channel_corrupt(ref, f.vocab, ChannelSpec{.confusion_sharpness = 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(channel_corrupt(text::TokenSeq{}, f.vocab, ChannelSpec{}), std::invalid_argument);
  }
}

TEST_CASE("channel needs at least 11 content tokens") {
  const std::vector<std::string> corpus{"a b c d e f g h i j"};
  const auto small = text::train_bpe(corpus, 10000);  // 10 word tokens + 10 inner letters
  const auto ref = text::prepare_document(corpus, small);
  CHECK_THROWS_AS(channel_corrupt(ref, small, ChannelSpec{}), std::invalid_argument);
}

TEST_CASE("substitution rate calibration on 10k positions") {
  const auto& f = fixture();
  std::mt19937_64 rng(2);
  std::size_t positions = 0, subs = 0, word_errors = 0, ref_words = 0;
  for (int d = 0; positions < 10000; ++d) {
    const auto ref = f.random_doc(rng, 5, 8);
    const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.1, .seed = derive_seed(7, std::to_string(d))});
    positions += content_positions(ref);
    subs += out.substitutions;
    const auto e = word_edits(text::split_words(text::decode(out.emitted, f.vocab)),
                              text::split_words(text::decode(ref, f.vocab)));
    word_errors += e.errors;
    ref_words += e.ref_words;
  }
  const double rate = static_cast<double>(subs) / static_cast<double>(positions);
  CHECK(std::abs(rate - 0.1) <= 0.01);
  CHECK(std::abs(static_cast<double>(word_errors) / static_cast<double>(ref_words) - 0.1) <= 0.01);
}

TEST_CASE("reference is recoverable from the top-10 at every position") {
  const auto& f = fixture();
  std::mt19937_64 rng(3);
  for (int d = 0; d < 50; ++d) {
    const auto ref = f.random_doc(rng, 4, 7);
    const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.5, .seed = static_cast<std::uint64_t>(d)});
    const auto set = generate_nbest_aligned(out, 10);
    for (std::size_t m = 0; m < ref.size(); ++m) {
      bool found = false;
      for (std::size_t h = 0; h < 10; ++h) found = found || set.tokens[h][m] == ref.ids[m];
      CHECK(found);
    }
  }
}

TEST_CASE("generate_nbest_aligned") {
  const auto& f = fixture();
  std::mt19937_64 rng(4);
  const auto ref = f.random_doc(rng, 3, 6);
  const auto out = channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.3, .seed = 9});

  SUBCASE("n = 1 is the 1-best") {
    const auto one = generate_nbest_aligned(out, 1, "d");
    REQUIRE(one.n() == 1);
    CHECK(one.tokens[0] == out.emitted.ids);
    for (std::size_t m = 0; m < ref.size(); ++m)
      CHECK(one.posteriors[0][m] == out.posteriors.at(m, static_cast<std::size_t>(out.emitted.ids[m])));
  }
  SUBCASE("alignment and ordering invariants") {
    for (std::size_t n = 1; n <= 10; ++n) {
      const auto set = generate_nbest_aligned(out, n);
      CHECK(set.aligned());
      CHECK(set.tokens[0] == out.emitted.ids);
      for (std::size_t m = 0; m < ref.size(); ++m) {
        for (std::size_t h = 0; h < n; ++h) {
          CHECK(set.posteriors[h][m] > 0.0);
          CHECK(set.posteriors[h][m] <= 1.0);
          if (h > 0) CHECK(set.posteriors[h][m] <= set.posteriors[h - 1][m]);
          if (ref.structural_mask[m]) {
            CHECK(set.tokens[h][m] == ref.ids[m]);
            CHECK(set.posteriors[h][m] == 1.0);
          }
        }
      }
    }
  }
  SUBCASE("n out of range") {
    CHECK_THROWS_AS(generate_nbest_aligned(out, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_nbest_aligned(out, 11), std::invalid_argument);
  }
}

TEST_CASE("generate_nbest_aligned on a hand-built row") {
  // Tokens x=0, y=1, z=2 with posteriors 0.6, 0.3, 0.1.
  ChannelOutput out;
  out.posteriors.rows = 1;
  out.posteriors.cols = 3;
  out.posteriors.values = {0.6, 0.3, 0.1};
  out.posteriors.structural = {false};
  out.emitted.ids = {0};
  const auto set = generate_nbest_aligned(out, 2);
  CHECK(set.tokens == std::vector<std::vector<int>>{{0}, {1}});
  CHECK(set.posteriors == std::vector<std::vector<double>>{{0.6}, {0.3}});
  CHECK_THROWS_AS(generate_nbest_aligned(out, 4), std::invalid_argument);
}

TEST_CASE("1-best WER grows with sub_rate") {
  const auto& f = fixture();
  double previous = -1.0;
  for (double rate : {0.0, 0.05, 0.1, 0.2, 0.4}) {
    std::mt19937_64 rng(5);
    std::size_t errors = 0, words = 0;
    for (int d = 0; d < 1000; ++d) {
      const auto ref = f.random_doc(rng, 2, 5);
      const auto out =
          channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = rate, .seed = derive_seed(1, std::to_string(d))});
      const auto e = word_edits(text::split_words(text::decode(out.emitted, f.vocab)),
                                text::split_words(text::decode(ref, f.vocab)));
      errors += e.errors;
      words += e.ref_words;
    }
    const double w = static_cast<double>(errors) / static_cast<double>(words);
    CHECK(w >= previous);
    previous = w;
  }
}

TEST_CASE("channel output is deterministic under a fixed seed") {
  const auto& f = fixture();
  std::mt19937_64 rng(6);
  const auto ref = f.random_doc(rng, 4, 6);
  const ChannelSpec spec{.sub_rate = 0.2, .seed = 42};
  const auto a = hypothesis_to_json(generate_nbest_aligned(channel_corrupt(ref, f.vocab, spec), 10, "doc"));
  const auto b = hypothesis_to_json(generate_nbest_aligned(channel_corrupt(ref, f.vocab, spec), 10, "doc"));
  CHECK(a == b);
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("hypothesis JSON keeps full precision") {
  const auto& f = fixture();
  std::mt19937_64 rng(7);
  const auto ref = f.random_doc(rng, 2, 5);
  const auto set = generate_nbest_aligned(channel_corrupt(ref, f.vocab, ChannelSpec{.sub_rate = 0.3, .seed = 1}), 5, "x-1");
  const auto line = hypothesis_to_json(set);
  CHECK(line.find("\"doc_id\"") != std::string::npos);
  const auto back = hypothesis_from_json(line);
  CHECK(back.doc_id == "x-1");
  CHECK(back.tokens == set.tokens);
  for (std::size_t h = 0; h < set.n(); ++h)
    for (std::size_t m = 0; m < ref.size(); ++m) CHECK(back.posteriors[h][m] == set.posteriors[h][m]);
  CHECK_THROWS(hypothesis_from_json(R"({"doc_id":"a","n":2,"tokens":[[1]],"posteriors":[[1.0]]})"));
}

TEST_CASE("unaligned hypotheses") {
  const auto& f = fixture();
  std::mt19937_64 rng(8);
  const auto ref = f.random_doc(rng, 4, 8);
  const auto set = generate_unaligned(ref, f.vocab, ChannelSpec{.sub_rate = 0.1, .seed = 2, .indel_rate = 0.2}, 5);
  CHECK(set.n() == 5);
  CHECK_FALSE(set.aligned());
  for (std::size_t h = 0; h < 5; ++h) {
    CHECK(set.tokens[h].size() == set.posteriors[h].size());
    CHECK(std::count(set.tokens[h].begin(), set.tokens[h].end(), text::kCls) == 4);
  }
}

TEST_CASE("wer") {
  using W = std::vector<std::string>;
  CHECK(wer(W{"a", "b", "c"}, W{"a", "b", "c"}) == 0.0);
  CHECK(wer(W{"a", "x", "c"}, W{"a", "b", "c"}) == 1.0 / 3.0);
  CHECK(wer(W{"b", "c", "d", "e"}, W{"a", "b", "c", "d"}) == 2.0 / 4.0);
  CHECK(wer(W{}, W{"a", "b"}) == 1.0);
  CHECK(wer(W{"a", "b", "c"}, W{"a"}) == 2.0);
  CHECK_THROWS_AS(wer(W{"a"}, W{}), std::invalid_argument);

  std::mt19937_64 rng(9);
  const W alphabet{"a", "b", "c"};
  for (int trial = 0; trial < 300; ++trial) {
    W h(rng() % 6), r(1 + rng() % 6);
    for (auto& w : h) w = alphabet[rng() % 3];
    for (auto& w : r) w = alphabet[rng() % 3];
    CHECK(word_edits(h, r).errors == brute_edit(r, 0, h, 0));
  }
}
