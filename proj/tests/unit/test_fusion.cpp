#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mhsum/fusion/fusion.hpp"
#include "mhsum/num/gradcheck.hpp"
#include "mhsum/num/ops.hpp"

using namespace mhsum;
using fusion::FusionParams;
using fusion::InitMode;
using num::Tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(r * c);
  for (auto& v : d) v = u(rng);
  return Tensor::matrix(r, c, std::move(d));
}

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa) * std::sqrt(bb), num::kCosineEps);
}

std::vector<double> softmax_vec(std::vector<double> x) {
  double z = 0;
  for (auto& v : x) {
    v = std::exp(v);
    z += v;
  }
  for (auto& v : x) v /= z;
  return x;
}

// Loop-level evaluation of the two-step fusion, written without the tensor
// library: per head, align every hypothesis to the projected 1-best, attend
// across the aligned vectors, concatenate heads, project.
struct RefFusion {
  Mat fused;
  std::vector<Mat> alpha;  // per head, M x N
};

RefFusion reference_fuse(const std::vector<Mat>& hyps, const FusionParams& p) {
  const std::size_t m = hyps[0].size();
  const std::size_t n_hyp = hyps.size();
  RefFusion out;
  Mat concat(m);
  for (std::size_t h = 0; h < p.num_heads(); ++h) {
    const Mat wq = to_mat(p.heads[h].query), wk = to_mat(p.heads[h].key), wv = to_mat(p.heads[h].value);
    const Mat q = mm(hyps[0], wq);
    std::vector<Mat> aligned;
    for (const auto& en : hyps) {
      const Mat k = mm(en, wk), v = mm(en, wv);
      Mat a(m, std::vector<double>(v[0].size(), 0.0));
      for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> s(k.size());
        for (std::size_t j = 0; j < k.size(); ++j) s[j] = cosine(q[i], k[j]);
        const auto w = softmax_vec(s);
        for (std::size_t j = 0; j < k.size(); ++j)
          for (std::size_t c = 0; c < v[0].size(); ++c) a[i][c] += w[j] * v[j][c];
      }
      aligned.push_back(std::move(a));
    }
    Mat alpha(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> s(n_hyp);
      for (std::size_t n = 0; n < n_hyp; ++n) s[n] = cosine(q[i], aligned[n][i]);
      alpha[i] = softmax_vec(s);
      std::vector<double> head(aligned[0][0].size(), 0.0);
      for (std::size_t n = 0; n < n_hyp; ++n)
        for (std::size_t c = 0; c < head.size(); ++c) head[c] += alpha[i][n] * aligned[n][i][c];
      concat[i].insert(concat[i].end(), head.begin(), head.end());
    }
    out.alpha.push_back(std::move(alpha));
  }
  out.fused = mm(concat, to_mat(p.output));
  return out;
}

Tensor weighted_sum(const Tensor& out, const Tensor& probe) { return num::sum(num::mul(out, probe)); }

}  // namespace

TEST_CASE("identity init sets projections to I and output to the stacked head mean") {
  const auto p = fusion::init_fusion_params(3, 4, InitMode::kIdentity);
  REQUIRE(p.num_heads() == 3);
  for (const auto& h : p.heads)
    for (const auto* t : {&h.query, &h.key, &h.value})
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK((*t)(i, j) == (i == j ? 1.0 : 0.0));
  REQUIRE(p.output.shape() == num::Shape{12, 4});
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.output(r, c) == (r % 4 == c ? 1.0 / 3.0 : 0.0));
  CHECK_THROWS_AS(fusion::init_fusion_params(2, 4, InitMode::kIdentity, 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(fusion::init_fusion_params(0, 4, InitMode::kIdentity), std::invalid_argument);
}

TEST_CASE("random init is deterministic per seed and finite") {
  const auto a = fusion::init_fusion_params(2, 6, InitMode::kRandom, 11);
  const auto b = fusion::init_fusion_params(2, 6, InitMode::kRandom, 11);
  const auto c = fusion::init_fusion_params(2, 6, InitMode::kRandom, 12);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].numel(); ++j) {
      CHECK(pa[i].data()[j] == pb[i].data()[j]);
      CHECK(std::isfinite(pa[i].data()[j]));
      differs = differs || pa[i].data()[j] != pc[i].data()[j];
    }
  }
  CHECK(differs);
  const auto narrow = fusion::init_fusion_params(2, 6, InitMode::kRandom, 1, 3);
  CHECK(narrow.head_dim() == 3);
  CHECK(narrow.output.shape() == num::Shape{6, 6});
}

TEST_CASE("named records round trip through assign") {
  const auto src = fusion::init_fusion_params(2, 5, InitMode::kRandom, 3);
  auto dst = fusion::init_fusion_params(2, 5, InitMode::kIdentity);
  const auto records = src.named();
  CHECK(records.front().first == "fuse.h0.Wq");
  CHECK(records.back().first == "fuse.Wo");
  dst.assign(records);
  const auto a = src.parameters(), b = dst.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].numel(); ++j) CHECK(a[i].data()[j] == b[i].data()[j]);
  auto missing = records;
  missing.pop_back();
  CHECK_THROWS(dst.assign(missing));
}

TEST_CASE("confidence embedding") {
  std::mt19937_64 rng(5);
  const Tensor e = random_matrix(rng, 3, 4);
  const std::vector<double> p{0.2, 0.9, 1.0};

  SUBCASE("zero initialization is the identity") {
    const Tensor out = fusion::confidence_embed(e, p, fusion::ConfidenceEmbed::zeros(4));
    for (std::size_t i = 0; i < e.numel(); ++i) CHECK(out.data()[i] == e.data()[i]);
  }
  SUBCASE("unit confidence adds the weight") {
    auto ce = fusion::ConfidenceEmbed::zeros(4);
    const std::vector<double> w{0.5, -1.0, 2.0, 0.25};
    std::copy(w.begin(), w.end(), ce.weight.mutable_data().begin());
    const std::vector<double> ones(3, 1.0);
    const Tensor out = fusion::confidence_embed(e, ones, ce);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) CHECK(out(r, c) == doctest::Approx(e(r, c) + w[c]).epsilon(1e-15));
  }
  SUBCASE("hand example") {
    const Tensor e1 = Tensor::matrix(1, 2, {2.0, 2.0});
    fusion::ConfidenceEmbed ce{Tensor::matrix(1, 2, {1.0, 0.0}), Tensor::matrix(1, 2, {0.0, 1.0})};
    const std::vector<double> half{0.5};
    const Tensor out = fusion::confidence_embed(e1, half, ce);
    CHECK(out(0, 0) == doctest::Approx(2.5));
    CHECK(out(0, 1) == doctest::Approx(3.0));
  }
  SUBCASE("errors") {
    const auto ce = fusion::ConfidenceEmbed::zeros(4);
    const std::vector<double> short_p{0.5, 0.5};
    CHECK_THROWS_AS(fusion::confidence_embed(e, short_p, ce), num::DimensionError);
    const std::vector<double> zero_p{0.5, 0.0, 0.5};
    CHECK_THROWS_AS(fusion::confidence_embed(e, zero_p, ce), std::invalid_argument);
  }
}

TEST_CASE("posterior fusion") {
  std::mt19937_64 rng(6);
  SUBCASE("single hypothesis with unit posterior is the identity") {
    const std::vector<Tensor> e{random_matrix(rng, 4, 3)};
    const Tensor out = fusion::posterior_fuse(e, Tensor::full({1, 4}, 1.0));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == e[0].data()[i]);
  }
  SUBCASE("identical tokens with weights summing to one return the shared embedding") {
    const Tensor shared = random_matrix(rng, 3, 5);
    const std::vector<Tensor> e{shared, shared, shared};
    const Tensor p = Tensor::matrix(3, 3, {0.5, 0.2, 0.6, 0.3, 0.7, 0.1, 0.2, 0.1, 0.3});
    const Tensor out = fusion::posterior_fuse(e, p);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(shared.data()[i]).epsilon(1e-14));
  }
  SUBCASE("hand example") {
    const std::vector<Tensor> e{Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {-1.0})};
    const Tensor out = fusion::posterior_fuse(e, Tensor::matrix(2, 1, {0.7, 0.3}));
    CHECK(out.item() == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("raw weights by default, renormalized on request") {
    const std::vector<Tensor> e{Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {3.0})};
    const Tensor p = Tensor::matrix(2, 1, {0.2, 0.2});
    CHECK(fusion::posterior_fuse(e, p).item() == doctest::Approx(0.8));
    CHECK(fusion::posterior_fuse(e, p, true).item() == doctest::Approx(2.0));
  }
  SUBCASE("unaligned input is rejected") {
    const std::vector<Tensor> e{random_matrix(rng, 3, 2), random_matrix(rng, 4, 2)};
    CHECK_THROWS_AS(fusion::posterior_fuse(e, Tensor::full({2, 3}, 0.5)), num::DimensionError);
    const std::vector<Tensor> ok{random_matrix(rng, 3, 2), random_matrix(rng, 3, 2)};
    CHECK_THROWS_AS(fusion::posterior_fuse(ok, Tensor::full({2, 4}, 0.5)), num::DimensionError);
    CHECK_THROWS_AS(fusion::posterior_fuse(ok, Tensor::zeros({2, 3})), std::invalid_argument);
  }
}

TEST_CASE("alignment of single rows and identical rows") {
  const auto p = fusion::init_fusion_params(1, 3, InitMode::kIdentity);
  const Tensor e1 = Tensor::matrix(1, 3, {0.3, -0.2, 0.9});
  const Tensor en = Tensor::matrix(1, 3, {1.5, 0.1, -0.4});
  const auto a = fusion::align_hypothesis(e1, en, p, 0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(a.aligned(0, c) == doctest::Approx(en(0, c)).epsilon(1e-15));

  const Tensor rep = Tensor::matrix(4, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  const auto b = fusion::align_hypothesis(e1, rep, p, 0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(b.aligned(0, c) == doctest::Approx(rep(0, c)).epsilon(1e-14));
  CHECK_THROWS_AS(fusion::align_hypothesis(e1, en, p, 1), std::out_of_range);
}

TEST_CASE("two-by-two alignment matches hand evaluation") {
  // q rows (1,0) and (0,1); keys (1,1) and (1,-1): every cosine is +-1/sqrt2.
  const auto p = fusion::init_fusion_params(1, 2, InitMode::kIdentity);
  const Tensor e1 = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor en = Tensor::matrix(2, 2, {1, 1, 1, -1});
  const auto a = fusion::align_hypothesis(e1, en, p, 0);
  const double s = 1.0 / std::sqrt(2.0);
  const double w_same = std::exp(s) / (std::exp(s) + std::exp(-s));
  // row 0: cos((1,0),(1,1)) = s, cos((1,0),(1,-1)) = s -> uniform
  CHECK(a.weights(0, 0) == doctest::Approx(0.5));
  CHECK(a.aligned(0, 0) == doctest::Approx(1.0));
  CHECK(a.aligned(0, 1) == doctest::Approx(0.0));
  // row 1: cos((0,1),(1,1)) = s, cos((0,1),(1,-1)) = -s
  CHECK(a.weights(1, 0) == doctest::Approx(w_same));
  CHECK(a.aligned(1, 0) == doctest::Approx(1.0));
  CHECK(a.aligned(1, 1) == doctest::Approx(w_same - (1.0 - w_same)));
}

TEST_CASE("alignment handles different lengths and rows sum to one") {
  std::mt19937_64 rng(7);
  const auto p = fusion::init_fusion_params(2, 4, InitMode::kRandom, 9);
  for (std::size_t mn : {1u, 3u, 7u}) {
    const auto a = fusion::align_hypothesis(random_matrix(rng, 5, 4), random_matrix(rng, mn, 4), p, 1);
    CHECK(a.aligned.shape() == num::Shape{5, 4});
    CHECK(a.weights.shape() == num::Shape{5, mn});
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < mn; ++c) s += a.weights(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("cosine alignment weights are invariant to scaling a hypothesis") {
  std::mt19937_64 rng(8);
  const auto p = fusion::init_fusion_params(1, 4, InitMode::kRandom, 10);
  const Tensor e1 = random_matrix(rng, 4, 4);
  const Tensor en = random_matrix(rng, 6, 4);
  const auto a = fusion::align_hypothesis(e1, en, p, 0);
  const auto b = fusion::align_hypothesis(e1, num::scale(en, 3.7), p, 0);
  for (std::size_t i = 0; i < a.weights.numel(); ++i)
    CHECK(a.weights.data()[i] == doctest::Approx(b.weights.data()[i]).epsilon(1e-12));
  CHECK(b.aligned(0, 0) == doctest::Approx(3.7 * a.aligned(0, 0)).epsilon(1e-12));
}

TEST_CASE("attention fusion matches a loop-level evaluation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t b = 3 + seed % 3;
    const auto p = seed % 2 == 0 ? fusion::init_fusion_params(1 + seed % 4, b, InitMode::kIdentity)
                                 : fusion::init_fusion_params(1 + seed % 4, b, InitMode::kRandom, seed, b - 1);
    std::vector<Tensor> hyps;
    std::vector<Mat> ref_hyps;
    const std::size_t n = 1 + seed % 5;
    for (std::size_t i = 0; i < n; ++i) {
      hyps.push_back(random_matrix(rng, i == 0 ? 5 : 3 + (seed + i) % 5, b));
      ref_hyps.push_back(to_mat(hyps.back()));
    }
    const auto got = fusion::attention_fuse(hyps, p);
    const auto want = reference_fuse(ref_hyps, p);
    REQUIRE(got.fused.shape() == num::Shape{5, b});
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < b; ++c) CHECK(got.fused(r, c) == doctest::Approx(want.fused[r][c]).epsilon(1e-12));
    for (std::size_t h = 0; h < p.num_heads(); ++h)
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t k = 0; k < n; ++k)
          CHECK(got.head_weights[h](r, k) == doctest::Approx(want.alpha[h][r][k]).epsilon(1e-12));
    const auto pw = got.position_weights(2);
    REQUIRE(pw.size() == p.num_heads() * n);
    CHECK(pw.back() == got.head_weights.back()(2, n - 1));
  }
}

TEST_CASE("two hypotheses, two dims: hand-computed fusion") {
  // Eq. 9-11 by hand with identity projections.
  const auto p = fusion::init_fusion_params(1, 2, InitMode::kIdentity);
  const Tensor e1 = Tensor::matrix(1, 2, {1, 0});
  const Tensor e2 = Tensor::matrix(1, 2, {0, 2});
  const std::vector<Tensor> hyps{e1, e2};
  const auto out = fusion::attention_fuse(hyps, p);
  // singleton alignments: ẽ1 = (1,0), ẽ2 = (0,2); cosines with q=(1,0) are 1 and 0.
  const double a1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(out.head_weights[0](0, 0) == doctest::Approx(a1));
  CHECK(out.fused(0, 0) == doctest::Approx(a1));
  CHECK(out.fused(0, 1) == doctest::Approx(2.0 * (1.0 - a1)));
}

TEST_CASE("identical hypotheses give uniform weights and the self-alignment") {
  std::mt19937_64 rng(12);
  const auto p = fusion::init_fusion_params(1, 4, InitMode::kIdentity);
  const Tensor e1 = random_matrix(rng, 6, 4);
  const auto self = fusion::align_hypothesis(e1, e1, p, 0);
  for (std::size_t n : {1u, 2u, 4u}) {
    const std::vector<Tensor> hyps(n, e1);
    const auto out = fusion::attention_fuse(hyps, p);
    const auto head = fusion::fuse_head(hyps, p, 0);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t k = 0; k < n; ++k) CHECK(out.head_weights[0](r, k) == 1.0 / static_cast<double>(n));
    // power-of-two N keeps every step exact, so both paths agree bit for bit
    for (std::size_t i = 0; i < self.aligned.numel(); ++i) {
      CHECK(head.fused.data()[i] == self.aligned.data()[i]);
      CHECK(out.fused.data()[i] == self.aligned.data()[i]);
    }
  }
  const std::vector<Tensor> three(3, e1);
  const auto out3 = fusion::attention_fuse(three, p);
  for (std::size_t i = 0; i < self.aligned.numel(); ++i)
    CHECK(out3.fused.data()[i] == doctest::Approx(self.aligned.data()[i]).epsilon(1e-14));
}

TEST_CASE("identity heads are interchangeable and the stack mean reproduces one head") {
  std::mt19937_64 rng(13);
  std::vector<Tensor> hyps{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3), random_matrix(rng, 2, 3)};
  const auto one = fusion::attention_fuse(hyps, fusion::init_fusion_params(1, 3, InitMode::kIdentity));
  const auto four = fusion::attention_fuse(hyps, fusion::init_fusion_params(4, 3, InitMode::kIdentity));
  for (std::size_t h = 1; h < 4; ++h)
    for (std::size_t i = 0; i < four.head_weights[0].numel(); ++i)
      CHECK(four.head_weights[h].data()[i] == four.head_weights[0].data()[i]);
  for (std::size_t i = 0; i < one.fused.numel(); ++i)
    CHECK(four.fused.data()[i] == doctest::Approx(one.fused.data()[i]).epsilon(1e-14));
}

TEST_CASE("fused rows are convex combinations of aligned vectors") {
  std::mt19937_64 rng(14);
  const auto p = fusion::init_fusion_params(2, 4, InitMode::kRandom, 4);
  std::vector<Tensor> hyps{random_matrix(rng, 5, 4), random_matrix(rng, 6, 4), random_matrix(rng, 4, 4)};
  for (std::size_t h = 0; h < 2; ++h) {
    const auto hf = fusion::fuse_head(hyps, p, h);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t n = 0; n < 3; ++n) {
        CHECK(hf.weights(r, n) >= 0.0);
        s += hf.weights(r, n);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t c = 0; c < p.head_dim(); ++c) {
        double v = 0, lo = 1e300, hi = -1e300;
        for (std::size_t n = 0; n < 3; ++n) {
          v += hf.weights(r, n) * hf.aligned[n](r, c);
          lo = std::min(lo, hf.aligned[n](r, c));
          hi = std::max(hi, hf.aligned[n](r, c));
        }
        CHECK(hf.fused(r, c) == doctest::Approx(v).epsilon(1e-13));
        CHECK(hf.fused(r, c) >= lo - 1e-12);
        CHECK(hf.fused(r, c) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("permuting hypotheses after the first leaves the output unchanged") {
  std::mt19937_64 rng(15);
  const auto p = fusion::init_fusion_params(3, 4, InitMode::kRandom, 5);
  std::vector<Tensor> hyps;
  for (std::size_t i = 0; i < 5; ++i) hyps.push_back(random_matrix(rng, 3 + i, 4));
  const auto base = fusion::attention_fuse(hyps, p);
  std::vector<std::size_t> order{1, 2, 3, 4};
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tensor> perm{hyps[0]};
    for (auto i : order) perm.push_back(hyps[i]);
    const auto out = fusion::attention_fuse(perm, p);
    for (std::size_t i = 0; i < base.fused.numel(); ++i)
      CHECK(out.fused.data()[i] == doctest::Approx(base.fused.data()[i]).epsilon(1e-13));
  }
}

TEST_CASE("identity init favours the 1-best over perturbed hypotheses on average") {
  // Not a hard invariant: the 1-best is self-aligned too, so its weight only
  // tends to exceed 1/N.
  std::mt19937_64 rng(15);
  std::normal_distribution<double> noise(0.0, 0.7);
  const auto p = fusion::init_fusion_params(4, 8, InitMode::kIdentity);
  const std::size_t n_hyp = 5, m = 6;
  double first = 0.0;
  std::size_t count = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor e1 = random_matrix(rng, m, 8);
    std::vector<Tensor> hyps{e1};
    for (std::size_t n = 1; n < n_hyp; ++n) {
      std::vector<double> d(e1.data().begin(), e1.data().end());
      for (auto& v : d) v += noise(rng);
      hyps.push_back(Tensor::matrix(m, 8, std::move(d)));
    }
    const auto out = fusion::attention_fuse(hyps, p);
    for (const auto& w : out.head_weights)
      for (std::size_t r = 0; r < m; ++r) {
        first += w(r, 0);
        ++count;
      }
  }
  CHECK(first / static_cast<double>(count) > 1.0 / static_cast<double>(n_hyp));
}

TEST_CASE("attention fusion errors") {
  const auto p = fusion::init_fusion_params(1, 3, InitMode::kIdentity);
  CHECK_THROWS_AS(fusion::attention_fuse(std::vector<Tensor>{}, p), std::invalid_argument);
  const std::vector<Tensor> bad{Tensor::zeros({2, 3}), Tensor::zeros({2, 4})};
  CHECK_THROWS_AS(fusion::attention_fuse(bad, p), num::DimensionError);
}

TEST_CASE("dot similarity and the scaled ablation") {
  std::mt19937_64 rng(16);
  auto p = fusion::init_fusion_params(1, 2, InitMode::kIdentity);
  p.similarity = fusion::Similarity::kDot;
  const Tensor e1 = Tensor::matrix(1, 2, {1, 0});
  const Tensor en = Tensor::matrix(2, 2, {2, 0, 0, 1});
  auto a = fusion::align_hypothesis(e1, en, p, 0);
  CHECK(a.weights(0, 0) == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)));
  p.scaled = true;
  a = fusion::align_hypothesis(e1, en, p, 0);
  const double s = 2.0 / std::sqrt(2.0);
  CHECK(a.weights(0, 0) == doctest::Approx(std::exp(s) / (std::exp(s) + 1.0)));
}

TEST_CASE("fusion gradients match finite differences") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t b = 3, m = 4;

    {
      std::vector<Tensor> in{random_matrix(rng, m, b), random_matrix(rng, 1, b), random_matrix(rng, 1, b)};
      const std::vector<double> p{0.3, 0.9, 0.5, 1.0};
      const Tensor probe = random_matrix(rng, m, b);
      worst = std::max(worst, num::grad_check(
                                  [&](std::span<const Tensor> x) {
                                    return weighted_sum(
                                        fusion::confidence_embed(x[0], p, fusion::ConfidenceEmbed{x[1], x[2]}), probe);
                                  },
                                  in));
    }
    {
      std::vector<Tensor> in{random_matrix(rng, m, b), random_matrix(rng, m, b), random_matrix(rng, m, b)};
      const Tensor post = random_matrix(rng, 3, m, 0.05, 1.0);
      const Tensor probe = random_matrix(rng, m, b);
      for (bool renorm : {false, true}) {
        worst = std::max(worst, num::grad_check(
                                    [&](std::span<const Tensor> x) {
                                      return weighted_sum(fusion::posterior_fuse(x, post, renorm), probe);
                                    },
                                    in));
      }
    }

    auto p = fusion::init_fusion_params(2, b, InitMode::kRandom, seed);
    if (seed % 2 == 1) p.similarity = fusion::Similarity::kDot;
    const auto params = p.parameters();
    {
      std::vector<Tensor> in{random_matrix(rng, m, b), random_matrix(rng, 5, b)};
      for (const auto& t : params) in.push_back(t);
      const Tensor probe = random_matrix(rng, m, b);
      worst = std::max(worst, num::grad_check(
                                  [&](std::span<const Tensor> x) {
                                    return weighted_sum(fusion::align_hypothesis(x[0], x[1], p, 1).aligned, probe);
                                  },
                                  in));
    }
    {
      std::vector<Tensor> in{random_matrix(rng, m, b), random_matrix(rng, 3, b), random_matrix(rng, 6, b)};
      const std::size_t n_hyp = in.size();
      for (const auto& t : params) in.push_back(t);
      const Tensor probe = random_matrix(rng, m, b);
      worst = std::max(worst, num::grad_check(
                                  [&](std::span<const Tensor> x) {
                                    return weighted_sum(fusion::attention_fuse(x.first(n_hyp), p).fused, probe);
                                  },
                                  in));
    }
  }
  CHECK(worst < 1e-4);
}
