#include <cmath>
#include <limits>
#include <random>
#include <tuple>

#include "doctest.h"
#include "mhsum/num/checkpoint.hpp"
#include "mhsum/num/gradcheck.hpp"
#include "mhsum/num/graph.hpp"
#include "mhsum/num/ops.hpp"

using namespace mhsum::num;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(r * c);
  for (auto& v : d) v = u(rng);
  return Tensor::matrix(r, c, std::move(d));
}

// log-sum-exp evaluated directly, without max subtraction: safe for the small
// logits used here and independent of the library path.
double naive_ce(const std::vector<std::vector<double>>& logits, const std::vector<int>& targets) {
  double total = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    double z = 0.0;
    for (double v : logits[t]) z += std::exp(v);
    total += std::log(z) - logits[t][static_cast<std::size_t>(targets[t])];
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace

TEST_CASE("matmul with identity returns the operand") {
  std::mt19937_64 rng(1);
  const Tensor a = random_matrix(rng, 3, 5);
  const Tensor out = matmul(Tensor::identity(3), a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("add of a tensor and its negation is zero") {
  std::mt19937_64 rng(2);
  const Tensor x = random_matrix(rng, 4, 3);
  const Tensor z = add(x, scale(x, -1.0));
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), DimensionError);
}

TEST_CASE("cosine_rows") {
  SUBCASE("colinear vectors") {
    const Tensor c = cosine_rows(Tensor::matrix(1, 2, {3, 4}), Tensor::matrix(1, 2, {6, 8}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("zero-norm row is stabilized") {
    const Tensor c = cosine_rows(Tensor::matrix(2, 2, {0, 0, 1, 0}), Tensor::matrix(1, 2, {0, 1}));
    for (double v : c.data()) CHECK(std::isfinite(v));
    CHECK(c(0, 0) == 0.0);
    CHECK(c(1, 0) == 0.0);
  }
  SUBCASE("pairs agree with diagonal of rows") {
    std::mt19937_64 rng(3);
    const Tensor a = random_matrix(rng, 4, 3), b = random_matrix(rng, 4, 3);
    const Tensor full = cosine_rows(a, b), diag = cosine_pairs(a, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(diag(i, 0) == doctest::Approx(full(i, i)).epsilon(1e-14));
  }
}

TEST_CASE("softmax examples") {
  const Tensor a = softmax(Tensor::matrix(1, 2, {0, 0}), 1);
  CHECK(a(0, 0) == 0.5);
  CHECK(a(0, 1) == 0.5);
  const Tensor b = softmax(Tensor::matrix(1, 2, {std::log(2.0), 0}), 1);
  CHECK(b(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(b(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor c = softmax(Tensor::matrix(1, 2, {1000, 0}), 1);
  CHECK(std::isfinite(c(0, 0)));
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(0, 1) < 1e-300);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 0}), 1), DimensionError);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST_CASE("softmax properties over random tensors") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng() % 5, c = 1 + rng() % 7;
    const Tensor x = random_matrix(rng, r, c, -30.0, 30.0);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const Tensor y = softmax(x, axis);
      const double k = shift(rng);
      const Tensor y2 = softmax(add(x, Tensor::full(x.shape(), k)), axis);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(y.data()[i] > 0.0);
        CHECK(y.data()[i] <= 1.0);
        CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-6);
      }
      const std::size_t outer = axis == 0 ? c : r, len = axis == 0 ? r : c;
      for (std::size_t o = 0; o < outer; ++o) {
        double s = 0.0;
        for (std::size_t k2 = 0; k2 < len; ++k2) s += axis == 0 ? y(k2, o) : y(o, k2);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("softmax over a middle axis of a 3-D tensor") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> d(2 * 3 * 4);
  for (auto& v : d) v = u(rng);
  const Tensor x(Shape{2, 3, 4}, d);
  const Tensor y = softmax(x, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t in = 0; in < 4; ++in) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += y.data()[(o * 3 + k) * 4 + in];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("cross_entropy") {
  const std::vector<int> t0{0};
  CHECK(cross_entropy(Tensor::matrix(1, 2, {0, 0}), t0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor::matrix(1, 3, {50, 0, 0}), t0).item() < 1e-20);

  std::mt19937_64 rng(6);
  const Tensor logits = random_matrix(rng, 3, 5, -3, 3);
  const std::vector<int> targets{4, 0, 2};
  std::vector<std::vector<double>> rows(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) rows[i].push_back(logits(i, j));
  CHECK(cross_entropy(logits, targets).item() == doctest::Approx(naive_ce(rows, targets)).epsilon(1e-12));

  SUBCASE("padding positions are excluded") {
    const std::vector<int> padded{4, -1, 2};
    const std::vector<std::vector<double>> kept{rows[0], rows[2]};
    CHECK(cross_entropy(logits, padded).item() == doctest::Approx(naive_ce(kept, {4, 2})).epsilon(1e-12));
    const std::vector<int> all_pad{-1, -1, -1};
    CHECK_THROWS_AS(cross_entropy(logits, all_pad), std::invalid_argument);
  }
  CHECK(cross_entropy(logits, targets).item() >= 0.0);
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(7);
  Tensor x = random_matrix(rng, 2, 3);
  x.set_requires_grad(true);
  SUBCASE("sum gives ones") {
    Graph g;
    GraphScope scope(g);
    backward(sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);
  }
  SUBCASE("dot(x, x) gives 2x") {
    Graph g;
    GraphScope scope(g);
    backward(dot(x, x));
    const auto grad = x.grad();
    for (std::size_t i = 0; i < grad.size(); ++i) CHECK(grad[i] == 2.0 * x.data()[i]);
  }
  SUBCASE("non-scalar root is rejected") {
    Graph g;
    GraphScope scope(g);
    const Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
  }
  SUBCASE("unused leaf ends with zero grad") {
    Tensor unused = random_matrix(rng, 2, 3);
    unused.set_requires_grad(true);
    Graph g;
    GraphScope scope(g);
    // Recorded but cut off from the root by a zero scale.
    const Tensor dead = scale(unused, 1.0);
    (void)dead;
    backward(sum(x));
    CHECK(unused.has_grad());
    for (double v : unused.grad()) CHECK(v == 0.0);
  }
  SUBCASE("no recording without an active graph") {
    const Tensor y = scale(x, 2.0);
    CHECK(y.impl()->is_leaf);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(8);
  Tensor a = random_matrix(rng, 4, 6), w = random_matrix(rng, 6, 6), gn = random_matrix(rng, 1, 6),
         bn = random_matrix(rng, 1, 6);
  std::vector<Tensor> ins{a, w, gn, bn};
  auto run = [&] {
    for (auto& t : ins) {
      t.set_requires_grad(true);
      t.impl()->grad.clear();
    }
    Graph g;
    GraphScope scope(g);
    const Tensor h = layernorm(gelu(matmul(ins[0], ins[1])), ins[2], ins[3]);
    const Tensor s = softmax(cosine_rows(h, ins[0].defined() ? h : h), 1);
    backward(sum(mul(s, s)));
    std::vector<std::vector<double>> grads;
    for (auto& t : ins) grads.push_back(t.grad());
    return grads;
  };
  const auto g1 = run(), g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i)
    for (std::size_t k = 0; k < g1[i].size(); ++k) CHECK(g1[i][k] == g2[i][k]);
}

TEST_CASE("grad_check") {
  std::mt19937_64 rng(9);
  SUBCASE("sum has no error") {
    std::vector<Tensor> ins{random_matrix(rng, 3, 3)};
    CHECK(grad_check([](std::span<const Tensor> in) { return sum(in[0]); }, ins) < 1e-9);
  }
  SUBCASE("softmax then cross entropy on 2x3") {
    std::vector<Tensor> ins{random_matrix(rng, 2, 3)};
    const std::vector<int> targets{1, 2};
    const auto f = [&](std::span<const Tensor> in) { return cross_entropy(softmax(in[0], 1), targets); };
    CHECK(grad_check(f, ins, 1e-4) < 1e-4);
  }
  SUBCASE("eps outside range is rejected") {
    std::vector<Tensor> ins{random_matrix(rng, 1, 1)};
    const auto f = [](std::span<const Tensor> in) { return sum(in[0]); };
    CHECK_THROWS_AS(grad_check(f, ins, 1e-2), std::invalid_argument);
  }
  SUBCASE("non-finite values are rejected") {
    std::vector<Tensor> ins{Tensor::matrix(1, 1, {std::numeric_limits<double>::infinity()})};
    const auto f = [](std::span<const Tensor> in) { return sum(in[0]); };
    CHECK_THROWS_AS(grad_check(f, ins), std::domain_error);
  }
}

TEST_CASE("every differentiable op passes grad_check over 20 seeds") {
  using Program = std::function<Tensor(std::span<const Tensor>)>;
  struct Case {
    const char* name;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    Program f;
  };
  const std::vector<int> ids{2, 0, 2, 1};
  const std::vector<int> targets{0, 3, -1, 1};
  // Fixed random projection so every op feeds a non-trivial scalar.
  const auto probe = [](const Tensor& t) {
    std::vector<double> w(t.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return dot(t, Tensor(t.shape(), w));
  };
  const std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [&](auto in) { return probe(matmul(in[0], in[1])); }},
      {"matmul_nt", {{3, 4}, {2, 4}}, [&](auto in) { return probe(matmul_nt(in[0], in[1])); }},
      {"transpose", {{3, 4}}, [&](auto in) { return probe(transpose(in[0])); }},
      {"add", {{3, 4}, {3, 4}}, [&](auto in) { return probe(add(in[0], in[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [&](auto in) { return probe(sub(in[0], in[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [&](auto in) { return probe(mul(in[0], in[1])); }},
      {"scale", {{3, 4}}, [&](auto in) { return probe(scale(in[0], -1.7)); }},
      {"add_bias", {{3, 4}, {1, 4}}, [&](auto in) { return probe(add_bias(in[0], in[1])); }},
      {"scale_rows", {{3, 4}, {3, 1}}, [&](auto in) { return probe(scale_rows(in[0], in[1])); }},
      {"dot", {{3, 4}, {3, 4}}, [&](auto in) { return dot(in[0], in[1]); }},
      {"gelu", {{3, 4}}, [&](auto in) { return probe(gelu(in[0])); }},
      {"layernorm", {{3, 5}, {1, 5}, {1, 5}}, [&](auto in) { return probe(layernorm(in[0], in[1], in[2])); }},
      {"softmax0", {{3, 4}}, [&](auto in) { return probe(softmax(in[0], 0)); }},
      {"softmax1", {{3, 4}}, [&](auto in) { return probe(softmax(in[0], 1)); }},
      {"cosine_rows", {{3, 4}, {5, 4}}, [&](auto in) { return probe(cosine_rows(in[0], in[1])); }},
      {"cosine_pairs", {{3, 4}, {3, 4}}, [&](auto in) { return probe(cosine_pairs(in[0], in[1])); }},
      {"dot_pairs", {{3, 4}, {3, 4}}, [&](auto in) { return probe(dot_pairs(in[0], in[1])); }},
      {"concat0", {{2, 3}, {1, 3}}, [&](auto in) { return probe(concat(in, 0)); }},
      {"concat1", {{2, 3}, {2, 2}}, [&](auto in) { return probe(concat(in, 1)); }},
      {"slice_rows", {{4, 3}}, [&](auto in) { return probe(slice_rows(in[0], 1, 3)); }},
      {"slice_cols", {{4, 3}}, [&](auto in) { return probe(slice_cols(in[0], 1, 3)); }},
      {"embed_lookup", {{3, 4}}, [&](auto in) { return probe(embed_lookup(in[0], ids)); }},
      {"cross_entropy", {{4, 5}}, [&](auto in) { return cross_entropy(in[0], targets); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(100 + seed);
      std::vector<Tensor> ins;
      for (auto [r, k] : c.shapes) ins.push_back(random_matrix(rng, r, k));
      const double err = grad_check(c.f, ins, 1e-4);
      INFO(c.name << " seed " << seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  std::mt19937_64 rng(10);
  std::vector<NamedTensor> recs;
  recs.emplace_back("w", random_matrix(rng, 3, 4, -1e6, 1e6));
  recs.emplace_back("specials", Tensor::matrix(1, 4, {-0.0, 5e-324, std::numeric_limits<double>::max(), 1.0 / 3.0}));
  recs.emplace_back("scalar", Tensor::scalar(2.5));
  const auto bytes = serialize_checkpoint(recs);
  const auto back = parse_checkpoint(bytes);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].first == recs[i].first);
    CHECK(back[i].second.shape() == recs[i].second.shape());
    for (std::size_t k = 0; k < recs[i].second.numel(); ++k)
      CHECK(std::bit_cast<std::uint64_t>(back[i].second.data()[k]) ==
            std::bit_cast<std::uint64_t>(recs[i].second.data()[k]));
  }
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK_THROWS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(parse_checkpoint("garbage!"));
}

TEST_CASE("products do not depend on where operands are stored") {
  std::mt19937_64 rng(77);
  for (auto [m, k, n] : {std::tuple{1, 7, 5}, {3, 4, 3}, {6, 33, 2}, {17, 9, 13}, {2, 64, 64}}) {
    const Tensor a = random_matrix(rng, m, k);
    const Tensor b = random_matrix(rng, k, n);
    const Tensor ref = matmul(a, b);
    const Tensor ref_nt = matmul_nt(a, transpose(b));
    std::vector<std::vector<double>> pads;
    for (std::size_t shift = 1; shift < 9; ++shift) {
      pads.emplace_back(shift, 0.0);  // perturb the heap so copies land at different offsets
      const Tensor a2 = Tensor::matrix(m, k, {a.data().begin(), a.data().end()});
      pads.emplace_back(shift * 3, 0.0);
      const Tensor b2 = Tensor::matrix(k, n, {b.data().begin(), b.data().end()});
      const Tensor out = matmul(a2, b2);
      const Tensor out_nt = matmul_nt(a2, transpose(b2));
      for (std::size_t i = 0; i < ref.numel(); ++i) {
        CHECK(out.data()[i] == ref.data()[i]);
        CHECK(out_nt.data()[i] == ref_nt.data()[i]);
      }
    }
  }
}
