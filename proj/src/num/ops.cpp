#include "mhsum/num/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>

#include "mhsum/num/graph.hpp"

namespace mhsum::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_graph()) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data, bool track) {
  Tensor out(std::move(shape), std::move(data));
  if (track) {
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
  }
  return out;
}

void record(const char* op, std::vector<ImplPtr> inputs, const Tensor& out, std::function<void()> fn) {
  active_graph()->record(Graph::Node{op, std::move(inputs), out.impl(), std::move(fn)});
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(a.shape()));
  }
}

CMap cmap(const ImplPtr& p) { return CMap(p->data.data(), p->shape[0], p->shape[1]); }
CMap gmap(const ImplPtr& p) { return CMap(p->grad.data(), p->shape[0], p->shape[1]); }
MMap gbuf(const ImplPtr& p) {
  auto g = p->grad_buffer();
  return MMap(g.data(), p->shape[0], p->shape[1]);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  const auto m = a.rows(), n = b.cols();
  std::vector<double> out(m * n);
  MMap(out.data(), m, n).noalias() = cmap(a.impl()) * cmap(b.impl());
  const bool track = tracking({&a, &b});
  Tensor res = make_result({m, n}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("matmul", {pa, pb}, res, [pa, pb, po] {
      if (pa->requires_grad) gbuf(pa).noalias() += gmap(po) * cmap(pb).transpose();
      if (pb->requires_grad) gbuf(pb).noalias() += cmap(pa).transpose() * gmap(po);
    });
  }
  return res;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) mismatch("matmul_nt", a, b);
  const auto m = a.rows(), n = b.rows();
  std::vector<double> out(m * n);
  MMap(out.data(), m, n).noalias() = cmap(a.impl()) * cmap(b.impl()).transpose();
  const bool track = tracking({&a, &b});
  Tensor res = make_result({m, n}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("matmul_nt", {pa, pb}, res, [pa, pb, po] {
      if (pa->requires_grad) gbuf(pa).noalias() += gmap(po) * cmap(pb);
      if (pb->requires_grad) gbuf(pb).noalias() += gmap(po).transpose() * cmap(pa);
    });
  }
  return res;
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  MMap(out.data(), n, m) = cmap(a.impl()).transpose();
  const bool track = tracking({&a});
  Tensor res = make_result({n, m}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), po = res.impl();
    record("transpose", {pa}, res, [pa, po] { gbuf(pa) += gmap(po).transpose(); });
  }
  return res;
}

namespace {

template <typename Fwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, double sign_b,
                          bool product) {
  if (a.shape() != b.shape()) mismatch(op, a, b);
  const auto da = a.data(), db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
  const bool track = tracking({&a, &b});
  Tensor res = make_result(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record(op, {pa, pb}, res, [pa, pb, po, sign_b, product] {
      const auto& g = po->grad;
      if (pa->requires_grad) {
        auto ga = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += product ? g[i] * pb->data[i] : g[i];
      }
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += product ? g[i] * pa->data[i] : sign_b * g[i];
      }
    });
  }
  return res;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise("add", a, b, [](double x, double y) { return x + y; }, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise("sub", a, b, [](double x, double y) { return x - y; }, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise("mul", a, b, [](double x, double y) { return x * y; }, 1.0, true);
}

Tensor scale(const Tensor& a, double factor) {
  const auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * factor;
  const bool track = tracking({&a});
  Tensor res = make_result(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), po = res.impl();
    record("scale", {pa}, res, [pa, po, factor] {
      auto ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * po->grad[i];
    });
  }
  return res;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix("add_bias", x);
  const auto m = x.rows(), n = x.cols();
  if (bias.numel() != n) mismatch("add_bias", x, bias);
  const auto dx = x.data(), db = bias.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dx[i * n + j] + db[j];
  const bool track = tracking({&x, &bias});
  Tensor res = make_result(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), pb = bias.impl(), po = res.impl();
    record("add_bias", {px, pb}, res, [px, pb, po, m, n] {
      const auto& g = po->grad;
      if (px->requires_grad) px->accumulate_grad(g);
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return res;
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
  require_matrix("scale_rows", x);
  const auto m = x.rows(), n = x.cols();
  if (w.numel() != m) mismatch("scale_rows", x, w);
  const auto dx = x.data(), dw = w.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dx[i * n + j] * dw[i];
  const bool track = tracking({&x, &w});
  Tensor res = make_result(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), pw = w.impl(), po = res.impl();
    record("scale_rows", {px, pw}, res, [px, pw, po, m, n] {
      const auto& g = po->grad;
      if (px->requires_grad) {
        auto gx = px->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * pw->data[i];
      }
      if (pw->requires_grad) {
        auto gw = pw->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * px->data[i * n + j];
          gw[i] += acc;
        }
      }
    });
  }
  return res;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const bool track = tracking({&a});
  Tensor res = make_result({}, {s}, track);
  if (track) {
    ImplPtr pa = a.impl(), po = res.impl();
    record("sum", {pa}, res, [pa, po] {
      auto ga = pa->grad_buffer();
      const double g = po->grad[0];
      for (auto& v : ga) v += g;
    });
  }
  return res;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) mismatch("dot", a, b);
  double s = 0.0;
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) s += da[i] * db[i];
  const bool track = tracking({&a, &b});
  Tensor res = make_result({}, {s}, track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("dot", {pa, pb}, res, [pa, pb, po] {
      const double g = po->grad[0];
      if (pa->requires_grad) {
        auto ga = pa->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * pb->data[i];
      }
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * pa->data[i];
      }
    });
  }
  return res;
}

Tensor relu(const Tensor& a) {
  const auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] > 0.0 ? da[i] : 0.0;
  const bool track = tracking({&a});
  Tensor res = make_result(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), po = res.impl();
    record("relu", {pa}, res, [pa, po] {
      auto ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (pa->data[i] > 0.0) ga[i] += po->grad[i];
    });
  }
  return res;
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = da[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  const bool track = tracking({&a});
  Tensor res = make_result(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), po = res.impl();
    record("gelu", {pa}, res, [pa, po] {
      auto ga = pa->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double x = pa->data[i];
        const double t = std::tanh(kC * (x + kA * x * x * x));
        const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
        ga[i] += d * po->grad[i];
      }
    });
  }
  return res;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() == 0) throw DimensionError("layernorm: scalar input");
  const auto n = x.shape().back();
  if (n == 0) throw DimensionError("layernorm: empty last dim");
  if (gain.numel() != n) mismatch("layernorm", x, gain);
  if (bias.numel() != n) mismatch("layernorm", x, bias);
  const auto rows = x.numel() / n;
  const auto dx = x.data(), dg = gain.data(), db = bias.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = dx.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = h * dg[j] + db[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor res = make_result(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), pg = gain.impl(), pb = bias.impl(), po = res.impl();
    record("layernorm", {px, pg, pb}, res,
           [px, pg, pb, po, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n] {
             const auto& g = po->grad;
             if (pg->requires_grad) {
               auto gg = pg->grad_buffer();
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
             }
             if (pb->requires_grad) {
               auto gb = pb->grad_buffer();
               for (std::size_t r = 0; r < rows; ++r)
                 for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
             }
             if (px->requires_grad) {
               auto gx = px->grad_buffer();
               const double inv_n = 1.0 / static_cast<double>(n);
               for (std::size_t r = 0; r < rows; ++r) {
                 double mean_d = 0.0, mean_dx = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double d = g[r * n + j] * pg->data[j];
                   mean_d += d;
                   mean_dx += d * xhat[r * n + j];
                 }
                 mean_d *= inv_n;
                 mean_dx *= inv_n;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double d = g[r * n + j] * pg->data[j];
                   gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                 }
               }
             }
           });
  }
  return res;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  const std::size_t len = shape[axis];
  if (len == 0) throw DimensionError("softmax: empty axis in shape " + shape_str(shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, dx[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(dx[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  const bool track = tracking({&x});
  Tensor res = make_result(shape, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = res.impl();
    record("softmax", {px}, res, [px, po, outer, inner, len] {
      const auto& g = po->grad;
      const auto& y = po->data;
      auto gx = px->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double s = 0.0;
          for (std::size_t k = 0; k < len; ++k) s += g[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += y[idx] * (g[idx] - s);
          }
        }
      }
    });
  }
  return res;
}

namespace {

std::vector<double> row_norms(std::span<const double> d, std::size_t rows, std::size_t cols) {
  std::vector<double> norms(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < cols; ++k) s += d[i * cols + k] * d[i * cols + k];
    norms[i] = std::sqrt(s);
  }
  return norms;
}

// Gradient of cos(u, v) = u·v / max(|u||v|, eps) with respect to u.
inline void cosine_grad_u(const double* u, const double* v, std::size_t d, double nu, double nv, double c,
                          double g, double* gu) {
  const double denom = nu * nv;
  if (denom > kCosineEps) {
    const double a = g / denom;
    const double b = g * c / (nu * nu);
    for (std::size_t k = 0; k < d; ++k) gu[k] += a * v[k] - b * u[k];
  } else {
    const double a = g / kCosineEps;
    for (std::size_t k = 0; k < d; ++k) gu[k] += a * v[k];
  }
}

}  // namespace

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  require_matrix("cosine_rows", a);
  require_matrix("cosine_rows", b);
  if (a.cols() != b.cols()) mismatch("cosine_rows", a, b);
  const auto m = a.rows(), n = b.rows(), d = a.cols();
  const auto da = a.data(), db = b.data();
  auto na = row_norms(da, m, d), nb = row_norms(db, n, d);
  std::vector<double> out(m * n);
  MMap(out.data(), m, n).noalias() = cmap(a.impl()) * cmap(b.impl()).transpose();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= std::max(na[i] * nb[j], kCosineEps);
  const bool track = tracking({&a, &b});
  Tensor res = make_result({m, n}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("cosine_rows", {pa, pb}, res, [pa, pb, po, m, n, na = std::move(na), nb = std::move(nb)] {
      // d cos / d a_i = sum_j w_ij b_j - r_i a_i with w_ij = g_ij / max(|a_i||b_j|, eps) and
      // r_i = sum_j g_ij c_ij / |a_i|^2 over unclamped pairs; symmetric for b.
      const auto& g = po->grad;
      const auto& c = po->data;
      RowMat w(m, n);
      std::vector<double> ra(m, 0.0), rb(n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double denom = na[i] * nb[j];
          const double gij = g[i * n + j];
          if (denom > kCosineEps) {
            w(i, j) = gij / denom;
            const double gc = gij * c[i * n + j];
            ra[i] += gc / (na[i] * na[i]);
            rb[j] += gc / (nb[j] * nb[j]);
          } else {
            w(i, j) = gij / kCosineEps;
          }
        }
      }
      if (pa->requires_grad) {
        auto ga = gbuf(pa);
        ga.noalias() += w * cmap(pb);
        ga -= Eigen::Map<const Eigen::VectorXd>(ra.data(), m).asDiagonal() * cmap(pa);
      }
      if (pb->requires_grad) {
        auto gb = gbuf(pb);
        gb.noalias() += w.transpose() * cmap(pa);
        gb -= Eigen::Map<const Eigen::VectorXd>(rb.data(), n).asDiagonal() * cmap(pb);
      }
    });
  }
  return res;
}

Tensor cosine_pairs(const Tensor& a, const Tensor& b) {
  require_matrix("cosine_pairs", a);
  if (a.shape() != b.shape()) mismatch("cosine_pairs", a, b);
  const auto m = a.rows(), d = a.cols();
  const auto da = a.data(), db = b.data();
  auto na = row_norms(da, m, d), nb = row_norms(db, m, d);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += da[i * d + k] * db[i * d + k];
    out[i] = s / std::max(na[i] * nb[i], kCosineEps);
  }
  const bool track = tracking({&a, &b});
  Tensor res = make_result({m, 1}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("cosine_pairs", {pa, pb}, res, [pa, pb, po, m, d, na = std::move(na), nb = std::move(nb)] {
      const auto& g = po->grad;
      const auto& c = po->data;
      const double* ad = pa->data.data();
      const double* bd = pb->data.data();
      if (pa->requires_grad) {
        auto ga = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          cosine_grad_u(ad + i * d, bd + i * d, d, na[i], nb[i], c[i], g[i], ga.data() + i * d);
      }
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          cosine_grad_u(bd + i * d, ad + i * d, d, nb[i], na[i], c[i], g[i], gb.data() + i * d);
      }
    });
  }
  return res;
}

Tensor dot_pairs(const Tensor& a, const Tensor& b) {
  require_matrix("dot_pairs", a);
  if (a.shape() != b.shape()) mismatch("dot_pairs", a, b);
  const auto m = a.rows(), d = a.cols();
  const auto da = a.data(), db = b.data();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += da[i * d + k] * db[i * d + k];
    out[i] = s;
  }
  const bool track = tracking({&a, &b});
  Tensor res = make_result({m, 1}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = res.impl();
    record("dot_pairs", {pa, pb}, res, [pa, pb, po, m, d] {
      const auto& g = po->grad;
      if (pa->requires_grad) {
        auto ga = pa->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += g[i] * pb->data[i * d + k];
      }
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < d; ++k) gb[i * d + k] += g[i] * pa->data[i * d + k];
      }
    });
  }
  return res;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_matrix("concat", p);
  const auto& first = parts.front();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (axis == 0 && p.cols() != first.cols()) mismatch("concat", first, p);
    if (axis == 1 && p.rows() != first.rows()) mismatch("concat", first, p);
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : first.rows();
  const std::size_t cols = axis == 0 ? first.cols() : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  bool track = false;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto d = p.data();
    if (axis == 0) {
      std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(off * cols));
      off += p.rows();
    } else {
      const auto pc = p.cols();
      for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(d.data() + i * pc, pc, out.data() + i * cols + off);
      off += pc;
    }
    track = track || tracking({&p});
  }
  Tensor res = make_result({rows, cols}, std::move(out), track);
  if (track) {
    std::vector<ImplPtr> ins;
    for (const auto& p : parts) ins.push_back(p.impl());
    ImplPtr po = res.impl();
    record("concat", ins, res, [ins, po, offsets = std::move(offsets), axis, rows, cols] {
      const auto& g = po->grad;
      for (std::size_t t = 0; t < ins.size(); ++t) {
        const auto& p = ins[t];
        if (!p->requires_grad) continue;
        auto gp = p->grad_buffer();
        const auto pr = p->shape[0], pc = p->shape[1];
        if (axis == 0) {
          for (std::size_t k = 0; k < pr * pc; ++k) gp[k] += g[offsets[t] * cols + k];
        } else {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + offsets[t] + j];
        }
      }
    });
  }
  return res;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_rows", x);
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
  }
  const auto cols = x.cols();
  const auto d = x.data();
  std::vector<double> out(d.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          d.begin() + static_cast<std::ptrdiff_t>(end * cols));
  const bool track = tracking({&x});
  Tensor res = make_result({end - begin, cols}, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = res.impl();
    record("slice_rows", {px}, res, [px, po, begin, cols] {
      auto gx = px->grad_buffer();
      for (std::size_t k = 0; k < po->grad.size(); ++k) gx[begin * cols + k] += po->grad[k];
    });
  }
  return res;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", x);
  if (begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
  }
  const auto rows = x.rows(), cols = x.cols(), w = end - begin;
  const auto d = x.data();
  std::vector<double> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(d.data() + i * cols + begin, w, out.data() + i * w);
  const bool track = tracking({&x});
  Tensor res = make_result({rows, w}, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = res.impl();
    record("slice_cols", {px}, res, [px, po, rows, cols, begin, w] {
      auto gx = px->grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * cols + begin + j] += po->grad[i * w + j];
    });
  }
  return res;
}

Tensor embed_lookup(const Tensor& table, std::span<const int> ids) {
  require_matrix("embed_lookup", table);
  const auto v = table.rows(), b = table.cols();
  const auto d = table.data();
  std::vector<double> out(ids.size() * b);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw DimensionError("embed_lookup: id " + std::to_string(ids[i]) + " outside table " +
                           shape_str(table.shape()));
    }
    std::copy_n(d.data() + static_cast<std::size_t>(ids[i]) * b, b, out.data() + i * b);
  }
  const bool track = tracking({&table});
  Tensor res = make_result({ids.size(), b}, std::move(out), track);
  if (track) {
    ImplPtr pt = table.impl(), po = res.impl();
    std::vector<int> saved(ids.begin(), ids.end());
    record("embed_lookup", {pt}, res, [pt, po, saved = std::move(saved), b] {
      auto gt = pt->grad_buffer();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        double* dst = gt.data() + static_cast<std::size_t>(saved[i]) * b;
        const double* src = po->grad.data() + i * b;
        for (std::size_t k = 0; k < b; ++k) dst[k] += src[k];
      }
    });
  }
  return res;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  require_matrix("cross_entropy", logits);
  const auto t = logits.rows(), v = logits.cols();
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  const auto d = logits.data();
  std::vector<double> probs(t * v, 0.0);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] == ignore_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocab of " +
                           std::to_string(v));
    }
    const double* row = d.data() + i * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * v + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    loss += mx + std::log(z) - row[targets[i]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target position is padding");
  loss /= static_cast<double>(count);
  const bool track = tracking({&logits});
  Tensor res = make_result({}, {loss}, track);
  if (track) {
    ImplPtr pl = logits.impl(), po = res.impl();
    std::vector<int> saved(targets.begin(), targets.end());
    record("cross_entropy", {pl}, res,
           [pl, po, probs = std::move(probs), saved = std::move(saved), t, v, count, ignore_id] {
             const double g = po->grad[0] / static_cast<double>(count);
             auto gl = pl->grad_buffer();
             for (std::size_t i = 0; i < t; ++i) {
               if (saved[i] == ignore_id) continue;
               for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
               gl[i * v + static_cast<std::size_t>(saved[i])] -= g;
             }
           });
  }
  return res;
}

}  // namespace mhsum::num
