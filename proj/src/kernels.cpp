#include "irdfusion/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "irdfusion/errors.hpp"

namespace irdfusion {

void ensure_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) {
    throw NonFiniteError("non-finite value produced by " + std::string(what));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

namespace {

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

[[noreturn]] void inner_mismatch(std::string_view op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": inner extents differ for " + shape_string(a.shape()) +
                   " and " + shape_string(b.shape()));
}

}  // namespace

namespace {

// c[m×n] = a[m×k] · b[k×n]. Columns are processed in register-sized blocks;
// every c[i][j] is still summed over p in ascending order.
void gemm(const double* pa, const double* pb, double* pc, std::size_t m, std::size_t k,
          std::size_t n) {
  constexpr std::size_t kBlock = 8;
  const std::size_t full = n - n % kBlock;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (std::size_t j0 = 0; j0 < full; j0 += kBlock) {
      double acc[kBlock] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        const double* brow = pb + p * n + j0;
        for (std::size_t j = 0; j < kBlock; ++j) acc[j] += aip * brow[j];
      }
      for (std::size_t j = 0; j < kBlock; ++j) crow[j0 + j] = acc[j];
    }
    for (std::size_t j = full; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * pb[p * n + j];
      crow[j] = acc;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) inner_mismatch("matmul", a, b);
  Tensor c = Tensor::uninitialized({m, n});
  gemm(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  ensure_finite(c, "matmul");
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) inner_mismatch("matmul_nt", a, b);
  return matmul(a, transpose(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (b.rows() != a.rows()) inner_mismatch("matmul_tn", a, b);
  return matmul(transpose(a), b);
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t = Tensor::uninitialized({n, m});
  const double* src = a.data().data();
  double* dst = t.data().data();
  constexpr std::size_t kTile = 16;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile) {
    const std::size_t i1 = std::min(m, i0 + kTile);
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      const std::size_t j1 = std::min(n, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * m + i] = src[i * n + j];
    }
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

Tensor add_row_bias(const Tensor& a, const Tensor& b) {
  require_matrix(a, "add_row_bias");
  if (b.size() != a.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_string(b.shape()) + " does not fit " +
                     shape_string(a.shape()));
  }
  Tensor c = a;
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) += b[j];
  return c;
}

Tensor column_sums(const Tensor& a) {
  require_matrix(a, "column_sums");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor s({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) s[j] += a(i, j);
  return s;
}

Tensor softmax_rows(const Tensor& t) {
  require_matrix(t, "softmax_rows");
  const std::size_t m = t.rows(), n = t.cols();
  Tensor out = Tensor::uninitialized({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = t.data().data() + i * n;
    double* orow = out.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  return out;
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache) {
  require_matrix(t, "layer_norm");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t m = t.rows(), n = t.cols();
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" +
                     shape_string(beta.shape()) + " do not fit " + shape_string(t.shape()));
  }
  Tensor out({m, n});
  Tensor normalized({m, n});
  std::vector<double> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += t(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = t(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (t(i, j) - mean) * rstd[i];
      normalized(i, j) = xh;
      out(i, j) = xh * gamma[j] + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->rstd = std::move(rstd);
  }
  return out;
}

DropoutResult dropout(const Tensor& t, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) {
    return {t, Tensor(t.shape(), 1.0)};
  }
  if (!rng) throw ContractError("dropout: train mode requires a generator");
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(t.shape());
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    mask[i] = rng->uniform() < p ? 0.0 : keep_scale;
    out[i] = t[i] * mask[i];
  }
  return {std::move(out), std::move(mask)};
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = gelu(v);
  return out;
}

}  // namespace irdfusion
