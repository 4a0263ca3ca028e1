#pragma once

// Plain tensor kernels. These are the forward computations; the recorded
// (differentiable) versions in autodiff.hpp call into them.

#include <string_view>
#include <vector>

#include "irdfusion/rng.hpp"
#include "irdfusion/tensor.hpp"

namespace irdfusion {

enum class Mode { train, eval };

inline constexpr double kLayerNormEps = 1e-5;

/// Throws NonFiniteError naming `what` if any element is NaN or Inf.
void ensure_finite(const Tensor& t, std::string_view what);

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ · b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a[m×n] + b[n] broadcast over rows.
Tensor add_row_bias(const Tensor& a, const Tensor& b);
/// Column sums of a[m×n] as a length-n vector.
Tensor column_sums(const Tensor& a);

Tensor softmax_rows(const Tensor& t);

struct LayerNormCache {
  Tensor normalized;         // (x - mean) * rstd
  std::vector<double> rstd;  // 1 / sqrt(var + eps), one per row
};

/// Row-wise standardization with population variance, then gamma/beta.
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps, LayerNormCache* cache = nullptr);

struct DropoutResult {
  Tensor output;
  Tensor mask;  // 0 or 1/(1-p) per element
};

/// Inverted dropout. Eval mode or p == 0 returns t unchanged without drawing.
DropoutResult dropout(const Tensor& t, double p, Mode mode, Rng* rng);

double gelu(double x);
double gelu_derivative(double x);
Tensor gelu(const Tensor& t);

}  // namespace irdfusion
