#include "irdfusion/relation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "irdfusion/errors.hpp"

namespace irdfusion::relation {

namespace {

void require_square_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1) || a.shape() != b.shape()) {
    throw ShapeError("relation: attention maps must be equal square matrices, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

void require_fits(const Tensor& c, const Tensor& v, const char* what) {
  if (v.rank() != 2 || v.dim(0) != c.dim(0)) {
    throw ShapeError(std::string("relation: ") + what + " " + shape_string(v.shape()) +
                     " does not fit coefficients " + shape_string(c.shape()));
  }
}

void require_equal(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string("relation: ") + what + " shapes differ " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

RelationCoeffs relation_coeffs(const Tensor& attn_v, const Tensor& attn_t, double lambda_v,
                               double lambda_t, double beta) {
  require_square_pair(attn_v, attn_t);
  RelationCoeffs c{Tensor(attn_v.shape()), Tensor(attn_v.shape()), beta, lambda_v, lambda_t};
  for (std::size_t i = 0; i < attn_v.size(); ++i) {
    c.c_v2v[i] = attn_v[i] - beta * lambda_t * attn_t[i];
    c.c_t2t[i] = beta * attn_t[i] - lambda_v * attn_v[i];
  }
  return c;
}

Tensor differential_via_relation(const RelationCoeffs& c, const Tensor& value_v,
                                 const Tensor& value_t) {
  require_fits(c.c_v2v, value_v, "V_v");
  require_fits(c.c_t2t, value_t, "V_t");
  require_equal(value_v, value_t, "V_v/V_t");
  const std::size_t n = c.c_v2v.dim(0), d = value_v.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        acc += c.c_v2v[i * n + m] * value_v[m * d + j] - c.c_t2t[i * n + m] * value_t[m * d + j];
      }
      out[i * d + j] = acc;
    }
  }
  return out;
}

Tensor feedback_update_relation(const Tensor& f_vt, const Tensor& fp_t, double beta) {
  require_equal(f_vt, fp_t, "F_vt/F'_t");
  Tensor out(f_vt.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_vt[i] + beta * fp_t[i];
  return out;
}

Tensor reconstruct(const Tensor& attn, const Tensor& value_self, const Tensor& value_other,
                   double lambda) {
  require_equal(value_self, value_other, "V_self/V_other");
  require_fits(attn, value_self, "V");
  const std::size_t n = attn.dim(0), d = value_self.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        acc += attn[i * n + m] * (value_self[m * d + j] + lambda * value_other[m * d + j]);
      }
      out[i * d + j] = acc;
    }
  }
  return out;
}

Deviation max_relative_deviation(const Tensor& direct, const Tensor& oracle) {
  require_equal(direct, oracle, "direct/oracle");
  double scale = 0.0;
  for (double v : direct.data()) scale = std::max(scale, std::abs(v));
  Deviation dev;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    const double r = std::abs(direct[i] - oracle[i]) / (scale + 1e-12);
    if (r > dev.max_rel || std::isnan(r)) {
      dev.max_rel = r;
      dev.worst_index = i;
    }
  }
  return dev;
}

double assert_equivalence(const Tensor& direct, const Tensor& oracle, double tol) {
  const Deviation dev = max_relative_deviation(direct, oracle);
  if (!(dev.max_rel <= tol)) {
    std::ostringstream os;
    os.precision(17);
    os << "equivalence exceeded: relative deviation " << dev.max_rel << " > " << tol
       << " at element " << dev.worst_index << " (direct " << direct[dev.worst_index]
       << ", oracle " << oracle[dev.worst_index] << ")";
    throw VerificationError(os.str());
  }
  return dev.max_rel;
}

}  // namespace irdfusion::relation
