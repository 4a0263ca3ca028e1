#pragma once

// Relation-map form of the cross-modal difference. With
//     F'_v = A_v (V_v + lambda_v V_t),  F'_t = A_t (V_t + lambda_t V_v)
// (pre-LN, pre-dropout), the difference expands to
//     F'_v - beta F'_t = C_v2v V_v - C_t2t V_t
//     C_v2v = A_v - beta lambda_t A_t,   C_t2t = beta A_t - lambda_v A_v
// and adding beta F'_t back recovers F'_v.
//
// Everything here uses explicit loops so that it shares no code path with
// the matmul kernel used by the fusion layers.

#include <cstddef>

#include "irdfusion/tensor.hpp"

namespace irdfusion::relation {

struct RelationCoeffs {
  Tensor c_v2v;  // N×N
  Tensor c_t2t;  // N×N
  double beta = 0.0;
  double lambda_v = 0.0;
  double lambda_t = 0.0;
};

RelationCoeffs relation_coeffs(const Tensor& attn_v, const Tensor& attn_t, double lambda_v,
                               double lambda_t, double beta);

/// C_v2v · V_v − C_t2t · V_t
Tensor differential_via_relation(const RelationCoeffs& c, const Tensor& value_v,
                                 const Tensor& value_t);

/// F_vt + beta · Fp_t
Tensor feedback_update_relation(const Tensor& f_vt, const Tensor& fp_t, double beta);

/// A · (V_self + lambda · V_other) by loops.
Tensor reconstruct(const Tensor& attn, const Tensor& value_self, const Tensor& value_other,
                   double lambda);

struct Deviation {
  double max_rel = 0.0;
  std::size_t worst_index = 0;
};

/// max |a−b| / (max|a| + 1e-12) and where it occurs.
Deviation max_relative_deviation(const Tensor& direct, const Tensor& oracle);

/// Returns the deviation; throws VerificationError naming the worst element
/// when it exceeds `tol`.
double assert_equivalence(const Tensor& direct, const Tensor& oracle, double tol);

}  // namespace irdfusion::relation
