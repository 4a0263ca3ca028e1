#pragma once

// Self-checks shared by the CLI (check-identity, grad-check) and the
// acceptance binary.

#include <cstddef>
#include <cstdint>
#include <string>

#include "irdfusion/fusion.hpp"
#include "irdfusion/gradcheck.hpp"
#include "json.hpp"

namespace irdfusion {

struct IdentitySuiteResult {
  std::size_t seeds = 0, n = 0, d = 0;
  double tolerance = 1e-10;
  /// Relation form of the difference vs fusion-core's pre-norm outputs.
  double max_deviation = 0.0;
  /// Adding beta F'_t back onto the relation difference vs F'_v.
  double max_feedback_deviation = 0.0;
  std::uint64_t worst_seed = 0;
  double seconds = 0.0;

  bool pass() const { return max_deviation < tolerance && max_feedback_deviation < tolerance; }
  nlohmann::ordered_json to_json() const;  // no timing
};

/// Seeds 0..seeds-1; each draws random features, MFRM parameters, lambdas
/// and beta, runs mfrm_forward and compares against the loop-based oracle.
IdentitySuiteResult run_identity_suite(std::size_t seeds, std::size_t n, std::size_t d,
                                       double tolerance = 1e-10);

struct GradSuiteCase {
  std::string name;
  FusionConfig cfg;
  GradCheckResult result;
};

struct GradSuiteResult {
  double h = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  std::vector<GradSuiteCase> cases;
  double seconds = 0.0;

  double max_rel_error() const;
  bool pass() const { return max_rel_error() < tolerance; }
  nlohmann::ordered_json to_json() const;
};

/// Finite-difference check of every parameter through irdfusion_forward
/// (K=2, eval mode) on a small random problem, once per merge mode.
/// Parameters are perturbed away from their initial values so that no group
/// (e.g. the zero-initialized MLP output layer) sits at a degenerate point.
GradSuiteResult run_grad_suite(std::uint64_t seed = 0, double h = 1e-5, double tolerance = 1e-5);

}  // namespace irdfusion
