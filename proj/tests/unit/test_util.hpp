#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "irdfusion/rng.hpp"
#include "irdfusion/tensor.hpp"

namespace irdfusion::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.normal(0.0, sd);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs(const Tensor& a) {
  double worst = 0.0;
  for (double v : a.data()) worst = std::max(worst, std::abs(v));
  return worst;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("irdfusion_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace irdfusion::testing
