#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "irdfusion/tensor.hpp"

namespace irdfusion {

/// Min-max normalized 8-bit pixels of an H×W tensor (C×H×W is mean-pooled
/// over C first). A constant input maps to 128 everywhere.
std::vector<std::uint8_t> heatmap_pixels(const Tensor& t, std::size_t* height = nullptr,
                                         std::size_t* width = nullptr);

/// Binary PGM (P5). `comment` lines go into the header as "# ..." lines.
void emit_heatmap(const Tensor& t, const std::filesystem::path& path,
                  std::string_view comment = {});

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::string> comments;
};

PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace irdfusion
