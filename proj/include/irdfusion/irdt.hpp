#pragma once

// IRDT tensor files:
//   bytes 0-3   "IRDT"
//   byte  4     version (1)
//   byte  5     dtype: 0 = f64, 1 = f32
//   byte  6     ndim
//   then ndim little-endian u32 extents, then the row-major little-endian payload.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "irdfusion/tensor.hpp"

namespace irdfusion {

enum class IrdtDtype : std::uint8_t { f64 = 0, f32 = 1 };

inline constexpr std::uint8_t kIrdtVersion = 1;

std::vector<std::uint8_t> encode_irdt(const Tensor& t, IrdtDtype dtype = IrdtDtype::f64);
/// `origin` names the source in error messages.
Tensor decode_irdt(std::span<const std::uint8_t> bytes, std::string_view origin = "<buffer>");

void write_irdt(const std::filesystem::path& path, const Tensor& t,
                IrdtDtype dtype = IrdtDtype::f64);
Tensor read_irdt(const std::filesystem::path& path);

/// Whole-file helpers shared by the other writers.
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace irdfusion
