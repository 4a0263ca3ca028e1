#include "irdfusion/irdt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "irdfusion/errors.hpp"

namespace irdfusion {

namespace {

constexpr std::uint8_t kMagic[4] = {'I', 'R', 'D', 'T'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void corrupt(std::string_view origin, const std::string& why) {
  throw IoError("IRDT " + std::string(origin) + ": " + why);
}

}  // namespace

std::vector<std::uint8_t> encode_irdt(const Tensor& t, IrdtDtype dtype) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
    throw ContractError("IRDT supports at most 255 dimensions");
  }
  const std::size_t width = dtype == IrdtDtype::f64 ? 8 : 4;
  std::vector<std::uint8_t> out;
  out.reserve(7 + 4 * t.rank() + width * t.size());
  for (auto c : kMagic) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kIrdtVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) {
      throw ContractError("IRDT extent exceeds u32: " + shape_string(t.shape()));
    }
    put_le(out, static_cast<std::uint32_t>(e));
  }
  for (double v : t.data()) {
    if (dtype == IrdtDtype::f64) {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Tensor decode_irdt(std::span<const std::uint8_t> bytes, std::string_view origin) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    corrupt(origin, "missing IRDT magic");
  }
  if (bytes[4] != kIrdtVersion) {
    corrupt(origin, "unsupported version " + std::to_string(bytes[4]));
  }
  const std::uint8_t dtype = bytes[5];
  if (dtype > 1) corrupt(origin, "unknown dtype " + std::to_string(dtype));
  const std::size_t ndim = bytes[6];
  if (ndim == 0) corrupt(origin, "zero dimensions");
  std::size_t offset = 7;
  if (bytes.size() < offset + 4 * ndim) corrupt(origin, "truncated header");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i, offset += 4) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + offset);
    if (shape[i] == 0) corrupt(origin, "zero extent");
  }
  const std::size_t width = dtype == 0 ? 8 : 4;
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != offset + width * n) {
    corrupt(origin, "payload size " + std::to_string(bytes.size() - offset) + " does not match " +
                        shape_string(shape));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, offset += width) {
    if (dtype == 0) {
      data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + offset));
    } else {
      data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + offset));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_irdt(const std::filesystem::path& path, const Tensor& t, IrdtDtype dtype) {
  write_bytes(path, encode_irdt(t, dtype));
}

Tensor read_irdt(const std::filesystem::path& path) {
  return decode_irdt(read_bytes(path), path.string());
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace irdfusion
