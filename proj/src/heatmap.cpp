#include "irdfusion/heatmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <string>

#include "irdfusion/errors.hpp"
#include "irdfusion/irdt.hpp"

namespace irdfusion {

std::vector<std::uint8_t> heatmap_pixels(const Tensor& t, std::size_t* height, std::size_t* width) {
  Tensor plane;
  if (t.rank() == 2) {
    plane = t;
  } else if (t.rank() == 3) {
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    plane = Tensor({h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i) plane[i] += t[ch * h * w + i];
    for (auto& v : plane.data()) v /= static_cast<double>(c);
  } else {
    throw ShapeError("heatmap: expected H×W or C×H×W, got " + shape_string(t.shape()));
  }
  if (height) *height = plane.dim(0);
  if (width) *width = plane.dim(1);

  const auto [lo, hi] = std::minmax_element(plane.data().begin(), plane.data().end());
  const double min = *lo, range = *hi - *lo;
  std::vector<std::uint8_t> px(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) {
    px[i] = range > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * (plane[i] - min) / range))
                        : std::uint8_t{128};
  }
  return px;
}

void emit_heatmap(const Tensor& t, const std::filesystem::path& path, std::string_view comment) {
  std::size_t h = 0, w = 0;
  const std::vector<std::uint8_t> px = heatmap_pixels(t, &h, &w);
  std::ostringstream header;
  header << "P5\n";
  std::istringstream lines{std::string(comment)};
  for (std::string line; std::getline(lines, line);) header << "# " << line << "\n";
  header << w << " " << h << "\n255\n";
  const std::string head = header.str();
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), px.begin(), px.end());
  write_bytes(path, bytes);
}

PgmImage read_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::size_t pos = 0;
  PgmImage img;
  auto fail = [&](const std::string& why) -> IoError {
    return IoError("PGM " + path.string() + ": " + why);
  };
  // Header tokens separated by whitespace, with '#' comments to end of line.
  auto next_token = [&]() {
    std::string tok;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        std::size_t end = pos;
        while (end < bytes.size() && bytes[end] != '\n') ++end;
        std::string text(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 1),
                         bytes.begin() + static_cast<std::ptrdiff_t>(end));
        if (!text.empty() && text.front() == ' ') text.erase(0, 1);
        img.comments.push_back(std::move(text));
        pos = end;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) return tok;
        ++pos;
      } else {
        tok.push_back(c);
        ++pos;
      }
    }
    return tok;
  };
  if (next_token() != "P5") throw fail("not a binary PGM");
  try {
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    if (std::stoul(next_token()) != 255) throw fail("only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw fail("malformed header");
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() - pos != img.width * img.height) throw fail("raster size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

}  // namespace irdfusion
