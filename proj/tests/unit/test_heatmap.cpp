#include <gtest/gtest.h>

#include "irdfusion/errors.hpp"
#include "irdfusion/heatmap.hpp"
#include "irdfusion/irdt.hpp"
#include "test_util.hpp"

namespace irdfusion {
namespace {

using Pixels = std::vector<std::uint8_t>;

TEST(Heatmap, ConstantInputIsMidGray) {
  EXPECT_EQ(heatmap_pixels(Tensor({3, 5}, -2.5)), Pixels(15, 128));
}

TEST(Heatmap, MinMaxScaling) {
  EXPECT_EQ(heatmap_pixels(Tensor::matrix(2, 2, {0, 1, 1, 0})), (Pixels{0, 255, 255, 0}));
  // 0.25 of the range -> 63.75 -> 64
  EXPECT_EQ(heatmap_pixels(Tensor::matrix(1, 3, {-1, 0, 3})), (Pixels{0, 64, 255}));
}

TEST(Heatmap, ChannelsAreMeanPooled) {
  // channel means: {1, 2, 3, 5}
  const Tensor t({2, 2, 2}, std::vector<double>{0, 2, 2, 6, 2, 2, 4, 4});
  std::size_t h = 0, w = 0;
  EXPECT_EQ(heatmap_pixels(t, &h, &w), (Pixels{0, 64, 128, 255}));
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(w, 2u);
  EXPECT_THROW(heatmap_pixels(Tensor({4})), ShapeError);
}

TEST(Heatmap, PgmRoundTripWithComments) {
  const auto dir = testing::scratch_dir("heatmap");
  Rng rng(5);
  const Tensor t = testing::random_tensor({3, 4, 7}, rng);
  emit_heatmap(t, dir / "a.pgm", "tool_version=x\nk=2");
  const PgmImage img = read_pgm(dir / "a.pgm");
  EXPECT_EQ(img.width, 7u);
  EXPECT_EQ(img.height, 4u);
  EXPECT_EQ(img.pixels, heatmap_pixels(t));
  EXPECT_EQ(img.comments, (std::vector<std::string>{"tool_version=x", "k=2"}));
  const auto bytes = read_bytes(dir / "a.pgm");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 3), "P5\n");
}

TEST(Heatmap, MalformedPgmIsRejected) {
  const auto dir = testing::scratch_dir("heatmap_bad");
  write_text(dir / "p2.pgm", "P2\n1 1\n255\n0");
  EXPECT_THROW(read_pgm(dir / "p2.pgm"), IoError);
  write_text(dir / "short.pgm", "P5\n2 2\n255\n\x01");
  EXPECT_THROW(read_pgm(dir / "short.pgm"), IoError);
  write_text(dir / "maxval.pgm", "P5\n1 1\n65535\n\x01\x02");
  EXPECT_THROW(read_pgm(dir / "maxval.pgm"), IoError);
}

}  // namespace
}  // namespace irdfusion
