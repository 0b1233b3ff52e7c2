#include <doctest.h>

#include <string>

#include "ddrnet/image.hpp"

using namespace ddrnet;

namespace {

std::vector<uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("P6 with comments") {
  std::string raw = "P6\n# made by hand\n2 1 # width height\n255\n";
  raw += std::string("\x01\x02\x03\xff\x00\x80", 6);
  const Image img = decode_netpbm(bytes(raw));
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.channels == 3);
  CHECK(img.samples == std::vector<uint16_t>{1, 2, 3, 255, 0, 128});
  const auto again = decode_netpbm(encode_netpbm(img));
  CHECK(again.samples == img.samples);
}

TEST_CASE("encoding is canonical") {
  Image g;
  g.width = 3;
  g.height = 1;
  g.channels = 1;
  g.samples = {0, 7, 255};
  CHECK(encode_netpbm(g) == bytes(std::string("P5\n3 1\n255\n\x00\x07\xff", 14)));
}

TEST_CASE("16-bit samples are big-endian") {
  const Image img = decode_netpbm(bytes(std::string("P5 1 2 1000\n\x01\x02\x03\xe8", 16)));
  CHECK(img.maxval == 1000);
  CHECK(img.samples == std::vector<uint16_t>{258, 1000});
  CHECK(encode_netpbm(img) == bytes(std::string("P5\n1 2\n1000\n\x01\x02\x03\xe8", 16)));
}

TEST_CASE("malformed files") {
  CHECK_THROWS_AS(decode_netpbm(bytes("P3\n1 1\n255\n1 2 3")), FormatError);
  CHECK_THROWS_AS(decode_netpbm(bytes("P6\n2 2\n255\n\x01")), FormatError);
  CHECK_THROWS_AS(decode_netpbm(bytes("P5\n0 2\n255\n")), FormatError);
  CHECK_THROWS_AS(decode_netpbm(bytes("P5\n1 1\n70000\n\x01\x01")), FormatError);
  CHECK_THROWS_AS(decode_netpbm(bytes(std::string("P5\n1 1\n9\n\x0a", 10))), FormatError);
  CHECK_THROWS_AS(read_netpbm("/nonexistent/x.ppm"), IoError);
}

TEST_CASE("normalisation") {
  Image img;
  img.width = 1;
  img.height = 1;
  img.channels = 3;
  img.samples = {255, 0, 51};
  const Tensor t = image_to_tensor(img, {0.5, 0.5, 0.5}, {0.5, 0.25, 0.1});
  CHECK(t.shape() == Shape({1, 3, 1, 1}));
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[1] == doctest::Approx(-2.0));
  CHECK(t[2] == doctest::Approx(-3.0));
  CHECK_THROWS_AS(image_to_tensor(img, {0, 0, 0}, {1, 0, 1}), ValueError);
}

TEST_CASE("masks and palettes") {
  const Palette pal = parse_palette("# cityscapes-ish\n128 64 128\n\n244 35 232  # sidewalk\n");
  REQUIRE(pal.size() == 2);
  CHECK(pal[1] == std::array<uint8_t, 3>{244, 35, 232});
  CHECK_THROWS_AS(parse_palette("1 2\n"), FormatError);
  CHECK_THROWS_AS(parse_palette("1 2 300\n"), FormatError);
  CHECK_THROWS_AS(parse_palette("\n# nothing\n"), FormatError);

  const IndexTensor mask(Shape{1, 2, 2}, std::vector<int32_t>{0, 1, 1, 0});
  const Image pgm = mask_to_pgm(mask);
  CHECK(pgm.channels == 1);
  CHECK(pgm.samples == std::vector<uint16_t>{0, 1, 1, 0});
  const Image ppm = mask_to_ppm(mask, pal);
  CHECK(ppm.samples[3] == 244);
  CHECK_THROWS_AS(mask_to_ppm(IndexTensor(Shape{1, 1, 1}, 2), pal), ValueError);
  CHECK_THROWS_AS(mask_to_pgm(IndexTensor(Shape{1, 1, 1}, 300)), ValueError);
}
