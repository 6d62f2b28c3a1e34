#include "doctest.h"
#include "femur/checksum.hpp"
#include "femur/image.hpp"
#include "support.hpp"

using namespace femur;
using femur::testing::TempDir;

TEST_CASE("png round trip stores 8-bit quantized values") {
  Rng rng(3);
  const Image img = femur::testing::random_image(rng, 70, 90);
  const Image back = decode_png(encode_png(img));
  REQUIRE(back.height() == 70);
  REQUIRE(back.width() == 90);
  for (int r = 0; r < 70; ++r) {
    for (int c = 0; c < 90; ++c) {
      CHECK(back.at(r, c) == doctest::Approx(quantize8(img.at(r, c)) / 255.0f).epsilon(1e-7));
    }
  }
  // A quantized image survives a second round trip bit-exactly.
  CHECK(decode_png(encode_png(back)) == back);
}

TEST_CASE("png file io") {
  TempDir dir;
  Image img(64, 64, 0.5f);
  img.at(3, 4) = 1.0f;
  write_png(img, dir / "a.png");
  const Image back = read_png(dir / "a.png");
  CHECK(back.at(3, 4) == 1.0f);
  CHECK(back.at(0, 0) == doctest::Approx(128 / 255.0));
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageError);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decode_png(junk), ImageError);
}

TEST_CASE("resize to the same shape is the identity") {
  Rng rng(5);
  const Image img = femur::testing::random_image(rng, 33, 47);
  CHECK(resize(img, 33, 47) == img);
}

TEST_CASE("bilinear sampling at pixel centers and midpoints") {
  Image img(2, 2);
  img.at(0, 0) = 0.0f;
  img.at(0, 1) = 1.0f;
  img.at(1, 0) = 2.0f;
  img.at(1, 1) = 3.0f;
  CHECK(sample_bilinear(img, 0, 1) == 1.0f);
  CHECK(sample_bilinear(img, 0.5, 0.5) == doctest::Approx(1.5));
  CHECK(sample_bilinear(img, 0, 0.5) == doctest::Approx(0.5));
  // Zero padding beyond the grid.
  CHECK(sample_bilinear(img, -1, 0) == 0.0f);
  CHECK(sample_bilinear(img, -0.5, 0) == doctest::Approx(0.0));
  CHECK(sample_bilinear(img, 1.5, 1) == doctest::Approx(1.5));
}

TEST_CASE("crop_columns") {
  Rng rng(9);
  const Image img = femur::testing::random_image(rng, 5, 8);
  const Image mid = crop_columns(img, 2, 3);
  REQUIRE(mid.width() == 3);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(mid.at(r, c) == img.at(r, c + 2));
  }
}

TEST_CASE("checksum and base64 helpers") {
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253};
  const auto enc = base64_encode(bytes);
  CHECK(enc == "AAEC+vv8/Q==");
  CHECK(*base64_decode(enc) == bytes);
  CHECK_FALSE(base64_decode("a$==").has_value());
}
