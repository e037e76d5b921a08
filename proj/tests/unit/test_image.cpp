#include <doctest.h>

#include "geocount/errors.hpp"
#include "geocount/image.hpp"
#include "geocount/rng.hpp"
#include "temp_dir.hpp"

using namespace geocount;

TEST_SUITE("image") {

TEST_CASE("pnm round-trip preserves pixels and shape") {
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    ImageU8 image;
    image.rows = 1 + static_cast<int>(rng.below(9));
    image.cols = 1 + static_cast<int>(rng.below(9));
    image.channels = (trial % 2 == 0) ? 1 : 3;
    image.data.resize(static_cast<std::size_t>(image.rows) * image.cols *
                      image.channels);
    for (auto& b : image.data) b = static_cast<std::uint8_t>(rng.below(256));

    const std::string bytes = encode_pnm(image, "bounds 1 2 3 4");
    std::string comment;
    const ImageU8 back = decode_pnm(bytes, &comment);
    CHECK(back.rows == image.rows);
    CHECK(back.cols == image.cols);
    CHECK(back.channels == image.channels);
    CHECK(back.data == image.data);
    CHECK(comment == "bounds 1 2 3 4");
  }
}

TEST_CASE("pnm file io") {
  testsupport::TempDir dir("pnm");
  ImageU8 image;
  image.rows = 2;
  image.cols = 3;
  image.channels = 1;
  image.data = {0, 64, 128, 192, 255, 10};
  write_pnm(image, dir / "a.pgm");
  const ImageU8 back = read_pnm(dir / "a.pgm");
  CHECK(back.data == image.data);
}

TEST_CASE("pnm decode errors") {
  CHECK_THROWS_AS(decode_pnm("P4\n1 1\n255\n "), IoError);   // wrong magic
  CHECK_THROWS_AS(decode_pnm("P5\n2 2\n255\nab"), IoError);  // truncated
  CHECK_THROWS_AS(decode_pnm("P5\n2 2\n65535\n"), IoError);  // bad maxval
  CHECK_THROWS_AS(decode_pnm(""), IoError);
  ImageU8 bad;
  bad.rows = 1;
  bad.cols = 1;
  bad.channels = 2;
  bad.data = {1, 2};
  CHECK_THROWS_AS(encode_pnm(bad), ShapeError);
}

TEST_CASE("base64 round-trip at every padding length") {
  Rng rng(17);
  for (std::size_t len = 0; len < 30; ++len) {
    std::string bytes(len, '\0');
    for (auto& c : bytes) c = static_cast<char>(rng.below(256));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  CHECK(base64_encode("") == "");
  CHECK_THROWS_AS(base64_decode("ab!c"), InputError);
}

}  // TEST_SUITE
