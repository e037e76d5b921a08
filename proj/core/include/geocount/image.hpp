#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geocount {

/// 8-bit raster image, row-major with interleaved channels (like the
/// portable anymap payload). channels is 1 (graymap) or 3 (pixmap).
struct ImageU8 {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int y, int x, int c) {
    return data[static_cast<std::size_t>((y * cols + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[static_cast<std::size_t>((y * cols + x) * channels + c)];
  }
};

/// Serialize as binary PGM (P5, 1 channel) or PPM (P6, 3 channels),
/// maxval 255. An optional comment line is embedded after the magic.
std::string encode_pnm(const ImageU8& image, const std::string& comment = "");

/// Parse a binary P5/P6 payload. Header comments, if any, are
/// concatenated into *comment_out (newline separated, '#' stripped).
ImageU8 decode_pnm(const std::string& bytes, std::string* comment_out = nullptr);

void write_pnm(const ImageU8& image, const std::filesystem::path& path,
               const std::string& comment = "");
ImageU8 read_pnm(const std::filesystem::path& path, std::string* comment_out = nullptr);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace geocount
