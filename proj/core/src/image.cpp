#include "geocount/image.hpp"

#include <fstream>
#include <sstream>

#include "geocount/errors.hpp"

namespace geocount {

namespace {

void check_image(const ImageU8& image) {
  if (image.rows < 1 || image.cols < 1)
    throw ShapeError("image dimensions must be at least 1x1");
  if (image.channels != 1 && image.channels != 3)
    throw ShapeError("portable anymap supports 1 or 3 channels, got " +
                     std::to_string(image.channels));
  const std::size_t expected = static_cast<std::size_t>(image.rows) *
                               image.cols * image.channels;
  if (image.data.size() != expected)
    throw ShapeError("image payload size mismatch");
}

}  // namespace

std::string encode_pnm(const ImageU8& image, const std::string& comment) {
  check_image(image);
  std::ostringstream out;
  out << (image.channels == 1 ? "P5" : "P6") << "\n";
  if (!comment.empty()) {
    if (comment.find('\n') != std::string::npos)
      throw InputError("pnm comment must be a single line");
    out << "# " << comment << "\n";
  }
  out << image.cols << " " << image.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  return out.str();
}

namespace {

// Reads the next whitespace-delimited header token, collecting comments.
std::string next_token(const std::string& bytes, std::size_t& pos,
                       std::string* comments) {
  while (pos < bytes.size()) {
    char c = bytes[pos];
    if (c == '#') {
      std::size_t end = bytes.find('\n', pos);
      if (end == std::string::npos) end = bytes.size();
      std::string line = bytes.substr(pos + 1, end - pos - 1);
      if (!line.empty() && line.front() == ' ') line.erase(line.begin());
      if (comments) {
        if (!comments->empty()) comments->push_back('\n');
        *comments += line;
      }
      pos = end;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < bytes.size() &&
         !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
         bytes[pos] != '#')
    ++pos;
  if (start == pos) throw IoError("truncated pnm header");
  return bytes.substr(start, pos - start);
}

int parse_header_int(const std::string& token) {
  try {
    std::size_t used = 0;
    int value = std::stoi(token, &used);
    if (used != token.size()) throw IoError("bad pnm header token: " + token);
    return value;
  } catch (const std::exception&) {
    throw IoError("bad pnm header token: " + token);
  }
}

}  // namespace

ImageU8 decode_pnm(const std::string& bytes, std::string* comment_out) {
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos, comment_out);
  ImageU8 image;
  if (magic == "P5")
    image.channels = 1;
  else if (magic == "P6")
    image.channels = 3;
  else
    throw IoError("unsupported pnm magic: " + magic);
  image.cols = parse_header_int(next_token(bytes, pos, comment_out));
  image.rows = parse_header_int(next_token(bytes, pos, comment_out));
  const int maxval = parse_header_int(next_token(bytes, pos, comment_out));
  if (maxval != 255) throw IoError("only maxval 255 pnm files are supported");
  if (image.rows < 1 || image.cols < 1) throw IoError("bad pnm dimensions");
  if (pos >= bytes.size()) throw IoError("truncated pnm payload");
  ++pos;  // single whitespace byte after maxval
  const std::size_t expected = static_cast<std::size_t>(image.rows) *
                               image.cols * image.channels;
  if (bytes.size() - pos < expected) throw IoError("truncated pnm payload");
  image.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + expected));
  return image;
}

void write_pnm(const ImageU8& image, const std::filesystem::path& path,
               const std::string& comment) {
  const std::string payload = encode_pnm(image, comment);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write: " + path.string());
}

ImageU8 read_pnm(const std::filesystem::path& path, std::string* comment_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_pnm(buffer.str(), comment_out);
}

namespace {
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string out;
  out.reserve(text.size() / 4 * 3);
  unsigned acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = b64_value(c);
    if (v < 0) throw InputError(std::string("invalid base64 character: ") + c);
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace geocount
