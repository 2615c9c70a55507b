#include "atseg/pgm.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "atseg/errors.hpp"

namespace atseg {
namespace {

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw ParseError("PGM parse error at byte offset " + std::to_string(offset) + ": " + what);
}

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  std::size_t pos() const { return pos_; }

  // Whitespace and '#' comments between tokens; at least one separator is required.
  void skip_separators() {
    const std::size_t start = pos_;
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == bytes_.size()) fail(pos_, "unexpected end of header");
    if (pos_ == start) fail(pos_, "expected whitespace");
  }

  std::size_t number(const char* what) {
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) fail(start, std::string(what) + " is too large");
      ++pos_;
    }
    if (pos_ == start) fail(pos_, std::string("expected decimal ") + what);
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

}  // namespace

Tensor decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) fail(bytes.size(), "file too short for magic number");
  if (bytes[0] != 'P') fail(0, "bad magic number, expected 'P5'");
  if (bytes[1] != '5') fail(1, "bad magic number, expected 'P5'");

  HeaderReader header(bytes, 2);
  header.skip_separators();
  const std::size_t width_at = header.pos();
  const std::size_t width = header.number("width");
  header.skip_separators();
  const std::size_t height_at = header.pos();
  const std::size_t height = header.number("height");
  header.skip_separators();
  const std::size_t maxval_at = header.pos();
  const std::size_t maxval = header.number("maxval");
  if (width == 0) fail(width_at, "width must be positive");
  if (height == 0) fail(height_at, "height must be positive");
  if (maxval != 255) fail(maxval_at, "maxval " + std::to_string(maxval) + " is not 255");

  std::size_t pos = header.pos();
  if (pos >= bytes.size()) fail(pos, "missing whitespace after maxval");
  if (!is_space(bytes[pos])) fail(pos, "expected a single whitespace byte after maxval");
  ++pos;
  const std::size_t expected = width * height;
  const std::size_t available = bytes.size() - pos;
  if (available < expected) {
    fail(bytes.size(), "truncated payload, expected " + std::to_string(expected) + " bytes, found " +
                           std::to_string(available));
  }
  if (available > expected) fail(pos + expected, "trailing data after payload");
  Tensor image({1, height, width});
  for (std::size_t i = 0; i < expected; ++i) image[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return image;
}

std::uint8_t quantize_byte(float v) {
  const double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  if (scaled <= 0.0) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  std::size_t leading = 1;
  for (std::size_t axis = 0; axis + 2 < image.rank(); ++axis) leading *= image.dim(axis);
  if (image.rank() < 2 || image.rank() > 4 || leading != 1) {
    throw ShapeError("encode_pgm: expected a single-channel image, got " + shape_str(image.shape()));
  }
  const std::size_t height = image.dim(image.rank() - 2), width = image.dim(image.rank() - 1);
  if (height == 0 || width == 0) throw ShapeError("encode_pgm: empty image");
  image.check_finite("encode_pgm");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.numel());
  for (float v : image.data()) out.push_back(quantize_byte(v));
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Tensor load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_pgm(const Tensor& image, const std::filesystem::path& path) { write_file_bytes(path, encode_pgm(image)); }

}  // namespace atseg
