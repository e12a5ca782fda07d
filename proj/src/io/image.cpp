#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "rst/io.hpp"

namespace rst::io {

std::uint8_t quantize(float value) {
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

namespace {

class HeaderParser {
 public:
  HeaderParser(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail(std::string("expected ") + what);
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24)) fail(std::string(what) + " out of range");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing whitespace before raster");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& message) const { throw IoError(source_ + ": " + message); }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes, const std::string& source) {
  HeaderParser p(bytes, source);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') p.fail("not a binary P6 pixmap");
  const auto width = p.number("width");
  const auto height = p.number("height");
  const auto maxval = p.number("maxval");
  if (maxval != 255) p.fail("maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (width == 0 || height == 0) p.fail("empty image");
  const std::size_t start = p.raster_start();
  const std::size_t n = width * height;
  if (bytes.size() - start < 3 * n) p.fail("truncated raster");
  if (bytes.size() - start > 3 * n) p.fail("trailing bytes after raster");
  Image img{height, width, std::vector<float>(3 * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * n + i] = static_cast<float>(bytes[start + 3 * i + c]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  const std::size_t n = image.width * image.height;
  if (image.pixels.size() != 3 * n) throw IoError("encode_ppm: pixel buffer does not match the image size");
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(image.pixels[c * n + i]));
  return out;
}

std::vector<std::uint8_t> encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> gray) {
  if (gray.size() != height * width) throw IoError("encode_pgm: buffer does not match the image size");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), gray.begin(), gray.end());
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes, const std::string& source) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw IoError(source + ": " + png.message);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw IoError(source + ": only 8-bit PNG is supported");
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw IoError(source + ": " + message);
  }
  const std::size_t h = png.height, w = png.width, n = h * w;
  Image img{h, w, std::vector<float>(3 * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * n + i] = static_cast<float>(raster[3 * i + c]) / 255.0f;
  return img;
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) return decode_png(bytes, path.string());
  return decode_ppm(bytes, path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& image) { write_file(path, encode_ppm(image)); }

}  // namespace rst::io
