#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rst/model.hpp"

namespace rst::io {

// Any failure to read, write, or decode a file. The message names the file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Weight file layout, all integers little-endian:
//   "RSTW" | u32 version (1) | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 rank | u64 dims[rank] | f32 payload
//   u32 CRC32 of every byte between the header and the checksum
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> encode_weights(const WeightStore<float>& ws);
// `source` is used in error messages.
WeightStore<float> decode_weights(std::span<const std::uint8_t> bytes, const std::string& source);

void save_weights(const std::filesystem::path& path, const WeightStore<float>& ws);
WeightStore<float> load_weights(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Planar RGB in [0, 1], layout [3, H, W].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
};

// Binary P6 with maxval 255. Comments in the header are skipped.
Image decode_ppm(std::span<const std::uint8_t> bytes, const std::string& source);
// Canonical header "P6\n<w> <h>\n255\n"; values clamped to [0, 1] and
// quantized by round-half-up.
std::vector<std::uint8_t> encode_ppm(const Image& image);
// 8-bit grayscale P5, canonical header.
std::vector<std::uint8_t> encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> gray);

// 8-bit RGB, RGBA, gray, or gray+alpha PNG; alpha is dropped.
Image decode_png(std::span<const std::uint8_t> bytes, const std::string& source);

// Dispatches on the file signature (P6 or PNG).
Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

std::uint8_t quantize(float value);

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  return Tensor<T>(Shape{3, image.height, image.width}, std::vector<T>(image.pixels.begin(), image.pixels.end()));
}

template <typename T>
Image from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("from_tensor: expected [3, H, W], got " + to_string(t.shape()));
  Image img{t.dim(1), t.dim(2), {}};
  img.pixels.assign(t.data().begin(), t.data().end());
  return img;
}

}  // namespace rst::io
