#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "rst/io.hpp"

namespace rst::io {

static_assert(std::endian::native == std::endian::little, "weight IO assumes a little-endian host");
static_assert(sizeof(float) == 4);

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(n));
    offset += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

constexpr char kMagic[4] = {'R', 'S', 'T', 'W'};
constexpr std::size_t kHeaderBytes = 12;

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }

  [[noreturn]] void fail(const std::string& message) const { throw IoError(source_ + ": " + message); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }

  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightStore<float>& ws) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kWeightFormatVersion);
  if (ws.size() > std::numeric_limits<std::uint32_t>::max()) throw IoError("too many tensors for the weight format");
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ws.size()));
  for (const auto& [name, t] : ws.entries()) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw IoError("parameter name too long: " + name);
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw IoError("rank too large for " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data().data());
    out.insert(out.end(), p, p + t.numel() * sizeof(float));
  }
  const auto crc = crc32(std::span(out).subspan(kHeaderBytes));
  put<std::uint32_t>(out, crc);
  return out;
}

WeightStore<float> decode_weights(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader in(bytes, source);
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) in.fail("not a weight file (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kWeightFormatVersion) in.fail("unsupported weight format version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("tensor count");
  if (bytes.size() < kHeaderBytes + 4) in.fail("truncated (no checksum)");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const auto actual = crc32(bytes.subspan(kHeaderBytes, bytes.size() - kHeaderBytes - 4));
  if (stored != actual) in.fail("CRC32 mismatch (file is corrupted)");

  WeightStore<float> ws;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint16_t>("name length");
    auto name_bytes = in.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = in.get<std::uint8_t>("rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(in.get<std::uint64_t>("dimension"));
      if (d != 0 && n > (bytes.size() / sizeof(float)) / d) in.fail("tensor " + name + " is larger than the file");
      n *= d;
    }
    auto payload = in.take(n * sizeof(float), "tensor payload");
    std::vector<float> data(n);
    std::memcpy(data.data(), payload.data(), payload.size());
    if (ws.contains(name)) in.fail("duplicate tensor " + name);
    ws.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (in.position() != bytes.size() - 4) in.fail("trailing bytes after the last tensor");
  return ws;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError(path.string() + ": read failed");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(path.string() + ": write failed");
}

void save_weights(const std::filesystem::path& path, const WeightStore<float>& ws) {
  write_file(path, encode_weights(ws));
}

WeightStore<float> load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_weights(bytes, path.string());
}

}  // namespace rst::io
