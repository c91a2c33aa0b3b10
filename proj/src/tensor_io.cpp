#include "epiray/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace epiray {

namespace {

constexpr unsigned char kMagic[4] = {0x45, 0x50, 0x54, 0x4E};  // "EPTN"
constexpr unsigned char kVersion = 1;
constexpr unsigned char kDtypeF32 = 0;

void put_u32le(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
  buf.push_back(static_cast<char>((v >> 16) & 0xFF));
  buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void tensor_write(const Tensor& t, const std::string& path) {
  if (t.rank() > 255) throw std::invalid_argument("tensor_write: rank > 255");
  std::string buf;
  buf.reserve(7 + 4 * t.rank() + 4 * t.size());
  buf.append(reinterpret_cast<const char*>(kMagic), 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(kDtypeF32));
  buf.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("tensor_write: dim too large for u32");
    }
    put_u32le(buf, static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("tensor_write: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("tensor_write: write failed for " + path);
}

Tensor tensor_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("tensor_read: cannot open " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const unsigned char* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t n = raw.size();

  if (n < 7 || std::memcmp(p, kMagic, 4) != 0) {
    throw std::runtime_error("tensor_read: bad magic in " + path);
  }
  if (p[4] != kVersion) {
    throw std::runtime_error("tensor_read: unsupported version " + std::to_string(p[4]));
  }
  if (p[5] != kDtypeF32) {
    throw std::runtime_error("tensor_read: unsupported dtype " + std::to_string(p[5]));
  }
  const std::size_t ndim = p[6];
  std::size_t off = 7;
  if (n < off + 4 * ndim) throw std::runtime_error("tensor_read: truncated header in " + path);

  std::vector<std::size_t> shape(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = get_u32le(p + off);
    off += 4;
    if (shape[i] == 0) throw std::runtime_error("tensor_read: zero dim in " + path);
    count *= shape[i];
  }
  if (n != off + 4 * count) {
    throw std::runtime_error("tensor_read: payload length mismatch in " + path + " (expected " +
                             std::to_string(off + 4 * count) + " bytes, file has " +
                             std::to_string(n) + ")");
  }

  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32le(p + off + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = static_cast<double>(f);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace epiray
