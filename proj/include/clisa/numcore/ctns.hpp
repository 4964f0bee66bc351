#pragma once

// CTNS tensor container:
//   8-byte magic "CTNS0001", u8 dtype (1 = f32, 2 = f64), u8 rank,
//   rank x little-endian u32 dims, then the little-endian payload.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "clisa/numcore/tensor.hpp"

namespace clisa::ctns {

inline constexpr char kMagic[8] = {'C', 'T', 'N', 'S', '0', '0', '0', '1'};

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

template <Scalar T>
constexpr DType dtype_of() {
  return std::same_as<T, float> ? DType::F32 : DType::F64;
}

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.insert(out.end(), bytes, bytes + sizeof(U));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

}  // namespace detail

/// Serializes in the tensor's own precision.
template <Scalar T>
std::vector<std::uint8_t> encode(const Tensor<T>& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
  if (t.rank() > 255) throw DimensionError("CTNS supports rank <= 255");
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xffffffffu) throw DimensionError("CTNS dimension exceeds u32");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + t.size() * sizeof(T));
  for (T v : t.data()) detail::put_le<T>(out, v);
  return out;
}

/// Decodes into precision T. f32 payloads widen exactly into f64; narrowing f64 -> f32 rounds.
template <Scalar T>
Tensor<T> decode(const std::vector<std::uint8_t>& bytes) {
  std::size_t off = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() < off + n)
      throw ParseError(std::string("truncated CTNS data while reading ") + what, off);
  };
  need(8, "magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ParseError("bad CTNS magic", 0);
  off = 8;
  need(2, "header");
  const auto code = bytes[off];
  if (code != 1 && code != 2) throw ParseError("unknown CTNS dtype code " + std::to_string(code), off);
  const std::size_t rank = bytes[off + 1];
  off += 2;
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    need(4, "dims");
    shape[i] = detail::get_le<std::uint32_t>(bytes.data() + off);
    if (shape[i] == 0) throw ParseError("zero CTNS dimension", off);
    off += 4;
  }
  const std::size_t count = shape_size(shape);
  const std::size_t width = code == 1 ? 4 : 8;
  need(count * width, "payload");
  if (bytes.size() != off + count * width)
    throw ParseError("trailing bytes after CTNS payload", off + count * width);
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i, off += width) {
    if (code == 1)
      data[i] = static_cast<T>(detail::get_le<float>(bytes.data() + off));
    else
      data[i] = static_cast<T>(detail::get_le<double>(bytes.data() + off));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <Scalar T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  write_bytes(path, encode(t));
}

template <Scalar T>
Tensor<T> load(const std::filesystem::path& path) {
  try {
    return decode<T>(read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace clisa::ctns
