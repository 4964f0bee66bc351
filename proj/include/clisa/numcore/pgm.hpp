#pragma once

// Binary greyscale PGM (P5) with maxval 255.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clisa/numcore/ctns.hpp"

namespace clisa::pgm {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

inline std::vector<std::uint8_t> encode(const Image& img) {
  if (img.pixels.size() != img.width * img.height)
    throw DimensionError("PGM pixel count " + std::to_string(img.pixels.size()) + " for " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image decode(const std::vector<std::uint8_t>& b) {
  std::size_t off = 0;
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw ParseError("not a binary PGM (expected P5)", 0);
  off = 2;
  auto skip_space = [&] {
    while (off < b.size()) {
      if (b[off] == '#') {
        while (off < b.size() && b[off] != '\n') ++off;
      } else if (std::isspace(b[off])) {
        ++off;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = off;
    std::size_t v = 0;
    while (off < b.size() && std::isdigit(b[off])) {
      v = v * 10 + (b[off] - '0');
      if (v > 1u << 30) throw ParseError(std::string("PGM ") + what + " too large", start);
      ++off;
    }
    if (off == start) throw ParseError(std::string("PGM header: expected ") + what, start);
    return v;
  };
  Image img;
  img.width = number("width");
  img.height = number("height");
  skip_space();
  const std::size_t maxval_at = off;
  const std::size_t maxval = number("maxval");
  if (img.width == 0 || img.height == 0) throw ParseError("PGM with zero extent", maxval_at);
  if (maxval != 255) throw ParseError("PGM maxval " + std::to_string(maxval) + " (only 255 is accepted)", maxval_at);
  if (off >= b.size() || !std::isspace(b[off])) throw ParseError("PGM header must end in one whitespace byte", off);
  ++off;
  const std::size_t count = img.width * img.height;
  if (b.size() - off < count) throw ParseError("truncated PGM raster", b.size());
  if (b.size() - off > count) throw ParseError("trailing bytes after PGM raster", off + count);
  img.pixels.assign(b.begin() + long(off), b.end());
  return img;
}

inline void save(const std::filesystem::path& path, const Image& img) { ctns::write_bytes(path, encode(img)); }

inline Image load(const std::filesystem::path& path) {
  try {
    return decode(ctns::read_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace clisa::pgm
