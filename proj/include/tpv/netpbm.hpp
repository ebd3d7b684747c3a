#pragma once
// Binary PPM (P6, RGB) and PGM (P5, grayscale) image files, 8-bit.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpv/core.hpp"

namespace tpv {

inline void save_netpbm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::runtime_error("netpbm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        float v = std::max(0.f, std::min(1.f, img.at(c, y, x)));
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<unsigned char>(std::lrintf(v * 255.f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

namespace detail {
inline int pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one unsigned integer.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    c = in.get();
  }
  int v = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("malformed netpbm header");
  return v;
}
}  // namespace detail

inline Image load_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  char magic[2];
  in.read(magic, 2);
  int channels;
  if (magic[0] == 'P' && magic[1] == '6') channels = 3;
  else if (magic[0] == 'P' && magic[1] == '5') channels = 1;
  else throw std::runtime_error("expected P5/P6 netpbm: " + path.string());
  int w = detail::pnm_token(in);
  int h = detail::pnm_token(in);
  int maxval = detail::pnm_token(in);
  if (maxval != 255) throw std::runtime_error("expected 8-bit netpbm: " + path.string());
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("truncated netpbm: " + path.string());
  Image img;
  img.resize(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            static_cast<float>(raw[(static_cast<std::size_t>(y) * w + x) * channels + c]) / 255.f;
  return img;
}

}  // namespace tpv
