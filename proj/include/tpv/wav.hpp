#pragma once
// Minimal 16-bit PCM mono WAV reader/writer.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpv {

namespace detail {
inline void put_u32(std::ofstream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}
inline void put_u16(std::ofstream& out, std::uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
}
}  // namespace detail

inline void save_wav(const std::filesystem::path& path, const std::vector<float>& samples,
                     int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav: " + path.string());
  std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  detail::put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.write("data", 4);
  detail::put_u32(out, data_bytes);
  for (float s : samples) {
    float c = std::max(-1.f, std::min(1.f, s));
    auto v = static_cast<std::int16_t>(std::lrintf(c * 32767.f));
    detail::put_u16(out, static_cast<std::uint16_t>(v));
  }
}

inline std::vector<float> load_wav(const std::filesystem::path& path, int* sample_rate = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path.string());

  std::size_t pos = 12;
  int rate = 0, channels = 0, bits = 0;
  std::vector<float> samples;
  while (pos + 8 <= buf.size()) {
    std::uint32_t chunk_size = detail::get_u32(buf.data() + pos + 4);
    bool is_fmt = std::memcmp(buf.data() + pos, "fmt ", 4) == 0;
    bool is_data = std::memcmp(buf.data() + pos, "data", 4) == 0;
    std::size_t body = pos + 8;
    if (is_fmt) {
      if (body + 16 > buf.size()) throw std::runtime_error("truncated fmt chunk");
      if (detail::get_u16(buf.data() + body) != 1)
        throw std::runtime_error("only PCM wav supported: " + path.string());
      channels = detail::get_u16(buf.data() + body + 2);
      rate = static_cast<int>(detail::get_u32(buf.data() + body + 4));
      bits = detail::get_u16(buf.data() + body + 14);
    } else if (is_data) {
      if (channels != 1 || bits != 16)
        throw std::runtime_error("expected 16-bit mono wav: " + path.string());
      std::size_t n = std::min<std::size_t>(chunk_size, buf.size() - body) / 2;
      samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto v = static_cast<std::int16_t>(detail::get_u16(buf.data() + body + 2 * i));
        samples[i] = static_cast<float>(v) / 32767.f;
      }
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  if (samples.empty()) throw std::runtime_error("wav has no data chunk: " + path.string());
  if (sample_rate) *sample_rate = rate;
  return samples;
}

}  // namespace tpv
