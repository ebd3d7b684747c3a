#pragma once
// Feature frontends: log-mel filterbank energies for audio, resize/normalize
// (plus train-time augmentation) for images.

#include <Eigen/Core>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "tpv/core.hpp"
#include "tpv/rng.hpp"

namespace tpv {

using FeatMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FeatureMode { train, eval };

struct AudioFeatureConfig {
  int sample_rate = 16000;
  int n_mels = 40;
  int window_ms = 25;
  int hop_ms = 10;
  double crop_seconds = 2.0;  // train mode only
  double log_floor = 1e-10;

  void validate() const {
    if (n_mels < 1) throw std::runtime_error("n_mels must be >= 1");
    if (!(window_ms > hop_ms && hop_ms > 0))
      throw std::runtime_error("need window_ms > hop_ms > 0");
    if (sample_rate <= 0) throw std::runtime_error("bad sample_rate");
  }
};

struct ImageFeatureConfig {
  int target_size = 128;
  int channels = 3;  // 3 visual, 1 thermal
  std::vector<float> mean{0.5f, 0.5f, 0.5f};
  std::vector<float> stddev{0.5f, 0.5f, 0.5f};
  bool augment_crop = true;
  bool augment_hflip = true;  // off for thermal by default at config level

  void validate() const {
    if (target_size <= 0 || target_size % 32 != 0)
      throw std::runtime_error("target_size must be a positive multiple of 32");
    if (channels != 1 && channels != 3)
      throw std::runtime_error("channels must be 1 or 3");
  }
};

namespace detail {

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over FFT power bins [0, n_fft/2].
inline std::vector<std::vector<float>> mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  int n_bins = n_fft / 2 + 1;
  double fmax = sample_rate / 2.0;
  double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  std::vector<std::vector<float>> fb(n_mels, std::vector<float>(n_bins, 0.f));
  for (int m = 0; m < n_mels; ++m) {
    double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int b = 0; b < n_bins; ++b) {
      double f = static_cast<double>(b) * sample_rate / n_fft;
      if (f > lo && f < hi) {
        double w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        fb[m][b] = static_cast<float>(w);
      }
    }
  }
  return fb;
}

}  // namespace detail

// Log-mel filterbank energies, mean-normalized per bin over time.
// Output is [T x n_mels] with T = floor((len - window) / hop) + 1.
inline FeatMat audio_features(const std::vector<float>& waveform, const AudioFeatureConfig& cfg,
                              FeatureMode mode, Rng* rng = nullptr) {
  cfg.validate();
  const int window = cfg.sample_rate * cfg.window_ms / 1000;
  const int hop = cfg.sample_rate * cfg.hop_ms / 1000;

  std::size_t begin = 0, len = waveform.size();
  if (mode == FeatureMode::train) {
    if (!rng) throw std::runtime_error("train-mode audio_features needs an rng");
    auto crop = static_cast<std::size_t>(cfg.crop_seconds * cfg.sample_rate);
    if (crop < static_cast<std::size_t>(window)) throw std::runtime_error("crop shorter than one window");
    if (crop < len) {
      begin = rng->uniform_int(len - crop + 1);
      len = crop;
    }
  }
  if (len < static_cast<std::size_t>(window))
    throw std::runtime_error("waveform shorter than one analysis window");

  const int T = static_cast<int>((len - window) / hop) + 1;
  int n_fft = 1;
  while (n_fft < window) n_fft <<= 1;

  std::vector<double> ham(window);
  for (int i = 0; i < window; ++i)
    ham[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (window - 1));

  static thread_local std::vector<std::vector<float>> fb;
  static thread_local int fb_mels = -1, fb_fft = -1, fb_rate = -1;
  if (fb_mels != cfg.n_mels || fb_fft != n_fft || fb_rate != cfg.sample_rate) {
    fb = detail::mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate);
    fb_mels = cfg.n_mels;
    fb_fft = n_fft;
    fb_rate = cfg.sample_rate;
  }

  FeatMat feats(T, cfg.n_mels);
  std::vector<std::complex<double>> frame(n_fft);
  const int n_bins = n_fft / 2 + 1;
  std::vector<double> power(n_bins);
  for (int t = 0; t < T; ++t) {
    std::size_t off = begin + static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i)
      frame[i] = i < window ? std::complex<double>(waveform[off + i] * ham[i], 0.0)
                            : std::complex<double>(0.0, 0.0);
    detail::fft_radix2(frame);
    for (int b = 0; b < n_bins; ++b) power[b] = std::norm(frame[b]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& w = fb[m];
      for (int b = 0; b < n_bins; ++b) e += w[b] * power[b];
      feats(t, m) = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }

  // Per-bin cepstral mean normalization over time.
  Eigen::RowVectorXf mean = feats.colwise().mean();
  feats.rowwise() -= mean;
  return feats;
}

// Bilinear resize of planar images.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  Image dst;
  dst.resize(src.channels, out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.height - 1), y1c = std::clamp(y0 + 1, 0, src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.width - 1), x1c = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < src.channels; ++c) {
        double top = (1 - wx) * src.at(c, y0c, x0c) + wx * src.at(c, y0c, x1c);
        double bot = (1 - wx) * src.at(c, y1c, x0c) + wx * src.at(c, y1c, x1c);
        dst.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

// Resized, normalized image features as [C x S x S]; train-mode augmentation
// (random crop window, optional horizontal flip) is deterministic under rng.
inline Image image_features(const Image& image, const ImageFeatureConfig& cfg, FeatureMode mode,
                            Rng* rng = nullptr) {
  cfg.validate();
  if (image.height <= 0 || image.width <= 0 || image.data.empty())
    throw std::runtime_error("empty image");
  if (image.channels != cfg.channels)
    throw std::runtime_error("image has " + std::to_string(image.channels) +
                             " channels, config expects " + std::to_string(cfg.channels));

  Image work = image;
  if (mode == FeatureMode::train) {
    if (!rng) throw std::runtime_error("train-mode image_features needs an rng");
    if (cfg.augment_crop) {
      int ch = std::max(1, static_cast<int>(std::lround(image.height * 0.875)));
      int cw = std::max(1, static_cast<int>(std::lround(image.width * 0.875)));
      int oy = static_cast<int>(rng->uniform_int(image.height - ch + 1));
      int ox = static_cast<int>(rng->uniform_int(image.width - cw + 1));
      Image crop;
      crop.resize(image.channels, ch, cw);
      for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < ch; ++y)
          for (int x = 0; x < cw; ++x) crop.at(c, y, x) = image.at(c, oy + y, ox + x);
      work = std::move(crop);
    }
    bool flip = cfg.augment_hflip && rng->uniform() < 0.5;
    if (flip) {
      for (int c = 0; c < work.channels; ++c)
        for (int y = 0; y < work.height; ++y)
          for (int x = 0; x < work.width / 2; ++x)
            std::swap(work.at(c, y, x), work.at(c, y, work.width - 1 - x));
    }
  }

  if (work.height != cfg.target_size || work.width != cfg.target_size)
    work = resize_bilinear(work, cfg.target_size, cfg.target_size);

  for (int c = 0; c < work.channels; ++c) {
    float m = cfg.mean[std::min<std::size_t>(c, cfg.mean.size() - 1)];
    float s = cfg.stddev[std::min<std::size_t>(c, cfg.stddev.size() - 1)];
    for (int y = 0; y < work.height; ++y)
      for (int x = 0; x < work.width; ++x) work.at(c, y, x) = (work.at(c, y, x) - m) / s;
  }
  return work;
}

}  // namespace tpv
