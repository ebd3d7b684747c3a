#pragma once
// Dataset module: deterministic synthetic trimodal data, the fixed-rate
// corruption procedure for the noisy condition, and identity-disjoint splits.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpv/core.hpp"
#include "tpv/netpbm.hpp"
#include "tpv/rng.hpp"
#include "tpv/wav.hpp"

namespace tpv {

struct SynthConfig {
  int n_identities = 20;
  int samples_per_identity = 30;
  double audio_seconds = 2.5;
  int image_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_identities < 2) throw std::runtime_error("n_identities must be >= 2");
    if (samples_per_identity < 2)
      throw std::runtime_error("samples_per_identity must be >= 2");
    if (audio_seconds < 1.0) throw std::runtime_error("audio_seconds must be >= 1");
    if (image_size < 8) throw std::runtime_error("image_size too small");
  }
};

struct CorruptionConfig {
  double rate = 0.3;
  double audio_snr_db_lo = 0.0;
  double audio_snr_db_hi = 15.0;
  double image_blur_sigma_lo = 1.0;
  double image_blur_sigma_hi = 3.0;
  double occlusion_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::runtime_error("rate must be in [0,1]");
    if (audio_snr_db_lo > audio_snr_db_hi) throw std::runtime_error("snr range low > high");
    if (image_blur_sigma_lo > image_blur_sigma_hi)
      throw std::runtime_error("blur sigma range low > high");
    if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0))
      throw std::runtime_error("occlusion_fraction must be in [0,1]");
  }
};

inline void validate_sample(const MultimodalSample& s) {
  if (s.audio.size() < static_cast<std::size_t>(s.sample_rate))
    throw std::runtime_error("sample '" + s.sample_id + "': audio shorter than 1 second");
  if (s.visual.height != s.thermal.height || s.visual.width != s.thermal.width)
    throw std::runtime_error("sample '" + s.sample_id +
                             "': visual and thermal spatial dimensions differ");
  for (Modality m : s.corrupted)
    if (m == Modality::fused)
      throw std::runtime_error("sample '" + s.sample_id + "': bad corruption flag");
}

namespace detail {

// Identity latent: the per-identity signature expressed in all modalities.
// Gender shifts the parameter ranges so that same-gender identities are
// closer than opposite-gender ones, which is what makes the hard protocol
// harder than the easy one.
struct IdentityLatent {
  // audio
  double f0 = 0.0;
  std::vector<double> harmonic_amp;
  // visual
  float base_rgb[3] = {0, 0, 0};
  struct Wave2d { double fx, fy, phase, amp; };
  std::vector<Wave2d> texture[3];
  // thermal
  double th_base = 0.0, blob_amp = 0.0, blob_sigma = 0.0;
  double blob_cx = 0.0, blob_cy = 0.0;
  double ring_freq = 0.0, ring_phase = 0.0, ring_amp = 0.0;
};

inline IdentityLatent make_identity_latent(Rng rng, Gender g) {
  IdentityLatent lat;
  lat.f0 = g == Gender::A ? rng.uniform(110.0, 160.0) : rng.uniform(185.0, 245.0);
  double decay = rng.uniform(0.25, 0.55);
  for (int k = 1; k <= 10; ++k)
    lat.harmonic_amp.push_back(std::exp(-decay * k) * rng.uniform(0.5, 1.5));

  const float base_a[3] = {0.55f, 0.45f, 0.40f};
  const float base_b[3] = {0.40f, 0.45f, 0.55f};
  for (int c = 0; c < 3; ++c) {
    lat.base_rgb[c] = (g == Gender::A ? base_a[c] : base_b[c]) +
                      static_cast<float>(rng.uniform(-0.06, 0.06));
    for (int j = 0; j < 4; ++j)
      lat.texture[c].push_back({rng.uniform(1.0, 4.0), rng.uniform(1.0, 4.0),
                                rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.03, 0.12)});
  }

  lat.th_base = (g == Gender::A ? 0.42 : 0.55) + rng.uniform(-0.04, 0.04);
  lat.blob_amp = rng.uniform(0.25, 0.40);
  lat.blob_sigma = rng.uniform(0.20, 0.35);
  lat.blob_cx = rng.uniform(-0.12, 0.12);
  lat.blob_cy = rng.uniform(-0.12, 0.12);
  lat.ring_freq = rng.uniform(6.0, 14.0);
  lat.ring_phase = rng.uniform(0.0, 2.0 * M_PI);
  lat.ring_amp = rng.uniform(0.04, 0.10);
  return lat;
}

inline std::vector<float> synth_audio(const IdentityLatent& lat, double seconds, int rate,
                                      Rng& rng) {
  const auto n = static_cast<std::size_t>(seconds * rate);
  double f0 = lat.f0 * (1.0 + 0.01 * rng.normal());
  double gain = 0.15 * (1.0 + 0.08 * rng.normal());
  double am_freq = rng.uniform(1.0, 3.0);
  double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<double> phase(lat.harmonic_amp.size());
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
  double norm = 0.0;
  for (double a : lat.harmonic_amp) norm += a * a * 0.5;
  norm = std::sqrt(norm);

  std::vector<float> wave(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double v = 0.0;
    for (std::size_t k = 0; k < lat.harmonic_amp.size(); ++k)
      v += lat.harmonic_amp[k] * std::sin(2.0 * M_PI * (k + 1) * f0 * t + phase[k]);
    double env = 1.0 + 0.1 * std::sin(2.0 * M_PI * am_freq * t + am_phase);
    wave[i] = static_cast<float>(gain * env * v / norm + 0.02 * rng.normal());
  }
  return wave;
}

inline Image synth_visual(const IdentityLatent& lat, int size, Rng& rng) {
  Image img;
  img.resize(3, size, size);
  float brightness = static_cast<float>(rng.uniform(-0.04, 0.04));
  double phase_jitter = rng.uniform(-0.15, 0.15);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = lat.base_rgb[c] + brightness;
        for (const auto& w : lat.texture[c])
          v += w.amp * std::cos(2.0 * M_PI * (w.fx * x + w.fy * y) / size + w.phase +
                               phase_jitter);
        v += 0.015 * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

inline Image synth_thermal(const IdentityLatent& lat, int size, Rng& rng) {
  Image img;
  img.resize(1, size, size);
  double base = lat.th_base + rng.uniform(-0.02, 0.02);
  double cx = (0.5 + lat.blob_cx + rng.uniform(-0.03, 0.03)) * size;
  double cy = (0.5 + lat.blob_cy + rng.uniform(-0.03, 0.03)) * size;
  double sigma = lat.blob_sigma * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      double r = std::sqrt(r2) / size;
      double v = base + lat.blob_amp * std::exp(-r2 / (2.0 * sigma * sigma)) +
                 lat.ring_amp * std::cos(lat.ring_freq * r * 2.0 * M_PI + lat.ring_phase);
      v += 0.015 * rng.normal();
      img.at(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return img;
}

}  // namespace detail

struct SynthDataset {
  std::vector<MultimodalSample> samples;
  Manifest manifest;  // paths relative to a dataset root, media not yet written
};

// Deterministic synthetic trimodal dataset. Each identity has a distinct
// latent signature expressed in all three modalities; per-sample jitter keeps
// same-identity samples non-identical.
inline SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  SynthDataset out;
  for (int i = 0; i < cfg.n_identities; ++i) {
    Gender g = i % 2 == 0 ? Gender::A : Gender::B;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "id%04d", i);
    auto latent = detail::make_identity_latent(root.fork("identity", i), g);
    for (int j = 0; j < cfg.samples_per_identity; ++j) {
      std::string session = j < cfg.samples_per_identity / 2 ? "s0" : "s1";
      char sidbuf[64];
      std::snprintf(sidbuf, sizeof sidbuf, "%s_%s_%03d", idbuf, session.c_str(), j);
      MultimodalSample s;
      s.sample_id = sidbuf;
      s.identity = Identity{idbuf, g};
      s.session = session;
      Rng srng = root.fork(s.sample_id);
      s.audio = detail::synth_audio(latent, cfg.audio_seconds, s.sample_rate,
                                    srng);
      s.visual = detail::synth_visual(latent, cfg.image_size, srng);
      s.thermal = detail::synth_thermal(latent, cfg.image_size, srng);
      validate_sample(s);

      ManifestEntry e;
      e.sample_id = s.sample_id;
      e.identity = s.identity;
      e.session = s.session;
      e.audio_path = "audio/" + s.sample_id + ".wav";
      e.visual_path = "visual/" + s.sample_id + ".ppm";
      e.thermal_path = "thermal/" + s.sample_id + ".pgm";
      out.manifest.push_back(std::move(e));
      out.samples.push_back(std::move(s));
    }
  }
  out.manifest = validate_manifest(std::move(out.manifest));
  std::sort(out.samples.begin(), out.samples.end(),
            [](const MultimodalSample& a, const MultimodalSample& b) {
              return a.sample_id < b.sample_id;
            });
  return out;
}

inline void write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "audio");
  fs::create_directories(dir / "visual");
  fs::create_directories(dir / "thermal");
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : ds.manifest) by_id[e.sample_id] = &e;
  for (const auto& s : ds.samples) {
    const auto* e = by_id.at(s.sample_id);
    save_wav(dir / e->audio_path, s.audio, s.sample_rate);
    save_netpbm(dir / e->visual_path, s.visual);
    save_netpbm(dir / e->thermal_path, s.thermal);
  }
}

inline std::vector<MultimodalSample> load_samples(const Manifest& manifest,
                                                  const std::filesystem::path& dir) {
  std::vector<MultimodalSample> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) {
    MultimodalSample s;
    s.sample_id = e.sample_id;
    s.identity = e.identity;
    s.session = e.session;
    s.audio = load_wav(dir / e.audio_path, &s.sample_rate);
    s.visual = load_netpbm(dir / e.visual_path);
    s.thermal = load_netpbm(dir / e.thermal_path);
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline void gaussian_blur(Image& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);

  Image tmp = img;
  // horizontal pass, clamped borders
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.width - 1));
        tmp.at(c, y, x) = acc;
      }
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.height - 1), x);
        img.at(c, y, x) = acc;
      }
}

inline void occlude(Image& img, double fraction, Rng& rng) {
  if (fraction <= 0.0) return;
  int hh = std::min(img.height, std::max(1, static_cast<int>(std::lround(std::sqrt(fraction) * img.height))));
  int ww = std::min(img.width, std::max(1, static_cast<int>(std::lround(std::sqrt(fraction) * img.width))));
  int oy = static_cast<int>(rng.uniform_int(img.height - hh + 1));
  int ox = static_cast<int>(rng.uniform_int(img.width - ww + 1));
  for (int c = 0; c < img.channels; ++c)
    for (int y = oy; y < oy + hh; ++y)
      for (int x = ox; x < ox + ww; ++x) img.at(c, y, x) = 0.f;
}

// Additive white noise scaled so the measured SNR equals snr_db exactly
// (up to rounding of the stored PCM).
inline void add_noise_at_snr(std::vector<float>& audio, double snr_db, Rng& rng) {
  double p_sig = 0.0;
  for (float v : audio) p_sig += static_cast<double>(v) * v;
  p_sig /= static_cast<double>(audio.size());
  if (p_sig <= 0.0) return;
  std::vector<double> noise(audio.size());
  double p_noise = 0.0;
  for (auto& v : noise) {
    v = rng.normal();
    p_noise += v * v;
  }
  p_noise /= static_cast<double>(noise.size());
  double target = p_sig / std::pow(10.0, snr_db / 10.0);
  double scale = std::sqrt(target / p_noise);
  for (std::size_t i = 0; i < audio.size(); ++i)
    audio[i] = static_cast<float>(audio[i] + scale * noise[i]);
}

}  // namespace detail

// For each modality independently, corrupts a deterministic pseudo-random
// subset of exactly round(rate * N) samples. Untouched samples are returned
// bit-identical; corrupting an already-flagged modality is a no-op.
inline std::vector<MultimodalSample> corrupt_dataset(std::vector<MultimodalSample> samples,
                                                     const CorruptionConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw std::runtime_error("corrupt_dataset: empty input");
  const std::size_t n = samples.size();
  const auto k = static_cast<std::size_t>(std::lround(cfg.rate * static_cast<double>(n)));

  Rng root(cfg.seed);
  for (Modality m : {Modality::audio, Modality::visual, Modality::thermal}) {
    // Selection is keyed by sample_id so it is stable across input orderings.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return samples[a].sample_id < samples[b].sample_id;
    });
    Rng sel = root.fork("select:" + to_string(m));
    sel.shuffle(order);
    for (std::size_t i = 0; i < k; ++i) {
      MultimodalSample& s = samples[order[i]];
      if (s.corrupted.count(m)) continue;  // flags are a set; re-corruption is a no-op
      Rng srng = root.fork("corrupt:" + to_string(m) + ":" + s.sample_id);
      switch (m) {
        case Modality::audio: {
          double snr = srng.uniform(cfg.audio_snr_db_lo, cfg.audio_snr_db_hi);
          detail::add_noise_at_snr(s.audio, snr, srng);
          break;
        }
        case Modality::visual:
        case Modality::thermal: {
          Image& img = m == Modality::visual ? s.visual : s.thermal;
          double sigma = srng.uniform(cfg.image_blur_sigma_lo, cfg.image_blur_sigma_hi);
          if (sigma > 0.0) detail::gaussian_blur(img, sigma);
          detail::occlude(img, cfg.occlusion_fraction, srng);
          for (auto& v : img.data) v = std::clamp(v, 0.f, 1.f);
          break;
        }
        default: break;
      }
      s.corrupted.insert(m);
    }
  }
  return samples;
}

struct SplitFractions {
  double train = 0.8, valid = 0.1, test = 0.1;
};

struct DatasetSplits {
  Manifest train, valid, test;
};

// Identity-disjoint split, stratified by gender, deterministic given seed.
inline DatasetSplits split_dataset(const Manifest& manifest, const SplitFractions& fractions,
                                   std::uint64_t seed) {
  double sum = fractions.train + fractions.valid + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::runtime_error("split fractions must sum to 1");

  std::map<std::string, Gender> ids;
  for (const auto& e : manifest) ids[e.identity.id] = e.identity.gender;

  Rng rng(seed);
  std::array<std::vector<std::string>, 2> by_gender;
  for (const auto& [id, g] : ids) by_gender[g == Gender::A ? 0 : 1].push_back(id);

  const double fr[3] = {fractions.train, fractions.valid, fractions.test};
  std::array<std::set<std::string>, 3> assigned;
  for (int gi = 0; gi < 2; ++gi) {
    auto& list = by_gender[gi];
    Rng grng = rng.fork("gender", gi);
    grng.shuffle(list);
    const auto ng = list.size();
    std::size_t base[3];
    double rem[3];
    std::size_t used = 0;
    for (int s = 0; s < 3; ++s) {
      double q = fr[s] * static_cast<double>(ng);
      base[s] = static_cast<std::size_t>(std::floor(q + 1e-12));
      rem[s] = q - static_cast<double>(base[s]);
      used += base[s];
    }
    // Largest remainder; remainder ties alternate across genders so that
    // e.g. (0.8,0.1,0.1) of 5+5 identities lands 8/1/1.
    std::vector<int> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (rem[a] != rem[b]) return rem[a] > rem[b];
      return (a + gi) % 3 < (b + gi) % 3;
    });
    for (std::size_t left = ng - used, i = 0; i < left; ++i) base[order[i % 3]]++;
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < base[s]; ++i) assigned[s].insert(list[pos++]);
  }

  const char* names[3] = {"train", "valid", "test"};
  for (int s = 0; s < 3; ++s)
    if (assigned[s].empty())
      throw std::runtime_error(std::string("split '") + names[s] +
                               "' would receive zero identities");

  DatasetSplits out;
  Manifest* parts[3] = {&out.train, &out.valid, &out.test};
  for (const auto& e : manifest)
    for (int s = 0; s < 3; ++s)
      if (assigned[s].count(e.identity.id)) parts[s]->push_back(e);
  return out;
}

}  // namespace tpv
