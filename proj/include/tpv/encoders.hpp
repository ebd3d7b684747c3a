#pragma once
// Modality encoder specs and embedding extraction. Image encoders use the
// halved-width residual-34 with global average pooling; the audio encoder
// uses full widths with self-attentive pooling over time frames.

#include <array>
#include <stdexcept>

#include "tpv/core.hpp"
#include "tpv/frontend.hpp"
#include "tpv/nn/resnet.hpp"

namespace tpv {

inline constexpr std::array<int, 4> kStandardWidths{64, 128, 256, 512};
inline constexpr std::array<int, 4> kResnet34Blocks{3, 4, 6, 3};

struct ImageEncoderSpec {
  std::array<int, 4> stage_widths{32, 64, 128, 256};
  std::array<int, 4> blocks_per_stage{3, 4, 6, 3};
  int input_channels = 3;
  int embed_dim = kEmbedDim;

  void validate() const {
    for (int s = 0; s < 4; ++s)
      if (stage_widths[s] * 2 != kStandardWidths[s])
        throw std::invalid_argument("image encoder widths must be half the standard widths");
    if (input_channels != 1 && input_channels != 3)
      throw std::invalid_argument("image encoder expects 1 or 3 input channels");
    if (embed_dim < 1) throw std::invalid_argument("embed_dim must be positive");
  }
};

struct AudioEncoderSpec {
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  std::array<int, 4> blocks_per_stage{3, 4, 6, 3};
  int embed_dim = kEmbedDim;

  void validate() const {
    if (stage_widths != kStandardWidths)
      throw std::invalid_argument("audio encoder uses the standard stage widths");
    if (embed_dim < 1) throw std::invalid_argument("embed_dim must be positive");
  }
};

using SapParams = nn::SapParams<double>;
using nn::sap_pool;

inline nn::ResNetConfig encoder_config(const ImageEncoderSpec& spec) {
  spec.validate();
  nn::ResNetConfig cfg;
  cfg.input_channels = spec.input_channels;
  cfg.stage_widths = spec.stage_widths;
  cfg.blocks = spec.blocks_per_stage;
  cfg.pooling = nn::PoolKind::global_avg;
  cfg.embed_dim = spec.embed_dim;
  return cfg;
}

inline nn::ResNetConfig encoder_config(const AudioEncoderSpec& spec) {
  spec.validate();
  nn::ResNetConfig cfg;
  cfg.input_channels = 1;
  cfg.stage_widths = spec.stage_widths;
  cfg.blocks = spec.blocks_per_stage;
  cfg.pooling = nn::PoolKind::sap;
  cfg.embed_dim = spec.embed_dim;
  return cfg;
}

inline nn::ResNetConfig encoder_config_for(Modality m, int image_channels = 3) {
  if (m == Modality::audio) return encoder_config(AudioEncoderSpec{});
  ImageEncoderSpec spec;
  spec.input_channels = (m == Modality::thermal) ? 1 : image_channels;
  return encoder_config(spec);
}

// Pack frontend outputs into network input batches.
template <typename S>
void batch_from_image(const Image& img, nn::Batch<S>& out, int slot) {
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out.data(c, static_cast<Eigen::Index>(slot) * out.spatial() + static_cast<Eigen::Index>(i)) =
          static_cast<S>(img.data[c * plane + i]);
}

template <typename S>
void batch_from_feats(const FeatMat& feats, nn::Batch<S>& out, int slot) {
  // [T x n_mels] becomes a 1-channel image: h = T, w = n_mels.
  const Eigen::Index base = static_cast<Eigen::Index>(slot) * out.spatial();
  for (Eigen::Index t = 0; t < feats.rows(); ++t)
    for (Eigen::Index f = 0; f < feats.cols(); ++f)
      out.data(0, base + t * feats.cols() + f) = static_cast<S>(feats(t, f));
}

// Eval-mode embedding of a single feature batch; output columns are
// L2-normalized. Throws on non-finite activations.
template <typename S>
Eigen::MatrixXd embed_batch(nn::ResNetEncoder<S>& enc, const nn::Batch<S>& feats) {
  nn::Batch<S> out;
  enc.forward(feats, out, /*train=*/false);
  if (!out.data.allFinite())
    throw std::runtime_error("encoder produced non-finite activations");
  Eigen::MatrixXd emb = out.data.template cast<double>();
  for (Eigen::Index j = 0; j < emb.cols(); ++j) {
    const double n = emb.col(j).norm();
    if (n <= 0 || !std::isfinite(n)) throw std::runtime_error("zero-norm embedding");
    emb.col(j) /= n;
  }
  return emb;
}

template <typename S>
Embedding encode(const FeatMat& audio_feats, nn::ResNetEncoder<S>& enc,
                 const std::string& sample_id) {
  if (enc.config().pooling != nn::PoolKind::sap)
    throw std::invalid_argument("audio features require the SAP encoder variant");
  nn::Batch<S> in;
  in.resize(1, 1, static_cast<int>(audio_feats.rows()), static_cast<int>(audio_feats.cols()));
  batch_from_feats(audio_feats, in, 0);
  Eigen::MatrixXd emb = embed_batch(enc, in);
  return make_embedding(emb.col(0), Modality::audio, sample_id);
}

template <typename S>
Embedding encode(const Image& image, nn::ResNetEncoder<S>& enc, Modality modality,
                 const std::string& sample_id) {
  if (image.channels != enc.config().input_channels)
    throw std::invalid_argument("image channel count does not match encoder spec");
  nn::Batch<S> in;
  in.resize(image.channels, 1, image.height, image.width);
  batch_from_image(image, in, 0);
  Eigen::MatrixXd emb = embed_batch(enc, in);
  return make_embedding(emb.col(0), modality, sample_id);
}

inline long long count_parameters(const nn::ResNetConfig& cfg) {
  nn::ResNetEncoder<float> enc(cfg, 0);
  auto refs = enc.params();
  return static_cast<long long>(nn::count_params(refs));
}

inline long long count_parameters(const ImageEncoderSpec& spec) {
  return count_parameters(encoder_config(spec));
}

inline long long count_parameters(const AudioEncoderSpec& spec) {
  return count_parameters(encoder_config(spec));
}

}  // namespace tpv
