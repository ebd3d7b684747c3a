#pragma once
// 34-layer residual encoder with two pooling variants:
//  - global average pooling over h*w (image inputs)
//  - frequency-mean + self-attentive pooling over time (spectrogram inputs)
// A linear head maps the final stage width to the embedding dimension.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tpv/nn/layers.hpp"
#include "tpv/nn/sap.hpp"

namespace tpv::nn {

template <typename S>
class Net {
 public:
  void add(std::unique_ptr<Layer<S>> layer) { layers_.push_back(std::move(layer)); }

  // in and out must be distinct objects.
  void forward(const Batch<S>& in, Batch<S>& out, bool train) {
    const Batch<S>* cur = &in;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Batch<S>& dst = (i + 1 == layers_.size()) ? out : buf_[i % 2];
      layers_[i]->forward(*cur, dst, train);
      cur = &dst;
    }
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) {
    const Batch<S>* cur = &grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Batch<S>& dst = (i == 0) ? grad_in : gbuf_[i % 2];
      layers_[i]->backward(*cur, dst);
      cur = &dst;
    }
  }

  void collect(ParamRefs<S>& params) {
    for (auto& l : layers_) l->collect(params);
  }

  void collect_state(StateRefs<S>& state) {
    for (auto& l : layers_) l->collect_state(state);
  }

  std::size_t size() const { return layers_.size(); }
  Layer<S>* layer(std::size_t i) { return layers_[i].get(); }

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  Batch<S> buf_[2], gbuf_[2];
};

template <typename S>
class BasicBlock : public Layer<S> {
 public:
  BasicBlock(const std::string& name, int in_ch, int out_ch, int stride, const Rng& rng)
      : conv1_(name + ".conv1", in_ch, out_ch, 3, stride, 1, rng.fork(name + ".conv1")),
        bn1_(name + ".bn1", out_ch),
        conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, rng.fork(name + ".conv2")),
        bn2_(name + ".bn2", out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      down_conv_ = std::make_unique<Conv2d<S>>(name + ".down", in_ch, out_ch, 1, stride, 0,
                                               rng.fork(name + ".down"));
      down_bn_ = std::make_unique<BatchNorm2d<S>>(name + ".down_bn", out_ch);
    }
  }

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    conv1_.forward(in, t1_, train);
    bn1_.forward(t1_, t2_, train);
    relu1_.forward(t2_, t1_, train);
    conv2_.forward(t1_, t2_, train);
    bn2_.forward(t2_, main_, train);
    const Batch<S>* shortcut = &in;
    if (down_conv_) {
      down_conv_->forward(in, t1_, train);
      down_bn_->forward(t1_, short_, train);
      shortcut = &short_;
    }
    out.resize(main_.channels(), main_.n, main_.h, main_.w);
    out.data = main_.data + shortcut->data;
    if (train) {
      mask_ = (out.data.array() > S(0)).template cast<S>();
      out.data = out.data.cwiseProduct(mask_);
    } else {
      out.data = out.data.cwiseMax(S(0));
      mask_.resize(0, 0);
    }
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (mask_.size() == 0) throw std::runtime_error("block: backward without train forward");
    dsum_.resize(grad_out.channels(), grad_out.n, grad_out.h, grad_out.w);
    dsum_.data = grad_out.data.cwiseProduct(mask_);
    bn2_.backward(dsum_, ga_);
    conv2_.backward(ga_, gb_);
    relu1_.backward(gb_, ga_);
    bn1_.backward(ga_, gb_);
    conv1_.backward(gb_, grad_in);
    if (down_conv_) {
      down_bn_->backward(dsum_, ga_);
      down_conv_->backward(ga_, gb_);
      grad_in.data += gb_.data;
    } else {
      grad_in.data += dsum_.data;
    }
  }

  void collect(ParamRefs<S>& params) override {
    conv1_.collect(params);
    bn1_.collect(params);
    conv2_.collect(params);
    bn2_.collect(params);
    if (down_conv_) {
      down_conv_->collect(params);
      down_bn_->collect(params);
    }
  }

  void collect_state(StateRefs<S>& state) override {
    bn1_.collect_state(state);
    bn2_.collect_state(state);
    if (down_bn_) down_bn_->collect_state(state);
  }

 private:
  Conv2d<S> conv1_;
  BatchNorm2d<S> bn1_;
  ReLU<S> relu1_;
  Conv2d<S> conv2_;
  BatchNorm2d<S> bn2_;
  std::unique_ptr<Conv2d<S>> down_conv_;
  std::unique_ptr<BatchNorm2d<S>> down_bn_;
  Batch<S> t1_, t2_, main_, short_, dsum_, ga_, gb_;
  Mat<S> mask_;
};

enum class PoolKind { global_avg, sap };

struct ResNetConfig {
  int input_channels = 1;
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  std::array<int, 4> blocks{3, 4, 6, 3};
  PoolKind pooling = PoolKind::global_avg;
  int embed_dim = 512;
};

template <typename S>
class ResNetEncoder {
 public:
  ResNetEncoder(const ResNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng root(seed);
    net_.add(std::make_unique<Conv2d<S>>("stem", cfg.input_channels, cfg.stage_widths[0], 7, 2,
                                         3, root.fork("stem")));
    net_.add(std::make_unique<BatchNorm2d<S>>("stem_bn", cfg.stage_widths[0]));
    net_.add(std::make_unique<ReLU<S>>());
    net_.add(std::make_unique<MaxPool2d<S>>(3, 2, 1));
    int in_ch = cfg.stage_widths[0];
    for (int s = 0; s < 4; ++s) {
      const int width = cfg.stage_widths[s];
      for (int b = 0; b < cfg.blocks[s]; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        std::string name = "s" + std::to_string(s + 1) + ".b" + std::to_string(b);
        net_.add(std::make_unique<BasicBlock<S>>(name, in_ch, width, stride, root.fork(name)));
        in_ch = width;
      }
    }
    if (cfg.pooling == PoolKind::sap) {
      net_.add(std::make_unique<FreqMeanPool<S>>());
      sap_params_ = std::make_unique<SapParams<S>>();
      sap_params_->init(in_ch, "sap", root.fork("sap"));
      net_.add(std::make_unique<SapPool<S>>(sap_params_.get()));
    } else {
      net_.add(std::make_unique<GlobalAvgPool<S>>());
    }
    net_.add(std::make_unique<Linear<S>>("head", in_ch, cfg.embed_dim, root.fork("head")));
  }

  // in: [input_channels x n*h*w]; out: [embed_dim x n], unnormalized.
  void forward(const Batch<S>& in, Batch<S>& out, bool train) { net_.forward(in, out, train); }
  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) { net_.backward(grad_out, grad_in); }

  ParamRefs<S> params() {
    ParamRefs<S> refs;
    net_.collect(refs);
    return refs;
  }

  StateRefs<S> state() {
    StateRefs<S> refs;
    net_.collect_state(refs);
    return refs;
  }

  const ResNetConfig& config() const { return cfg_; }
  SapParams<S>* sap() { return sap_params_.get(); }
  Net<S>& net() { return net_; }

 private:
  ResNetConfig cfg_;
  Net<S> net_;
  std::unique_ptr<SapParams<S>> sap_params_;
};

}  // namespace tpv::nn
