#pragma once
// Metric-learning training for unimodal encoders and the jointly trained
// attention-fused system. Batches are N identities x M samples; the default
// loss is angular prototypical. Every random choice (init, batch sampling,
// augmentation) derives from the config seed, so runs are reproducible.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tpv/checkpoint.hpp"
#include "tpv/core.hpp"
#include "tpv/encoders.hpp"
#include "tpv/evaluation.hpp"
#include "tpv/frontend.hpp"
#include "tpv/fusion.hpp"
#include "tpv/loss.hpp"
#include "tpv/nn/adam.hpp"

namespace tpv {

enum class LossKind { angular_prototypical, softmax_classifier };
enum class FusionMode { none, attention };

inline std::string to_string(LossKind k) {
  return k == LossKind::angular_prototypical ? "angular_prototypical" : "softmax_classifier";
}
inline std::string to_string(FusionMode m) {
  return m == FusionMode::none ? "none" : "attention";
}

struct TrainConfig {
  LossKind loss = LossKind::angular_prototypical;
  int batch_identities = 16;  // N
  int batch_samples = 2;      // M
  int epochs = 10;
  int steps_per_epoch = 0;  // 0 = one pass over the train set (in expectation)
  double learning_rate = 1e-3;
  double lr_decay = 0.95;  // per-epoch multiplier
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::vector<Modality> modality_set{Modality::audio, Modality::visual, Modality::thermal};
  FusionMode fusion_mode = FusionMode::none;

  AudioFeatureConfig audio_features;
  ImageFeatureConfig visual_features;
  ImageFeatureConfig thermal_features;

  int valid_trials = 200;  // per class, capped by availability

  // Encoder architectures; empty entries fall back to the standard specs.
  std::map<Modality, nn::ResNetConfig> arch;

  // Optional unimodal checkpoints to warm-start fused training from.
  std::map<Modality, std::filesystem::path> warm_start;

  void validate() const {
    if (batch_identities < 2) throw std::invalid_argument("batch needs >= 2 identities");
    if (batch_samples < 2) throw std::invalid_argument("batch needs >= 2 samples per identity");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("lr_decay must be in (0,1]");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (modality_set.empty()) throw std::invalid_argument("modality_set is empty");
    std::set<Modality> uniq(modality_set.begin(), modality_set.end());
    if (uniq.size() != modality_set.size() || uniq.count(Modality::fused))
      throw std::invalid_argument("modality_set must be distinct raw modalities");
    if (fusion_mode == FusionMode::attention && modality_set.size() < 2)
      throw std::invalid_argument("attention fusion needs >= 2 modalities");
    audio_features.validate();
    visual_features.validate();
    thermal_features.validate();
  }

  nn::ResNetConfig arch_for(Modality m) const {
    auto it = arch.find(m);
    if (it != arch.end()) return it->second;
    return encoder_config_for(m, m == Modality::visual ? visual_features.channels
                                                       : thermal_features.channels);
  }

  const ImageFeatureConfig& image_features_for(Modality m) const {
    return m == Modality::visual ? visual_features : thermal_features;
  }
};

struct MetricRecord {
  int epoch = 0;
  std::string split;   // "train" | "valid"
  std::string metric;  // "loss" | "accuracy" | "eer" | "lr"
  double value = 0;
};

inline nlohmann::json history_to_json(const std::vector<MetricRecord>& history) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : history)
    j.push_back({{"epoch", r.epoch}, {"split", r.split}, {"metric", r.metric}, {"value", r.value}});
  return j;
}

inline std::vector<MetricRecord> history_from_json(const nlohmann::json& j) {
  std::vector<MetricRecord> h;
  for (const auto& e : j)
    h.push_back({e.at("epoch").get<int>(), e.at("split").get<std::string>(),
                 e.at("metric").get<std::string>(), e.at("value").get<double>()});
  return h;
}

inline void write_metrics_log(const std::filesystem::path& path,
                              const std::vector<MetricRecord>& history) {
  std::string out = "epoch\tsplit\tmetric\tvalue\n";
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.value);
    out += std::to_string(r.epoch) + '\t' + r.split + '\t' + r.metric + '\t' + buf + '\n';
  }
  atomic_write_file(path, out);
}

struct CheckpointBundle {
  std::map<Modality, std::shared_ptr<nn::ResNetEncoder<float>>> encoders;
  std::shared_ptr<AttentionFusionParamsT<float>> fusion;
  TrainConfig config;
  std::vector<MetricRecord> history;
  double best_valid_eer = 1.0;
  int best_epoch = -1;
};

inline nlohmann::json audio_features_to_json(const AudioFeatureConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"n_mels", c.n_mels},       {"window_ms", c.window_ms},
          {"hop_ms", c.hop_ms},           {"crop_seconds", c.crop_seconds}};
}

inline AudioFeatureConfig audio_features_from_json(const nlohmann::json& j) {
  AudioFeatureConfig c;
  c.sample_rate = j.at("sample_rate").get<int>();
  c.n_mels = j.at("n_mels").get<int>();
  c.window_ms = j.at("window_ms").get<int>();
  c.hop_ms = j.at("hop_ms").get<int>();
  c.crop_seconds = j.at("crop_seconds").get<double>();
  return c;
}

inline nlohmann::json image_features_to_json(const ImageFeatureConfig& c) {
  return {{"target_size", c.target_size},
          {"channels", c.channels},
          {"augment_crop", c.augment_crop},
          {"augment_hflip", c.augment_hflip}};
}

inline ImageFeatureConfig image_features_from_json(const nlohmann::json& j) {
  ImageFeatureConfig c;
  c.target_size = j.at("target_size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.augment_crop = j.at("augment_crop").get<bool>();
  c.augment_hflip = j.at("augment_hflip").get<bool>();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json mods = nlohmann::json::array();
  for (auto m : cfg.modality_set) mods.push_back(to_string(m));
  return {{"loss", to_string(cfg.loss)},
          {"batch_identities", cfg.batch_identities},
          {"batch_samples", cfg.batch_samples},
          {"epochs", cfg.epochs},
          {"steps_per_epoch", cfg.steps_per_epoch},
          {"learning_rate", cfg.learning_rate},
          {"lr_decay", cfg.lr_decay},
          {"weight_decay", cfg.weight_decay},
          {"seed", cfg.seed},
          {"modality_set", mods},
          {"fusion_mode", to_string(cfg.fusion_mode)},
          {"valid_trials", cfg.valid_trials},
          {"audio_features", audio_features_to_json(cfg.audio_features)},
          {"visual_features", image_features_to_json(cfg.visual_features)},
          {"thermal_features", image_features_to_json(cfg.thermal_features)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const std::string loss = j.at("loss").get<std::string>();
  c.loss = loss == "softmax_classifier" ? LossKind::softmax_classifier
                                        : LossKind::angular_prototypical;
  c.batch_identities = j.at("batch_identities").get<int>();
  c.batch_samples = j.at("batch_samples").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.modality_set.clear();
  for (const auto& m : j.at("modality_set")) c.modality_set.push_back(parse_modality(m));
  c.fusion_mode = j.at("fusion_mode").get<std::string>() == "attention" ? FusionMode::attention
                                                                        : FusionMode::none;
  c.valid_trials = j.value("valid_trials", 200);
  c.audio_features = audio_features_from_json(j.at("audio_features"));
  c.visual_features = image_features_from_json(j.at("visual_features"));
  c.thermal_features = image_features_from_json(j.at("thermal_features"));
  return c;
}

// ---------------------------------------------------------------------------
// Bundle persistence

inline void save_bundle(const CheckpointBundle& bundle, const std::filesystem::path& path,
                        const std::string& config_hash = "") {
  std::vector<TensorBlob> tensors;
  nlohmann::json archs;
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [mod, enc] : bundle.encoders) {
    const std::string name = to_string(mod);
    order.push_back(name);
    archs[name] = arch_to_json(enc->config());
    snapshot_encoder(*enc, name + "/", tensors);
  }
  if (bundle.fusion) {
    append_tensor(tensors, "fusion.W", bundle.fusion->W.value);
    append_tensor(tensors, "fusion.b", bundle.fusion->b.value);
  }
  nlohmann::json meta{{"kind", "tpv_bundle"},
                      {"modalities", order},
                      {"arch", archs},
                      {"train_config", train_config_to_json(bundle.config)},
                      {"seed", bundle.config.seed},
                      {"config_hash", config_hash},
                      {"history", history_to_json(bundle.history)},
                      {"best_valid_eer", bundle.best_valid_eer},
                      {"best_epoch", bundle.best_epoch}};
  save_checkpoint(path, std::move(meta), tensors);
}

inline CheckpointBundle load_bundle(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "tpv_bundle")
    throw std::runtime_error(path.string() + " is not a model bundle");
  CheckpointBundle bundle;
  for (const auto& name : ckpt.meta.at("modalities")) {
    const std::string mod_name = name.get<std::string>();
    Modality mod = parse_modality(mod_name);
    nn::ResNetConfig cfg = arch_from_json(ckpt.meta.at("arch").at(mod_name));
    auto enc = std::make_shared<nn::ResNetEncoder<float>>(cfg, 0);
    restore_encoder(*enc, ckpt, mod_name + "/");
    bundle.encoders[mod] = std::move(enc);
  }
  if (ckpt.find("fusion.W")) {
    const TensorBlob* W = ckpt.find("fusion.W");
    bundle.fusion = std::make_shared<AttentionFusionParamsT<float>>();
    const int m = static_cast<int>(W->rows);
    bundle.fusion->init(m, static_cast<int>(W->cols) / m);
    restore_tensor(ckpt, "fusion.W", bundle.fusion->W.value);
    restore_tensor(ckpt, "fusion.b", bundle.fusion->b.value);
  }
  if (ckpt.meta.contains("train_config"))
    bundle.config = train_config_from_json(ckpt.meta.at("train_config"));
  for (const auto& [mod, enc] : bundle.encoders)
    bundle.config.arch[mod] = enc->config();
  if (ckpt.meta.contains("history"))
    bundle.history = history_from_json(ckpt.meta.at("history"));
  bundle.best_valid_eer = ckpt.meta.value("best_valid_eer", 1.0);
  bundle.best_epoch = ckpt.meta.value("best_epoch", -1);
  return bundle;
}

// ---------------------------------------------------------------------------
// Feature batches

inline Manifest manifest_from_samples(const std::vector<MultimodalSample>& samples) {
  Manifest m;
  m.reserve(samples.size());
  for (const auto& s : samples) {
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.identity = s.identity;
    e.session = s.session;
    m.push_back(std::move(e));
  }
  return m;
}

// Builds a network input batch for the chosen modality. In train mode each
// sample's augmentation stream is forked from (seed, epoch, sample_id).
inline nn::Batch<float> feature_batch(const std::vector<const MultimodalSample*>& samples,
                                      Modality modality, const TrainConfig& cfg,
                                      FeatureMode mode, int epoch) {
  if (samples.empty()) throw std::invalid_argument("feature_batch: empty sample list");
  nn::Batch<float> batch;
  const std::uint64_t feat_seed = derive_seed(cfg.seed, "features", static_cast<std::uint64_t>(epoch));
  if (modality == Modality::audio) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Rng rng(derive_seed(feat_seed, samples[i]->sample_id, 0));
      FeatMat f = audio_features(samples[i]->audio, cfg.audio_features, mode,
                                 mode == FeatureMode::train ? &rng : nullptr);
      if (i == 0) batch.resize(1, static_cast<int>(samples.size()), static_cast<int>(f.rows()),
                               static_cast<int>(f.cols()));
      else if (f.rows() != batch.h || f.cols() != batch.w)
        throw std::runtime_error("audio feature shapes differ within a batch");
      batch_from_feats(f, batch, static_cast<int>(i));
    }
  } else {
    const ImageFeatureConfig& icfg = cfg.image_features_for(modality);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Rng rng(derive_seed(feat_seed, samples[i]->sample_id, 1));
      const Image& src = modality == Modality::visual ? samples[i]->visual : samples[i]->thermal;
      Image f = image_features(src, icfg, mode, mode == FeatureMode::train ? &rng : nullptr);
      if (i == 0)
        batch.resize(f.channels, static_cast<int>(samples.size()), f.height, f.width);
      batch_from_image(f, batch, static_cast<int>(i));
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Batch sampling: N identities x M samples per step.

class ProtoSampler {
 public:
  ProtoSampler(const std::vector<MultimodalSample>& samples, int N, int M, std::uint64_t seed)
      : samples_(samples), n_(N), m_(M), seed_(seed) {
    for (std::size_t i = 0; i < samples.size(); ++i)
      by_identity_[samples[i].identity.id].push_back(i);
    for (const auto& [id, idx] : by_identity_) {
      if (static_cast<int>(idx.size()) < M)
        throw std::invalid_argument("identity " + id + " has fewer than M samples");
      identities_.push_back(id);
    }
    if (static_cast<int>(identities_.size()) < N)
      throw std::invalid_argument("train set has fewer identities than batch N");
  }

  int default_steps_per_epoch() const {
    return std::max<int>(1, static_cast<int>(samples_.size()) / (n_ * m_));
  }

  // Deterministic batch for (epoch, step): indices grouped per identity,
  // M consecutive slots per identity, query last.
  std::vector<std::size_t> batch(int epoch, int step) const {
    Rng rng(derive_seed(seed_, "batch",
                        (static_cast<std::uint64_t>(epoch) << 20) | static_cast<std::uint64_t>(step)));
    std::vector<std::string> ids = identities_;
    rng.shuffle(ids);
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(n_) * m_);
    for (int i = 0; i < n_; ++i) {
      std::vector<std::size_t> pool = by_identity_.at(ids[i]);
      rng.shuffle(pool);
      for (int k = 0; k < m_; ++k) out.push_back(pool[k]);
    }
    return out;
  }

  const std::vector<std::string>& identities() const { return identities_; }

 private:
  const std::vector<MultimodalSample>& samples_;
  int n_, m_;
  std::uint64_t seed_;
  std::map<std::string, std::vector<std::size_t>> by_identity_;
  std::vector<std::string> identities_;
};

// ---------------------------------------------------------------------------
// Validation embedding + EER

inline EmbeddingSet embed_samples(const std::vector<MultimodalSample>& samples,
                                  const std::vector<Modality>& modalities,
                                  std::map<Modality, std::shared_ptr<nn::ResNetEncoder<float>>>& encoders,
                                  const TrainConfig& cfg) {
  EmbeddingSet set;
  for (Modality mod : modalities) {
    auto& enc = encoders.at(mod);
    for (const auto& s : samples) {
      std::vector<const MultimodalSample*> one{&s};
      nn::Batch<float> in = feature_batch(one, mod, cfg, FeatureMode::eval, 0);
      Eigen::MatrixXd emb = embed_batch(*enc, in);
      set.put(make_embedding(emb.col(0), mod, s.sample_id));
    }
  }
  return set;
}

inline TrialList make_valid_trials(const std::vector<MultimodalSample>& valid,
                                   const TrainConfig& cfg) {
  Manifest manifest = manifest_from_samples(valid);
  long cross_or_same = 0, nontargets = 0;
  std::map<std::string, long> per_id;
  for (const auto& e : manifest) per_id[e.identity.id]++;
  long total = static_cast<long>(manifest.size());
  for (const auto& [id, c] : per_id) {
    cross_or_same += c * (c - 1) / 2;
    nontargets += c * (total - c);
  }
  nontargets /= 2;
  TrialProtocol protocol;
  protocol.mode = ProtocolMode::easy;
  protocol.n_target = static_cast<int>(std::min<long>(cfg.valid_trials, cross_or_same));
  protocol.n_nontarget = static_cast<int>(std::min<long>(cfg.valid_trials, nontargets));
  protocol.seed = derive_seed(cfg.seed, "valid-trials", 0);
  return generate_trials(manifest, protocol);
}

// Valid-set EER of one system. For fused systems the score is either the
// modality average or the attention-fused embedding distance.
inline double valid_eer(const TrialList& trials, const EmbeddingSet& embeddings,
                        const std::vector<Modality>& modalities, ScoreFusion fusion,
                        const AttentionFusionParams* attention, double* threshold_out = nullptr) {
  auto records = score_trials(trials, embeddings, modalities, fusion, attention);
  std::optional<Modality> which;
  if (fusion == ScoreFusion::none) which = modalities.front();
  EerResult r = compute_eer(extract_scores(records, which), extract_labels(records));
  if (threshold_out) *threshold_out = r.threshold;
  return r.eer;
}

inline AttentionFusionParams fusion_params_to_double(const AttentionFusionParamsT<float>& p) {
  AttentionFusionParams out;
  out.init(p.modalities(), p.embed_dim());
  out.W.value = p.W.value.cast<double>();
  out.b.value = p.b.value.cast<double>();
  return out;
}

// ---------------------------------------------------------------------------
// Trainers

namespace detail {

inline std::map<std::string, int> identity_index(const std::vector<MultimodalSample>& samples) {
  std::map<std::string, int> index;
  for (const auto& s : samples)
    index.emplace(s.identity.id, 0);
  int k = 0;
  for (auto& [id, v] : index) v = k++;
  return index;
}

}  // namespace detail

// Shared loop: trains whatever `forward_backward` computes. Returns history
// and writes the best-by-validation-EER checkpoint after every epoch.
template <typename StepFn, typename ValidFn, typename SnapshotFn>
void run_training_loop(const TrainConfig& cfg, const ProtoSampler& sampler, StepFn&& step_fn,
                       ValidFn&& valid_fn, SnapshotFn&& snapshot_fn,
                       std::vector<MetricRecord>& history, double& best_eer, int& best_epoch) {
  const int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : sampler.default_steps_per_epoch();
  best_eer = std::numeric_limits<double>::infinity();
  best_epoch = -1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    double loss_sum = 0;
    long correct = 0, queries = 0;
    for (int s = 0; s < steps; ++s) {
      auto [loss, corr, nq] = step_fn(epoch, s, lr);
      if (!std::isfinite(loss))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(s) + " (training diverged)");
      loss_sum += loss;
      correct += corr;
      queries += nq;
    }
    const double eer = valid_fn(epoch);
    history.push_back({epoch, "train", "loss", loss_sum / steps});
    history.push_back({epoch, "train", "accuracy", queries ? static_cast<double>(correct) / queries : 0});
    history.push_back({epoch, "train", "lr", lr});
    history.push_back({epoch, "valid", "eer", eer});
    if (eer < best_eer) {
      best_eer = eer;
      best_epoch = epoch;
      snapshot_fn(epoch, eer);
    }
  }
}

inline CheckpointBundle train_unimodal(const std::vector<MultimodalSample>& train,
                                       const std::vector<MultimodalSample>& valid,
                                       Modality modality, TrainConfig cfg,
                                       const std::filesystem::path& checkpoint_path = {},
                                       const std::string& config_hash = "") {
  cfg.modality_set = {modality};
  cfg.fusion_mode = FusionMode::none;
  cfg.validate();
  if (valid.empty()) throw std::invalid_argument("train_unimodal: empty validation set");

  CheckpointBundle bundle;
  bundle.config = cfg;
  auto enc = std::make_shared<nn::ResNetEncoder<float>>(
      cfg.arch_for(modality), derive_seed(cfg.seed, "init", static_cast<std::uint64_t>(modality)));
  bundle.encoders[modality] = enc;

  nn::ParamRefs<float> params = enc->params();
  AngularProtoLoss<float> proto_loss;
  std::unique_ptr<SoftmaxClassifierLoss<float>> cls_loss;
  std::map<std::string, int> id_index;
  if (cfg.loss == LossKind::angular_prototypical) {
    proto_loss.collect(params);
  } else {
    id_index = detail::identity_index(train);
    cls_loss = std::make_unique<SoftmaxClassifierLoss<float>>(
        static_cast<int>(id_index.size()), enc->config().embed_dim,
        Rng(derive_seed(cfg.seed, "cls-init", 0)));
    cls_loss->collect(params);
  }

  nn::Adam<float>::Config opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::Adam<float> opt(params, opt_cfg);

  ProtoSampler sampler(train, cfg.batch_identities, cfg.batch_samples, cfg.seed);
  TrialList vtrials = make_valid_trials(valid, cfg);

  const int N = cfg.batch_identities, M = cfg.batch_samples;
  nn::Batch<float> out, gin;

  auto step_fn = [&](int epoch, int step, double lr) {
    opt.set_lr(lr);
    opt.zero_grads();
    auto idx = sampler.batch(epoch, step);
    std::vector<const MultimodalSample*> picked;
    picked.reserve(idx.size());
    for (auto i : idx) picked.push_back(&train[i]);
    nn::Batch<float> in = feature_batch(picked, modality, cfg, FeatureMode::train, epoch);
    enc->forward(in, out, true);
    float loss;
    int corr = 0, nq = 0;
    nn::Mat<float> dE;
    if (cfg.loss == LossKind::angular_prototypical) {
      loss = proto_loss.forward_backward(out.data, N, M, &dE, &corr);
      nq = N;
    } else {
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(id_index.at(train[i].identity.id));
      loss = cls_loss->forward_backward(out.data, labels, &dE, &corr);
      nq = static_cast<int>(idx.size());
    }
    nn::Batch<float> dout;
    dout.resize(out.channels(), out.n, 1, 1);
    dout.data = dE;
    enc->backward(dout, gin);
    opt.step();
    if (cfg.loss == LossKind::angular_prototypical) proto_loss.clamp_scale();
    return std::tuple<double, long, long>(loss, corr, nq);
  };

  auto valid_fn = [&](int) {
    EmbeddingSet set = embed_samples(valid, {modality}, bundle.encoders, cfg);
    return valid_eer(vtrials, set, {modality}, ScoreFusion::none, nullptr);
  };

  auto snapshot_fn = [&](int epoch, double eer) {
    if (checkpoint_path.empty()) return;
    bundle.best_valid_eer = eer;
    bundle.best_epoch = epoch;
    save_bundle(bundle, checkpoint_path, config_hash);
  };

  run_training_loop(cfg, sampler, step_fn, valid_fn, snapshot_fn, bundle.history,
                    bundle.best_valid_eer, bundle.best_epoch);
  if (!checkpoint_path.empty()) {
    // Persist final metadata (full history) alongside the best parameters.
    CheckpointBundle best = load_bundle(checkpoint_path);
    best.config = cfg;
    best.history = bundle.history;
    best.best_valid_eer = bundle.best_valid_eer;
    best.best_epoch = bundle.best_epoch;
    save_bundle(best, checkpoint_path, config_hash);
    return best;
  }
  return bundle;
}

inline CheckpointBundle train_fused(const std::vector<MultimodalSample>& train,
                                    const std::vector<MultimodalSample>& valid, TrainConfig cfg,
                                    const std::filesystem::path& checkpoint_path = {},
                                    const std::string& config_hash = "") {
  cfg.fusion_mode = FusionMode::attention;
  cfg.validate();
  if (valid.empty()) throw std::invalid_argument("train_fused: empty validation set");
  const auto& mods = cfg.modality_set;
  const int m = static_cast<int>(mods.size());

  CheckpointBundle bundle;
  bundle.config = cfg;
  nn::ParamRefs<float> params;
  int embed_dim = -1;
  for (Modality mod : mods) {
    auto enc = std::make_shared<nn::ResNetEncoder<float>>(
        cfg.arch_for(mod), derive_seed(cfg.seed, "init", static_cast<std::uint64_t>(mod)));
    if (embed_dim < 0) embed_dim = enc->config().embed_dim;
    if (enc->config().embed_dim != embed_dim)
      throw std::invalid_argument("fused training requires equal embedding dims");
    bundle.encoders[mod] = enc;
    for (auto* p : enc->params()) params.push_back(p);
  }
  for (Modality mod : mods) {
    auto it = cfg.warm_start.find(mod);
    if (it == cfg.warm_start.end()) continue;
    CheckpointBundle donor = load_bundle(it->second);
    auto donor_it = donor.encoders.find(mod);
    if (donor_it == donor.encoders.end())
      throw std::runtime_error("warm-start checkpoint lacks a " + to_string(mod) + " encoder");
    if (!(donor_it->second->config().stage_widths == bundle.encoders[mod]->config().stage_widths) ||
        donor_it->second->config().embed_dim != embed_dim ||
        donor_it->second->config().input_channels != bundle.encoders[mod]->config().input_channels)
      throw std::runtime_error("warm-start checkpoint architecture mismatch for " + to_string(mod));
    // Copy tensors through a serialization round to reuse name matching.
    std::vector<TensorBlob> blobs;
    snapshot_encoder(*donor_it->second, "x/", blobs);
    Checkpoint tmp;
    tmp.tensors = std::move(blobs);
    restore_encoder(*bundle.encoders[mod], tmp, "x/");
  }

  bundle.fusion = std::make_shared<AttentionFusionParamsT<float>>();
  bundle.fusion->init(m, embed_dim);
  bundle.fusion->collect(params);
  AttentionFuser<float> fuser(bundle.fusion.get());

  AngularProtoLoss<float> proto_loss;
  std::unique_ptr<SoftmaxClassifierLoss<float>> cls_loss;
  std::map<std::string, int> id_index;
  if (cfg.loss == LossKind::angular_prototypical) {
    proto_loss.collect(params);
  } else {
    id_index = detail::identity_index(train);
    cls_loss = std::make_unique<SoftmaxClassifierLoss<float>>(
        static_cast<int>(id_index.size()), embed_dim, Rng(derive_seed(cfg.seed, "cls-init", 0)));
    cls_loss->collect(params);
  }

  nn::Adam<float>::Config opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::Adam<float> opt(params, opt_cfg);

  ProtoSampler sampler(train, cfg.batch_identities, cfg.batch_samples, cfg.seed);
  TrialList vtrials = make_valid_trials(valid, cfg);

  const int N = cfg.batch_identities, M = cfg.batch_samples;

  auto step_fn = [&](int epoch, int step, double lr) {
    opt.set_lr(lr);
    opt.zero_grads();
    auto idx = sampler.batch(epoch, step);
    std::vector<const MultimodalSample*> picked;
    for (auto i : idx) picked.push_back(&train[i]);
    std::vector<nn::Batch<float>> outs(m);
    std::vector<nn::Mat<float>> embs(m);
    for (int k = 0; k < m; ++k) {
      nn::Batch<float> in = feature_batch(picked, mods[k], cfg, FeatureMode::train, epoch);
      bundle.encoders[mods[k]]->forward(in, outs[k], true);
      embs[k] = outs[k].data;
    }
    nn::Mat<float> fused_out;
    fuser.forward(embs, fused_out, true);
    float loss;
    int corr = 0, nq = 0;
    nn::Mat<float> dF;
    if (cfg.loss == LossKind::angular_prototypical) {
      loss = proto_loss.forward_backward(fused_out, N, M, &dF, &corr);
      nq = N;
    } else {
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(id_index.at(train[i].identity.id));
      loss = cls_loss->forward_backward(fused_out, labels, &dF, &corr);
      nq = static_cast<int>(idx.size());
    }
    std::vector<nn::Mat<float>> dembs;
    fuser.backward(dF, dembs);
    nn::Batch<float> dout, gin;
    for (int k = 0; k < m; ++k) {
      dout.resize(outs[k].channels(), outs[k].n, 1, 1);
      dout.data = dembs[k];
      bundle.encoders[mods[k]]->backward(dout, gin);
    }
    opt.step();
    if (cfg.loss == LossKind::angular_prototypical) proto_loss.clamp_scale();
    return std::tuple<double, long, long>(loss, corr, nq);
  };

  auto valid_fn = [&](int) {
    EmbeddingSet set = embed_samples(valid, mods, bundle.encoders, cfg);
    AttentionFusionParams attn = fusion_params_to_double(*bundle.fusion);
    return valid_eer(vtrials, set, mods, ScoreFusion::attention, &attn);
  };

  auto snapshot_fn = [&](int epoch, double eer) {
    if (checkpoint_path.empty()) return;
    bundle.best_valid_eer = eer;
    bundle.best_epoch = epoch;
    save_bundle(bundle, checkpoint_path, config_hash);
  };

  run_training_loop(cfg, sampler, step_fn, valid_fn, snapshot_fn, bundle.history,
                    bundle.best_valid_eer, bundle.best_epoch);
  if (!checkpoint_path.empty()) {
    CheckpointBundle best = load_bundle(checkpoint_path);
    best.config = cfg;
    best.history = bundle.history;
    best.best_valid_eer = bundle.best_valid_eer;
    best.best_epoch = bundle.best_epoch;
    save_bundle(best, checkpoint_path, config_hash);
    return best;
  }
  return bundle;
}

}  // namespace tpv
