#pragma once
// One run config drives every command. Format: flat sectioned key-value text,
//   seed = 42            # top-level, mandatory
//   [training]
//   epochs = 12
// '#' starts a comment; keys are section.key internally. Unknown or duplicate
// keys are errors that name the offender, so typos never silently fall back
// to defaults. Command-line overrides (--set section.key=value) go through
// the same schema and win over the file.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tpv/dataset.hpp"
#include "tpv/evaluation.hpp"
#include "tpv/frontend.hpp"
#include "tpv/io.hpp"
#include "tpv/training.hpp"

namespace tpv {

// Wrong config/usage (exit 1) as opposed to runtime failure (exit 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("");
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

inline std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

// Parses the raw text into "section.key" -> value; duplicates are errors.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (kv.count(full)) throw ConfigError("duplicate config key '" + full + "'");
    kv[full] = value;
  }
  return kv;
}

// Every tunable in one struct, defaulted except the top-level seed.
struct RunConfig {
  std::uint64_t seed = 0;

  // [synth]
  int synth_identities = 20;
  int synth_samples_per_identity = 30;
  double synth_audio_seconds = 2.5;
  int synth_image_size = 64;
  double split_train = 0.6, split_valid = 0.2, split_test = 0.2;

  // [corruption]
  double corruption_rate = 0.3;
  double corruption_snr_db_lo = 0.0;
  double corruption_snr_db_hi = 15.0;
  double corruption_blur_sigma_lo = 1.0;
  double corruption_blur_sigma_hi = 3.0;
  double corruption_occlusion_fraction = 0.25;

  // [frontend]
  int frontend_sample_rate = 16000;
  int frontend_n_mels = 40;
  int frontend_window_ms = 25;
  int frontend_hop_ms = 10;
  double frontend_crop_seconds = 2.0;
  int frontend_image_size = 128;  // network input side, multiple of 32
  bool frontend_augment_crop = true;
  bool frontend_augment_hflip = true;

  // [encoder]
  int encoder_embed_dim = 512;
  int encoder_audio_base_width = 64;  // stage widths = base * {1,2,4,8}
  int encoder_image_base_width = 32;
  std::vector<int> encoder_blocks{3, 4, 6, 3};

  // [training]
  std::string training_loss = "angular_prototypical";
  int training_batch_identities = 16;
  int training_batch_samples = 2;
  int training_epochs = 10;
  int training_steps_per_epoch = 0;
  double training_learning_rate = 1e-3;
  double training_lr_decay = 0.95;
  double training_weight_decay = 1e-4;
  std::vector<std::string> training_modalities{"audio", "visual", "thermal"};
  std::string training_fusion = "none";
  int training_valid_trials = 200;

  // [protocol]
  std::string protocol_mode = "easy";
  int protocol_targets = 200;
  int protocol_nontargets = 200;

  bool seed_set = false;

  void apply(const std::string& key, const std::string& value);
  void validate() const;

  static RunConfig from_map(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    for (const auto& [k, v] : kv) cfg.apply(k, v);
    return cfg;
  }

  // Parse file text, then apply overrides ("section.key=value"); flags win.
  static RunConfig from_text(const std::string& text,
                             const std::vector<std::string>& overrides = {}) {
    RunConfig cfg = from_map(parse_config_text(text));
    for (const auto& ov : overrides) {
      std::size_t eq = ov.find('=');
      if (eq == std::string::npos)
        throw ConfigError("override '" + ov + "': expected section.key=value");
      cfg.apply(detail::trim(ov.substr(0, eq)), detail::trim(ov.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  }

  static RunConfig from_file(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {}) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec))
      throw ConfigError("config file not found: " + path.string());
    return from_text(read_file(path), overrides);
  }

  std::string canonical() const;
  std::string hash() const { return hex64(fnv1a64(canonical())); }

  // Converters into the module-level configs.
  SynthConfig synth_config() const {
    SynthConfig c;
    c.n_identities = synth_identities;
    c.samples_per_identity = synth_samples_per_identity;
    c.audio_seconds = synth_audio_seconds;
    c.image_size = synth_image_size;
    c.seed = derive_seed(seed, "synth", 0);
    return c;
  }

  CorruptionConfig corruption_config() const {
    CorruptionConfig c;
    c.rate = corruption_rate;
    c.audio_snr_db_lo = corruption_snr_db_lo;
    c.audio_snr_db_hi = corruption_snr_db_hi;
    c.image_blur_sigma_lo = corruption_blur_sigma_lo;
    c.image_blur_sigma_hi = corruption_blur_sigma_hi;
    c.occlusion_fraction = corruption_occlusion_fraction;
    c.seed = derive_seed(seed, "corruption", 0);
    return c;
  }

  SplitFractions split_fractions() const { return {split_train, split_valid, split_test}; }

  AudioFeatureConfig audio_feature_config() const {
    AudioFeatureConfig c;
    c.sample_rate = frontend_sample_rate;
    c.n_mels = frontend_n_mels;
    c.window_ms = frontend_window_ms;
    c.hop_ms = frontend_hop_ms;
    c.crop_seconds = frontend_crop_seconds;
    return c;
  }

  ImageFeatureConfig image_feature_config(Modality m) const {
    ImageFeatureConfig c;
    c.target_size = frontend_image_size;
    c.channels = m == Modality::thermal ? 1 : 3;
    c.augment_crop = frontend_augment_crop;
    c.augment_hflip = frontend_augment_hflip;
    return c;
  }

  nn::ResNetConfig encoder_arch(Modality m) const {
    nn::ResNetConfig c;
    const int base = m == Modality::audio ? encoder_audio_base_width : encoder_image_base_width;
    c.input_channels = m == Modality::audio ? 1 : (m == Modality::thermal ? 1 : 3);
    c.stage_widths = {base, base * 2, base * 4, base * 8};
    for (int i = 0; i < 4; ++i) c.blocks[static_cast<std::size_t>(i)] = encoder_blocks[static_cast<std::size_t>(i)];
    c.pooling = m == Modality::audio ? nn::PoolKind::sap : nn::PoolKind::global_avg;
    c.embed_dim = encoder_embed_dim;
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    if (training_loss == "angular_prototypical") c.loss = LossKind::angular_prototypical;
    else if (training_loss == "softmax_classifier") c.loss = LossKind::softmax_classifier;
    else throw ConfigError("config key 'training.loss': unknown loss '" + training_loss + "'");
    c.batch_identities = training_batch_identities;
    c.batch_samples = training_batch_samples;
    c.epochs = training_epochs;
    c.steps_per_epoch = training_steps_per_epoch;
    c.learning_rate = training_learning_rate;
    c.lr_decay = training_lr_decay;
    c.weight_decay = training_weight_decay;
    c.seed = seed;
    c.modality_set.clear();
    for (const auto& m : training_modalities) c.modality_set.push_back(parse_modality(m));
    if (training_fusion == "none") c.fusion_mode = FusionMode::none;
    else if (training_fusion == "attention") c.fusion_mode = FusionMode::attention;
    else throw ConfigError("config key 'training.fusion': unknown mode '" + training_fusion + "'");
    c.valid_trials = training_valid_trials;
    c.audio_features = audio_feature_config();
    c.visual_features = image_feature_config(Modality::visual);
    c.thermal_features = image_feature_config(Modality::thermal);
    for (Modality m : c.modality_set) c.arch[m] = encoder_arch(m);
    return c;
  }

  TrialProtocol protocol_config() const {
    TrialProtocol p;
    if (protocol_mode == "easy") p.mode = ProtocolMode::easy;
    else if (protocol_mode == "hard") p.mode = ProtocolMode::hard;
    else throw ConfigError("config key 'protocol.mode': unknown mode '" + protocol_mode + "'");
    p.n_target = protocol_targets;
    p.n_nontarget = protocol_nontargets;
    p.seed = derive_seed(seed, "protocol", 0);
    return p;
  }
};

inline void RunConfig::apply(const std::string& key, const std::string& value) {
  using namespace detail;
  auto as_int = [&](int lo = INT32_MIN) {
    long long x = parse_int(key, value);
    if (x < lo || x > INT32_MAX)
      throw ConfigError("config key '" + key + "': value out of range");
    return static_cast<int>(x);
  };
  if (key == "seed") { seed = parse_uint(key, value); seed_set = true; }
  else if (key == "synth.identities") synth_identities = as_int(0);
  else if (key == "synth.samples_per_identity") synth_samples_per_identity = as_int(0);
  else if (key == "synth.audio_seconds") synth_audio_seconds = parse_double(key, value);
  else if (key == "synth.image_size") synth_image_size = as_int(0);
  else if (key == "synth.split_train") split_train = parse_double(key, value);
  else if (key == "synth.split_valid") split_valid = parse_double(key, value);
  else if (key == "synth.split_test") split_test = parse_double(key, value);
  else if (key == "corruption.rate") corruption_rate = parse_double(key, value);
  else if (key == "corruption.snr_db_lo") corruption_snr_db_lo = parse_double(key, value);
  else if (key == "corruption.snr_db_hi") corruption_snr_db_hi = parse_double(key, value);
  else if (key == "corruption.blur_sigma_lo") corruption_blur_sigma_lo = parse_double(key, value);
  else if (key == "corruption.blur_sigma_hi") corruption_blur_sigma_hi = parse_double(key, value);
  else if (key == "corruption.occlusion_fraction") corruption_occlusion_fraction = parse_double(key, value);
  else if (key == "frontend.sample_rate") frontend_sample_rate = as_int(1);
  else if (key == "frontend.n_mels") frontend_n_mels = as_int(1);
  else if (key == "frontend.window_ms") frontend_window_ms = as_int(1);
  else if (key == "frontend.hop_ms") frontend_hop_ms = as_int(1);
  else if (key == "frontend.crop_seconds") frontend_crop_seconds = parse_double(key, value);
  else if (key == "frontend.image_size") frontend_image_size = as_int(1);
  else if (key == "frontend.augment_crop") frontend_augment_crop = parse_bool(key, value);
  else if (key == "frontend.augment_hflip") frontend_augment_hflip = parse_bool(key, value);
  else if (key == "encoder.embed_dim") encoder_embed_dim = as_int(1);
  else if (key == "encoder.audio_base_width") encoder_audio_base_width = as_int(1);
  else if (key == "encoder.image_base_width") encoder_image_base_width = as_int(1);
  else if (key == "encoder.blocks") {
    encoder_blocks.clear();
    for (const auto& tok : split_csv(value))
      encoder_blocks.push_back(static_cast<int>(parse_int(key, tok)));
    if (encoder_blocks.size() != 4)
      throw ConfigError("config key 'encoder.blocks': expected 4 comma-separated counts");
  }
  else if (key == "training.loss") training_loss = value;
  else if (key == "training.batch_identities") training_batch_identities = as_int(1);
  else if (key == "training.batch_samples") training_batch_samples = as_int(1);
  else if (key == "training.epochs") training_epochs = as_int(1);
  else if (key == "training.steps_per_epoch") training_steps_per_epoch = as_int(0);
  else if (key == "training.learning_rate") training_learning_rate = parse_double(key, value);
  else if (key == "training.lr_decay") training_lr_decay = parse_double(key, value);
  else if (key == "training.weight_decay") training_weight_decay = parse_double(key, value);
  else if (key == "training.modalities") training_modalities = split_csv(value);
  else if (key == "training.fusion") training_fusion = value;
  else if (key == "training.valid_trials") training_valid_trials = as_int(1);
  else if (key == "protocol.mode") protocol_mode = value;
  else if (key == "protocol.targets") protocol_targets = as_int(1);
  else if (key == "protocol.nontargets") protocol_nontargets = as_int(1);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void RunConfig::validate() const {
  if (!seed_set) throw ConfigError("config is missing the mandatory top-level 'seed'");
  double s = split_train + split_valid + split_test;
  if (std::abs(s - 1.0) > 1e-9)
    throw ConfigError("synth.split_* fractions must sum to 1");
  if (frontend_image_size % 32 != 0)
    throw ConfigError("config key 'frontend.image_size': must be a multiple of 32");
  // Module-level validators carry the detailed rules; surface their
  // complaints as config errors so the CLI exits with the usage code.
  try {
    synth_config().validate();
    corruption_config().validate();
    train_config().validate();
    protocol_config();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

inline std::string RunConfig::canonical() const {
  std::ostringstream out;
  out.precision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "seed = " << seed << "\n[synth]\n"
      << "identities = " << synth_identities << '\n'
      << "samples_per_identity = " << synth_samples_per_identity << '\n'
      << "audio_seconds = " << synth_audio_seconds << '\n'
      << "image_size = " << synth_image_size << '\n'
      << "split_train = " << split_train << '\n'
      << "split_valid = " << split_valid << '\n'
      << "split_test = " << split_test << '\n'
      << "[corruption]\n"
      << "rate = " << corruption_rate << '\n'
      << "snr_db_lo = " << corruption_snr_db_lo << '\n'
      << "snr_db_hi = " << corruption_snr_db_hi << '\n'
      << "blur_sigma_lo = " << corruption_blur_sigma_lo << '\n'
      << "blur_sigma_hi = " << corruption_blur_sigma_hi << '\n'
      << "occlusion_fraction = " << corruption_occlusion_fraction << '\n'
      << "[frontend]\n"
      << "sample_rate = " << frontend_sample_rate << '\n'
      << "n_mels = " << frontend_n_mels << '\n'
      << "window_ms = " << frontend_window_ms << '\n'
      << "hop_ms = " << frontend_hop_ms << '\n'
      << "crop_seconds = " << frontend_crop_seconds << '\n'
      << "image_size = " << frontend_image_size << '\n'
      << "augment_crop = " << b(frontend_augment_crop) << '\n'
      << "augment_hflip = " << b(frontend_augment_hflip) << '\n'
      << "[encoder]\n"
      << "embed_dim = " << encoder_embed_dim << '\n'
      << "audio_base_width = " << encoder_audio_base_width << '\n'
      << "image_base_width = " << encoder_image_base_width << '\n'
      << "blocks = " << encoder_blocks[0] << ',' << encoder_blocks[1] << ','
      << encoder_blocks[2] << ',' << encoder_blocks[3] << '\n'
      << "[training]\n"
      << "loss = " << training_loss << '\n'
      << "batch_identities = " << training_batch_identities << '\n'
      << "batch_samples = " << training_batch_samples << '\n'
      << "epochs = " << training_epochs << '\n'
      << "steps_per_epoch = " << training_steps_per_epoch << '\n'
      << "learning_rate = " << training_learning_rate << '\n'
      << "lr_decay = " << training_lr_decay << '\n'
      << "weight_decay = " << training_weight_decay << '\n'
      << "modalities = ";
  for (std::size_t i = 0; i < training_modalities.size(); ++i)
    out << (i ? "," : "") << training_modalities[i];
  out << '\n'
      << "fusion = " << training_fusion << '\n'
      << "valid_trials = " << training_valid_trials << '\n'
      << "[protocol]\n"
      << "mode = " << protocol_mode << '\n'
      << "targets = " << protocol_targets << '\n'
      << "nontargets = " << protocol_nontargets << '\n';
  return out.str();
}

}  // namespace tpv
