// tpv: synthesize data, build trial lists, train encoders, cache embeddings,
// and evaluate verification systems — all driven by one config file.
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tpv/cache.hpp"
#include "tpv/config.hpp"
#include "tpv/dataset.hpp"
#include "tpv/report.hpp"
#include "tpv/training.hpp"

namespace {

using namespace tpv;

std::vector<MultimodalSample> load_condition_samples(const std::filesystem::path& manifest_path,
                                                     const std::string& condition,
                                                     const CorruptionConfig& corruption) {
  Manifest manifest = load_manifest(manifest_path);
  auto samples = load_samples(manifest, manifest_path.parent_path());
  if (condition == "noisy") return corrupt_dataset(std::move(samples), corruption);
  return samples;
}

// Embeddings for every encoder in the bundle, through the on-disk cache.
// Feature extraction always follows the config the checkpoint was trained
// with, so a cache entry is a pure function of (checkpoint, condition,
// manifest) — exactly the cache key.
std::vector<Embedding> embeddings_via_cache(const std::filesystem::path& checkpoint_path,
                                            const std::filesystem::path& manifest_path,
                                            const std::string& condition,
                                            const CorruptionConfig& corruption,
                                            EmbeddingCache& cache) {
  EmbeddingCacheKey key = make_cache_key(checkpoint_path, condition, manifest_path);
  if (cache.contains(key)) return cache.load(key);
  CheckpointBundle bundle = load_bundle(checkpoint_path);
  auto samples = load_condition_samples(manifest_path, condition, corruption);
  std::vector<Modality> mods;
  for (const auto& [m, enc] : bundle.encoders) mods.push_back(m);
  EmbeddingSet set = embed_samples(samples, mods, bundle.encoders, bundle.config);
  std::vector<Embedding> flat;
  for (const auto& [m, by_id] : set.by_modality)
    for (const auto& [sid, e] : by_id) flat.push_back(e);
  cache.store(key, flat);
  return flat;
}

int cmd_synth_data(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  SynthDataset ds = generate_synthetic(cfg.synth_config());
  write_dataset(ds, out_dir);
  save_manifest(ds.manifest, out_dir / "manifest.tsv");
  DatasetSplits splits =
      split_dataset(ds.manifest, cfg.split_fractions(), derive_seed(cfg.seed, "split", 0));
  save_manifest(splits.train, out_dir / "train.tsv");
  save_manifest(splits.valid, out_dir / "valid.tsv");
  save_manifest(splits.test, out_dir / "test.tsv");
  std::printf("wrote %zu samples (%d identities) to %s\n", ds.samples.size(),
              cfg.synth_identities, out_dir.string().c_str());
  std::printf("splits: train %zu, valid %zu, test %zu entries\n", splits.train.size(),
              splits.valid.size(), splits.test.size());
  return 0;
}

int cmd_make_trials(const RunConfig& cfg, const std::filesystem::path& manifest_path,
                    const std::filesystem::path& out_path) {
  Manifest manifest = load_manifest(manifest_path);
  TrialList trials = generate_trials(manifest, cfg.protocol_config());
  save_trials(trials, out_path);
  long targets = 0;
  for (const auto& t : trials) targets += t.label == TrialLabel::target;
  std::printf("wrote %zu trials (%ld target / %ld nontarget, %s mode) to %s\n", trials.size(),
              targets, static_cast<long>(trials.size()) - targets, cfg.protocol_mode.c_str(),
              out_path.string().c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::filesystem::path& train_manifest,
              const std::filesystem::path& valid_manifest, const std::string& modality_name,
              bool fused, const std::string& condition,
              const std::vector<std::string>& warm_starts, const std::filesystem::path& out_path,
              std::filesystem::path metrics_path) {
  TrainConfig tc = cfg.train_config();
  for (const auto& w : warm_starts) {
    std::size_t eq = w.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--warm-start expects modality=checkpoint, got '" + w + "'");
    tc.warm_start[parse_modality(w.substr(0, eq))] = w.substr(eq + 1);
  }
  auto train = load_condition_samples(train_manifest, condition, cfg.corruption_config());
  auto valid = load_condition_samples(valid_manifest, condition, cfg.corruption_config());
  if (metrics_path.empty()) metrics_path = out_path.string() + ".metrics.tsv";

  CheckpointBundle bundle;
  if (fused) {
    bundle = train_fused(train, valid, tc, out_path, cfg.hash());
  } else {
    Modality m = parse_modality(modality_name);
    bundle = train_unimodal(train, valid, m, tc, out_path, cfg.hash());
  }
  write_metrics_log(metrics_path, bundle.history);
  std::printf("best validation EER %.4f at epoch %d; checkpoint %s, metrics %s\n",
              bundle.best_valid_eer, bundle.best_epoch, out_path.string().c_str(),
              metrics_path.string().c_str());
  return 0;
}

int cmd_embed(const RunConfig& cfg, const std::filesystem::path& checkpoint,
              const std::filesystem::path& manifest, const std::string& condition,
              const std::filesystem::path& cache_dir, const std::filesystem::path& out_path) {
  EmbeddingCache cache(cache_dir);
  auto embs = embeddings_via_cache(checkpoint, manifest, condition, cfg.corruption_config(), cache);
  if (!out_path.empty()) save_embeddings(embs, out_path);
  std::printf("%zu embeddings ready (cache %s)\n", embs.size(),
              cache.path_for(make_cache_key(checkpoint, condition, manifest)).string().c_str());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                 const std::filesystem::path& manifest_path,
                 const std::filesystem::path& trials_path, const std::string& condition,
                 const std::string& fusion_name_arg, const std::filesystem::path& cache_dir,
                 const std::filesystem::path& valid_manifest,
                 const std::filesystem::path& valid_trials_path,
                 const std::filesystem::path& out_prefix) {
  ScoreFusion fusion;
  if (fusion_name_arg == "none") fusion = ScoreFusion::none;
  else if (fusion_name_arg == "score-average") fusion = ScoreFusion::score_average;
  else if (fusion_name_arg == "attention") fusion = ScoreFusion::attention;
  else throw ConfigError("--fusion must be none, score-average, or attention");

  if (checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  const bool with_valid = !valid_trials_path.empty();
  if (with_valid == valid_manifest.empty())
    throw ConfigError("--valid-trials and --valid-manifest must be given together");

  EmbeddingCache cache(cache_dir);
  Manifest manifest = load_manifest(manifest_path);
  TrialList trials = load_trials(trials_path, manifest);

  EmbeddingSet test_set, valid_set;
  std::optional<AttentionFusionParams> attention;
  std::set<Modality> seen;
  for (const auto& ckpt : checkpoints) {
    CheckpointBundle bundle = load_bundle(ckpt);
    for (const auto& [m, enc] : bundle.encoders)
      if (!seen.insert(m).second)
        throw ConfigError("modality " + to_string(m) + " appears in more than one checkpoint");
    if (bundle.fusion) attention = fusion_params_to_double(*bundle.fusion);
    for (auto& e : embeddings_via_cache(ckpt, manifest_path, condition, cfg.corruption_config(), cache))
      test_set.put(std::move(e));
    if (with_valid)
      for (auto& e :
           embeddings_via_cache(ckpt, valid_manifest, condition, cfg.corruption_config(), cache))
        valid_set.put(std::move(e));
  }
  std::vector<Modality> modalities;
  for (Modality m : {Modality::audio, Modality::visual, Modality::thermal})
    if (seen.count(m)) modalities.push_back(m);
  if (fusion == ScoreFusion::attention && !attention)
    throw ConfigError("attention fusion requested but no checkpoint carries fusion parameters");
  if (fusion != ScoreFusion::none && modalities.size() < 2)
    throw ConfigError("fusion needs encoders for at least two modalities");

  TrialList vtrials;
  if (with_valid) {
    Manifest vmanifest = load_manifest(valid_manifest);
    vtrials = load_trials(valid_trials_path, vmanifest);
  }

  const AttentionFusionParams* attn = attention ? &*attention : nullptr;
  auto records = score_trials(trials, test_set, modalities,
                              fusion == ScoreFusion::none ? ScoreFusion::none : fusion, attn);
  std::vector<ScoreRecord> vrecords;
  if (with_valid)
    vrecords = score_trials(vtrials, valid_set, modalities,
                            fusion == ScoreFusion::none ? ScoreFusion::none : fusion, attn);

  auto valid_threshold = [&](std::optional<Modality> which) -> std::optional<double> {
    if (!with_valid) return std::nullopt;
    EerResult r = compute_eer(extract_scores(vrecords, which), extract_labels(vrecords));
    return r.threshold;
  };

  EvalReport rep;
  rep.condition = condition;
  rep.config_hash = cfg.hash();
  long targets = 0;
  for (const auto& t : trials) targets += t.label == TrialLabel::target;
  rep.n_target = targets;
  rep.n_nontarget = static_cast<long>(trials.size()) - targets;
  bool all_same_gender = true, any_opposite = false;
  for (const auto& t : trials) {
    all_same_gender = all_same_gender && t.gender_pair == GenderPair::same;
    any_opposite = any_opposite || t.gender_pair == GenderPair::opposite;
  }
  rep.protocol = all_same_gender && !any_opposite ? "hard" : "easy";

  for (Modality m : modalities)
    rep.systems.push_back(
        summarize_system(records, {m}, ScoreFusion::none, valid_threshold(m)));
  if (fusion != ScoreFusion::none)
    rep.systems.push_back(summarize_system(records, modalities, fusion, valid_threshold(std::nullopt)));

  if (modalities.size() == 3) {
    std::map<Modality, std::vector<bool>> errors;
    std::vector<bool> labels = extract_labels(records);
    for (Modality m : modalities) {
      std::vector<double> s = extract_scores(records, m);
      EerResult e = compute_eer(s, labels);
      std::vector<bool> err(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) err[i] = (s[i] <= e.threshold) != labels[i];
      errors[m] = std::move(err);
    }
    rep.overlap = error_overlap(errors.at(Modality::audio), errors.at(Modality::visual),
                                errors.at(Modality::thermal));
  }

  write_report(rep, out_prefix.string() + ".json", out_prefix.string() + ".txt");
  std::fputs(report_to_text(rep).c_str(), stdout);
  std::printf("report written to %s.json / %s.txt\n", out_prefix.string().c_str(),
              out_prefix.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trimodal person-verification toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "run config file")->required();
  app.add_option("--set", overrides, "override a config key: section.key=value (wins over file)");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset with splits");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output dataset directory")->required();

  auto* mktrials = app.add_subcommand("make-trials", "build a trial list from a manifest");
  std::string mt_manifest, mt_out;
  mktrials->add_option("--manifest", mt_manifest, "manifest file")->required();
  mktrials->add_option("--out", mt_out, "output trial list")->required();

  auto* train = app.add_subcommand("train", "train an encoder (or the fused system)");
  std::string tr_train, tr_valid, tr_modality, tr_condition = "clean", tr_out, tr_metrics;
  std::vector<std::string> tr_warm;
  bool tr_fused = false;
  train->add_option("--train-manifest", tr_train, "training manifest")->required();
  train->add_option("--valid-manifest", tr_valid, "validation manifest")->required();
  train->add_option("--modality", tr_modality, "audio | visual | thermal");
  train->add_flag("--fused", tr_fused, "train all configured modalities plus attention fusion");
  train->add_option("--condition", tr_condition, "clean | noisy")
      ->check(CLI::IsMember({"clean", "noisy"}));
  train->add_option("--warm-start", tr_warm, "modality=checkpoint to initialize from");
  train->add_option("--out", tr_out, "checkpoint output path")->required();
  train->add_option("--metrics", tr_metrics, "metrics TSV path (default: <out>.metrics.tsv)");

  auto* embed = app.add_subcommand("embed", "compute (and cache) embeddings for a manifest");
  std::string em_ckpt, em_manifest, em_condition = "clean", em_cache = "embcache", em_out;
  embed->add_option("--checkpoint", em_ckpt, "model checkpoint")->required();
  embed->add_option("--manifest", em_manifest, "manifest file")->required();
  embed->add_option("--condition", em_condition, "clean | noisy")
      ->check(CLI::IsMember({"clean", "noisy"}));
  embed->add_option("--cache-dir", em_cache, "embedding cache directory");
  embed->add_option("--out", em_out, "also write embeddings to this file");

  auto* evaluate = app.add_subcommand("evaluate", "score trials and write an evaluation report");
  std::vector<std::string> ev_ckpts;
  std::string ev_manifest, ev_trials, ev_condition = "clean", ev_fusion = "none";
  std::string ev_cache = "embcache", ev_valid_manifest, ev_valid_trials, ev_out = "report";
  evaluate->add_option("--checkpoint", ev_ckpts, "model checkpoint (repeatable)")->required();
  evaluate->add_option("--manifest", ev_manifest, "test manifest")->required();
  evaluate->add_option("--trials", ev_trials, "trial list over the test manifest")->required();
  evaluate->add_option("--condition", ev_condition, "clean | noisy")
      ->check(CLI::IsMember({"clean", "noisy"}));
  evaluate->add_option("--fusion", ev_fusion, "none | score-average | attention");
  evaluate->add_option("--cache-dir", ev_cache, "embedding cache directory");
  evaluate->add_option("--valid-manifest", ev_valid_manifest,
                       "validation manifest (for the accuracy operating point)");
  evaluate->add_option("--valid-trials", ev_valid_trials,
                       "validation trial list; its EER threshold sets the accuracy decisions");
  evaluate->add_option("--out", ev_out, "report path prefix (writes <prefix>.json and .txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    tpv::RunConfig cfg = tpv::RunConfig::from_file(config_path, overrides);
    if (synth->parsed()) return cmd_synth_data(cfg, synth_out);
    if (mktrials->parsed()) return cmd_make_trials(cfg, mt_manifest, mt_out);
    if (train->parsed()) {
      if (tr_fused == !tr_modality.empty())
        throw tpv::ConfigError("train needs exactly one of --modality or --fused");
      return cmd_train(cfg, tr_train, tr_valid, tr_modality, tr_fused, tr_condition, tr_warm,
                       tr_out, tr_metrics);
    }
    if (embed->parsed()) return cmd_embed(cfg, em_ckpt, em_manifest, em_condition, em_cache, em_out);
    if (evaluate->parsed())
      return cmd_evaluate(cfg, {ev_ckpts.begin(), ev_ckpts.end()}, ev_manifest, ev_trials,
                          ev_condition, ev_fusion, ev_cache, ev_valid_manifest, ev_valid_trials,
                          ev_out);
    std::fputs("no command given\n", stderr);
    return 1;
  } catch (const tpv::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
