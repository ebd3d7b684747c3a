#pragma once
// Trial generation, scoring, and verification metrics.
//
// Scores are distances: lower = more similar, accept when score <= t.
// EER sweeps candidate thresholds (a sentinel below the minimum score,
// the midpoints between adjacent distinct scores, and a sentinel above
// the maximum) and linearly interpolates the FAR/FRR crossing. The
// interpolation weight depends only on the rate values, which makes the
// result invariant under strictly increasing score transformations.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpv/core.hpp"
#include "tpv/fusion.hpp"

namespace tpv {

struct EerResult {
  double eer = 0;
  double threshold = 0;
};

inline EerResult compute_eer(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("compute_eer: size mismatch");
  long n_target = 0, n_nontarget = 0;
  for (bool l : labels) (l ? n_target : n_nontarget)++;
  if (n_target == 0 || n_nontarget == 0)
    throw std::invalid_argument("compute_eer: need at least one target and one nontarget trial");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("compute_eer: non-finite score");

  // Order trials by score; count targets/nontargets at each distinct value.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  struct Level {
    double value;
    long targets = 0, nontargets = 0;
  };
  std::vector<Level> levels;
  for (std::size_t i : order) {
    if (levels.empty() || scores[i] != levels.back().value) levels.push_back({scores[i]});
    (labels[i] ? levels.back().targets : levels.back().nontargets)++;
  }

  // Candidate thresholds with their rates. accepted(t) = {score <= t}.
  double prev_t = levels.front().value - 1.0;
  double prev_far = 0.0, prev_frr = 1.0;
  long cum_t = 0, cum_nt = 0;
  for (std::size_t j = 0; j < levels.size(); ++j) {
    cum_t += levels[j].targets;
    cum_nt += levels[j].nontargets;
    const double t = (j + 1 < levels.size()) ? 0.5 * (levels[j].value + levels[j + 1].value)
                                             : levels[j].value + 1.0;
    const double far = static_cast<double>(cum_nt) / n_nontarget;
    const double frr = 1.0 - static_cast<double>(cum_t) / n_target;
    const double d = far - frr;
    if (d >= 0) {
      const double prev_d = prev_far - prev_frr;  // < 0 here
      const double lambda = (0.0 - prev_d) / (d - prev_d);
      return {prev_far + lambda * (far - prev_far), prev_t + lambda * (t - prev_t)};
    }
    prev_t = t;
    prev_far = far;
    prev_frr = frr;
  }
  throw std::logic_error("compute_eer: no FAR/FRR crossing found");
}

struct AccuracyResult {
  double overall = 0;
  std::optional<double> same_gender, opposite_gender;
};

inline AccuracyResult compute_accuracy(const std::vector<double>& scores,
                                       const std::vector<bool>& labels, double threshold,
                                       const std::vector<GenderPair>* gender_pairs = nullptr) {
  if (scores.empty()) throw std::invalid_argument("compute_accuracy: no trials");
  if (scores.size() != labels.size()) throw std::invalid_argument("compute_accuracy: size mismatch");
  if (gender_pairs && gender_pairs->size() != scores.size())
    throw std::invalid_argument("compute_accuracy: gender_pairs size mismatch");
  long correct = 0, same_n = 0, same_c = 0, opp_n = 0, opp_c = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool accept = scores[i] <= threshold;
    const bool ok = accept == labels[i];
    correct += ok;
    if (gender_pairs) {
      if ((*gender_pairs)[i] == GenderPair::same) {
        ++same_n;
        same_c += ok;
      } else {
        ++opp_n;
        opp_c += ok;
      }
    }
  }
  AccuracyResult r;
  r.overall = static_cast<double>(correct) / scores.size();
  if (gender_pairs) {
    if (same_n > 0) r.same_gender = static_cast<double>(same_c) / same_n;
    if (opp_n > 0) r.opposite_gender = static_cast<double>(opp_c) / opp_n;
  }
  return r;
}

// Intersection sizes of the three per-modality error sets over one trial
// list: |A|, |V|, |T|, |A∩V|, |A∩T|, |V∩T|, |A∩V∩T|, plus the directly
// counted union.
struct ErrorOverlap {
  long a = 0, v = 0, t = 0;
  long av = 0, at = 0, vt = 0;
  long avt = 0;
  long union_count = 0;
  long n_trials = 0;

  long union_by_inclusion_exclusion() const { return a + v + t - av - at - vt + avt; }
};

inline ErrorOverlap error_overlap(const std::vector<bool>& audio_error,
                                  const std::vector<bool>& visual_error,
                                  const std::vector<bool>& thermal_error) {
  if (audio_error.size() != visual_error.size() || audio_error.size() != thermal_error.size())
    throw std::invalid_argument("error_overlap: mismatched trial lists");
  ErrorOverlap o;
  o.n_trials = static_cast<long>(audio_error.size());
  for (std::size_t i = 0; i < audio_error.size(); ++i) {
    const bool ea = audio_error[i], ev = visual_error[i], et = thermal_error[i];
    o.a += ea;
    o.v += ev;
    o.t += et;
    o.av += ea && ev;
    o.at += ea && et;
    o.vt += ev && et;
    o.avt += ea && ev && et;
    o.union_count += ea || ev || et;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Trial generation

enum class ProtocolMode { easy, hard };

struct TrialProtocol {
  ProtocolMode mode = ProtocolMode::easy;
  int n_target = 0;
  int n_nontarget = 0;
  std::uint64_t seed = 0;
};

inline TrialList generate_trials(const Manifest& manifest, const TrialProtocol& protocol) {
  if (protocol.n_target < 1 || protocol.n_nontarget < 1)
    throw std::invalid_argument("generate_trials: trial counts must be positive");
  const Manifest& entries = manifest;
  if (entries.size() < 2) throw std::invalid_argument("generate_trials: manifest too small");

  std::map<Gender, std::set<std::string>> ids_by_gender;
  for (const auto& e : entries) ids_by_gender[e.identity.gender].insert(e.identity.id);
  if (protocol.mode == ProtocolMode::hard)
    for (auto g : {Gender::A, Gender::B})
      if (ids_by_gender[g].size() < 2)
        throw std::invalid_argument(
            "generate_trials: hard mode needs >= 2 identities per gender");

  // Candidate target pairs, split into cross-session and same-session.
  std::vector<std::pair<std::size_t, std::size_t>> cross, same;
  std::vector<std::pair<std::size_t, std::size_t>> nontarget;
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const auto& a = entries[i];
      const auto& b = entries[j];
      if (a.identity.id == b.identity.id) {
        (a.session != b.session ? cross : same).push_back({i, j});
      } else {
        if (protocol.mode == ProtocolMode::hard && a.identity.gender != b.identity.gender)
          continue;
        nontarget.push_back({i, j});
      }
    }

  if (static_cast<std::size_t>(protocol.n_target) > cross.size() + same.size())
    throw std::invalid_argument("generate_trials: not enough unique target pairs");
  if (static_cast<std::size_t>(protocol.n_nontarget) > nontarget.size())
    throw std::invalid_argument("generate_trials: not enough unique nontarget pairs");

  Rng rng(derive_seed(protocol.seed, "trials",
                      protocol.mode == ProtocolMode::hard ? 1 : 0));
  rng.fork("target").shuffle(cross);
  rng.fork("target-same-session").shuffle(same);
  rng.fork("nontarget").shuffle(nontarget);

  TrialList trials;
  trials.reserve(static_cast<std::size_t>(protocol.n_target) + protocol.n_nontarget);
  auto add = [&](const std::pair<std::size_t, std::size_t>& p, TrialLabel label) {
    const auto& a = entries[p.first];
    const auto& b = entries[p.second];
    TrialPair t;
    t.label = label;
    t.enroll_sample = a.sample_id;
    t.test_sample = b.sample_id;
    t.gender_pair =
        a.identity.gender == b.identity.gender ? GenderPair::same : GenderPair::opposite;
    trials.push_back(std::move(t));
  };
  for (int k = 0; k < protocol.n_target; ++k) {
    if (static_cast<std::size_t>(k) < cross.size())
      add(cross[k], TrialLabel::target);
    else
      add(same[k - cross.size()], TrialLabel::target);
  }
  for (int k = 0; k < protocol.n_nontarget; ++k) add(nontarget[k], TrialLabel::nontarget);
  return trials;
}

// ---------------------------------------------------------------------------
// Scoring

struct EmbeddingSet {
  std::map<Modality, std::unordered_map<std::string, Embedding>> by_modality;

  void put(Embedding e) { by_modality[e.modality][e.sample_id] = std::move(e); }

  const Embedding& get(Modality m, const std::string& sample_id) const {
    auto mod = by_modality.find(m);
    if (mod == by_modality.end())
      throw std::invalid_argument("missing embeddings for modality " + std::string(to_string(m)));
    auto it = mod->second.find(sample_id);
    if (it == mod->second.end())
      throw std::invalid_argument("missing " + std::string(to_string(m)) + " embedding for " +
                                  sample_id);
    return it->second;
  }
};

enum class ScoreFusion { none, score_average, attention };

inline std::vector<ScoreRecord> score_trials(const std::vector<TrialPair>& trials,
                                             const EmbeddingSet& embeddings,
                                             const std::vector<Modality>& modalities,
                                             ScoreFusion fusion,
                                             const AttentionFusionParams* attention = nullptr) {
  if (modalities.empty()) throw std::invalid_argument("score_trials: no modalities");
  if (fusion == ScoreFusion::attention && !attention)
    throw std::invalid_argument("score_trials: attention fusion needs parameters");
  if (fusion == ScoreFusion::attention &&
      attention->modalities() != static_cast<int>(modalities.size()))
    throw std::invalid_argument("score_trials: attention parameter arity mismatch");
  if (fusion != ScoreFusion::none && modalities.size() < 2)
    throw std::invalid_argument("score_trials: fusion needs >= 2 modalities");

  // Attention-fused embeddings per unique sample.
  std::unordered_map<std::string, Embedding> fused;
  auto fused_embedding = [&](const std::string& sid) -> const Embedding& {
    auto it = fused.find(sid);
    if (it != fused.end()) return it->second;
    std::vector<Embedding> parts;
    parts.reserve(modalities.size());
    for (Modality m : modalities) parts.push_back(embeddings.get(m, sid));
    auto [e, w] = attention_fuse(parts, *attention);
    return fused.emplace(sid, std::move(e)).first->second;
  };

  std::vector<ScoreRecord> records;
  records.reserve(trials.size());
  for (const auto& trial : trials) {
    ScoreRecord rec;
    rec.trial = trial;
    for (Modality m : modalities) {
      const auto& e1 = embeddings.get(m, trial.enroll_sample);
      const auto& e2 = embeddings.get(m, trial.test_sample);
      rec.per_modality[m] = verification_score(e1, e2);
    }
    if (fusion == ScoreFusion::score_average) {
      rec.fused = average_scores(rec.per_modality);
    } else if (fusion == ScoreFusion::attention) {
      rec.fused = verification_score(fused_embedding(trial.enroll_sample),
                                     fused_embedding(trial.test_sample));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<double> extract_scores(const std::vector<ScoreRecord>& records,
                                          std::optional<Modality> modality) {
  std::vector<double> s;
  s.reserve(records.size());
  for (const auto& r : records) {
    if (modality) {
      auto it = r.per_modality.find(*modality);
      if (it == r.per_modality.end())
        throw std::invalid_argument("score record lacks requested modality");
      s.push_back(it->second);
    } else {
      if (!r.fused) throw std::invalid_argument("score record lacks fused score");
      s.push_back(*r.fused);
    }
  }
  return s;
}

inline std::vector<bool> extract_labels(const std::vector<ScoreRecord>& records) {
  std::vector<bool> l;
  l.reserve(records.size());
  for (const auto& r : records) l.push_back(r.trial.label == TrialLabel::target);
  return l;
}

inline std::vector<GenderPair> extract_gender_pairs(const std::vector<ScoreRecord>& records) {
  std::vector<GenderPair> g;
  g.reserve(records.size());
  for (const auto& r : records) g.push_back(r.trial.gender_pair);
  return g;
}

}  // namespace tpv
