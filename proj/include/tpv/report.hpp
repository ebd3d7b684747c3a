#pragma once
// Evaluation reports: one structured JSON document plus a human-readable
// table. Output is a pure function of the inputs (no timestamps, fixed
// formatting), so reruns are bit-identical.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpv/evaluation.hpp"
#include "tpv/io.hpp"

namespace tpv {

struct SystemResult {
  std::string name;  // e.g. "audio", "audio+visual (score-average)"
  std::vector<Modality> modalities;
  ScoreFusion fusion = ScoreFusion::none;
  double eer = 0;
  double eer_threshold = 0;          // from this trial set
  double accuracy_threshold = 0;     // threshold the accuracies use
  std::string threshold_source;      // "validation" | "test"
  AccuracyResult accuracy;
};

struct EvalReport {
  std::string condition;  // "clean" | "noisy"
  std::string protocol;   // "easy" | "hard"
  std::string config_hash;
  long n_target = 0, n_nontarget = 0;
  std::vector<SystemResult> systems;
  std::optional<ErrorOverlap> overlap;  // unimodal errors, each at its own EER threshold
};

inline std::string fusion_name(ScoreFusion f) {
  switch (f) {
    case ScoreFusion::none: return "none";
    case ScoreFusion::score_average: return "score-average";
    case ScoreFusion::attention: return "attention";
  }
  return "?";
}

inline std::string system_name(const std::vector<Modality>& mods, ScoreFusion fusion) {
  std::string n;
  for (std::size_t i = 0; i < mods.size(); ++i) n += (i ? "+" : "") + to_string(mods[i]);
  if (fusion != ScoreFusion::none) n += " (" + fusion_name(fusion) + ")";
  return n;
}

// Scores one system over already-scored records and fills in EER + accuracy.
// `validation_threshold`, when present, is the operating point used for the
// accuracies; otherwise the test-set EER threshold is used.
inline SystemResult summarize_system(const std::vector<ScoreRecord>& records,
                                     const std::vector<Modality>& modalities, ScoreFusion fusion,
                                     std::optional<double> validation_threshold) {
  SystemResult r;
  r.modalities = modalities;
  r.fusion = fusion;
  r.name = system_name(modalities, fusion);
  std::optional<Modality> which;
  if (fusion == ScoreFusion::none) which = modalities.front();
  std::vector<double> scores = extract_scores(records, which);
  std::vector<bool> labels = extract_labels(records);
  std::vector<GenderPair> pairs = extract_gender_pairs(records);
  EerResult e = compute_eer(scores, labels);
  r.eer = e.eer;
  r.eer_threshold = e.threshold;
  r.accuracy_threshold = validation_threshold.value_or(e.threshold);
  r.threshold_source = validation_threshold ? "validation" : "test";
  r.accuracy = compute_accuracy(scores, labels, r.accuracy_threshold, &pairs);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : rep.systems) {
    nlohmann::json mods = nlohmann::json::array();
    for (auto m : s.modalities) mods.push_back(to_string(m));
    nlohmann::json acc{{"threshold", s.accuracy_threshold},
                       {"threshold_source", s.threshold_source},
                       {"overall", s.accuracy.overall}};
    if (s.accuracy.same_gender) acc["same_gender"] = *s.accuracy.same_gender;
    if (s.accuracy.opposite_gender) acc["opposite_gender"] = *s.accuracy.opposite_gender;
    systems.push_back({{"name", s.name},
                       {"modalities", mods},
                       {"fusion", fusion_name(s.fusion)},
                       {"eer", s.eer},
                       {"eer_threshold", s.eer_threshold},
                       {"accuracy", acc}});
  }
  nlohmann::json j{{"condition", rep.condition},
                   {"protocol", rep.protocol},
                   {"config_hash", rep.config_hash},
                   {"n_target", rep.n_target},
                   {"n_nontarget", rep.n_nontarget},
                   {"systems", systems}};
  if (rep.overlap) {
    const ErrorOverlap& o = *rep.overlap;
    j["error_overlap"] = {{"audio", o.a},
                          {"visual", o.v},
                          {"thermal", o.t},
                          {"audio_visual", o.av},
                          {"audio_thermal", o.at},
                          {"visual_thermal", o.vt},
                          {"audio_visual_thermal", o.avt},
                          {"union", o.union_count},
                          {"n_trials", o.n_trials}};
  }
  return j;
}

inline std::string report_to_text(const EvalReport& rep) {
  std::ostringstream out;
  char buf[160];
  out << "condition: " << rep.condition << "   protocol: " << rep.protocol
      << "   trials: " << rep.n_target << " target / " << rep.n_nontarget << " nontarget\n";
  out << "config: " << rep.config_hash << "\n\n";
  std::snprintf(buf, sizeof(buf), "%-40s %8s %10s %8s %8s %8s\n", "system", "EER%", "thr",
                "Acc%", "same%", "opp%");
  out << buf;
  out << std::string(86, '-') << '\n';
  for (const auto& s : rep.systems) {
    auto pct = [](std::optional<double> v) {
      char b[16];
      if (!v) return std::string("-");
      std::snprintf(b, sizeof(b), "%.2f", *v * 100.0);
      return std::string(b);
    };
    std::snprintf(buf, sizeof(buf), "%-40s %8.2f %10.4f %8s %8s %8s\n", s.name.c_str(),
                  s.eer * 100.0, s.eer_threshold, pct(s.accuracy.overall).c_str(),
                  pct(s.accuracy.same_gender).c_str(), pct(s.accuracy.opposite_gender).c_str());
    out << buf;
  }
  if (rep.overlap) {
    const ErrorOverlap& o = *rep.overlap;
    out << "\nunimodal error overlap (counts at each modality's own EER threshold):\n";
    std::snprintf(buf, sizeof(buf),
                  "  audio %ld  visual %ld  thermal %ld  a&v %ld  a&t %ld  v&t %ld  "
                  "a&v&t %ld  union %ld / %ld trials\n",
                  o.a, o.v, o.t, o.av, o.at, o.vt, o.avt, o.union_count, o.n_trials);
    out << buf;
  }
  return out.str();
}

inline void write_report(const EvalReport& rep, const std::filesystem::path& json_path,
                         const std::filesystem::path& text_path) {
  atomic_write_file(json_path, report_to_json(rep).dump(2) + "\n");
  atomic_write_file(text_path, report_to_text(rep));
}

}  // namespace tpv
