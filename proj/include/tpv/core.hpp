#pragma once
// Shared domain types: identities, trimodal samples, embeddings, trials,
// score records, and the tab-separated dataset manifest.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpv {

constexpr int kEmbedDim = 512;

enum class Gender { A, B };

enum class Modality { audio, visual, thermal, fused };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
    case Modality::thermal: return "thermal";
    case Modality::fused: return "fused";
  }
  return "?";
}

inline Modality parse_modality(const std::string& tok) {
  if (tok == "audio") return Modality::audio;
  if (tok == "visual") return Modality::visual;
  if (tok == "thermal") return Modality::thermal;
  if (tok == "fused") return Modality::fused;
  throw std::runtime_error("unknown modality token: '" + tok + "'");
}

inline std::string to_string(Gender g) { return g == Gender::A ? "A" : "B"; }

inline Gender parse_gender(const std::string& tok) {
  if (tok == "A") return Gender::A;
  if (tok == "B") return Gender::B;
  throw std::runtime_error("unknown gender token: '" + tok + "'");
}

struct Identity {
  std::string id;
  Gender gender = Gender::A;
};

// Planar images, values in [0,1]. channels is 3 (visual) or 1 (thermal).
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;  // [c][y][x]

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  void resize(int c, int h, int w) {
    channels = c; height = h; width = w;
    data.assign(static_cast<std::size_t>(c) * h * w, 0.f);
  }
};

// One recording: audio waveform plus a visual and a thermal frame.
struct MultimodalSample {
  std::string sample_id;
  Identity identity;
  std::string session;
  std::vector<float> audio;  // PCM mono at sample_rate
  int sample_rate = 16000;
  Image visual;
  Image thermal;
  std::set<Modality> corrupted;
};

struct Embedding {
  Eigen::VectorXd vector;
  Modality modality = Modality::audio;
  std::string sample_id;
};

inline Embedding make_embedding(Eigen::VectorXd v, Modality m, std::string sample_id) {
  double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::runtime_error("embedding for '" + sample_id + "' is zero or non-finite");
  v /= n;
  return Embedding{std::move(v), m, std::move(sample_id)};
}

enum class TrialLabel { target, nontarget };
enum class GenderPair { same, opposite };

struct TrialPair {
  TrialLabel label = TrialLabel::nontarget;
  std::string enroll_sample;
  std::string test_sample;
  GenderPair gender_pair = GenderPair::same;
};

using TrialList = std::vector<TrialPair>;

struct ScoreRecord {
  TrialPair trial;
  std::map<Modality, double> per_modality;  // each score in [0,2]
  std::optional<double> fused;
};

// One manifest row; media live on disk at the recorded paths.
struct ManifestEntry {
  std::string sample_id;
  Identity identity;
  std::string session;
  std::string audio_path;
  std::string visual_path;
  std::string thermal_path;
};

using Manifest = std::vector<ManifestEntry>;

inline std::vector<std::string> split_fields(const std::string& line, char sep = '\t') {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// Checks manifest invariants and returns the entries sorted by sample_id.
// check_files verifies that the referenced media exist under base_dir.
inline Manifest validate_manifest(Manifest manifest,
                                  const std::filesystem::path& base_dir = {},
                                  bool check_files = false) {
  std::set<std::string> seen;
  std::map<std::string, Gender> id_gender;
  for (const auto& e : manifest) {
    if (e.sample_id.empty()) throw std::runtime_error("empty sample_id");
    if (e.identity.id.empty())
      throw std::runtime_error("empty identity for sample '" + e.sample_id + "'");
    if (!seen.insert(e.sample_id).second)
      throw std::runtime_error("duplicate id: '" + e.sample_id + "'");
    auto [it, inserted] = id_gender.emplace(e.identity.id, e.identity.gender);
    if (!inserted && it->second != e.identity.gender)
      throw std::runtime_error("identity '" + e.identity.id + "' has inconsistent gender");
    if (check_files) {
      for (const auto* p : {&e.audio_path, &e.visual_path, &e.thermal_path}) {
        if (p->empty() || !std::filesystem::exists(base_dir / *p))
          throw std::runtime_error("missing modality file for sample '" + e.sample_id +
                                   "': '" + *p + "'");
      }
    }
  }
  std::sort(manifest.begin(), manifest.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.sample_id < b.sample_id; });
  return manifest;
}

inline Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 7)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": expected 7 tab-separated fields, got " +
                               std::to_string(f.size()));
    ManifestEntry e;
    e.sample_id = f[0];
    e.identity = Identity{f[1], parse_gender(f[2])};
    e.session = f[3];
    e.audio_path = f[4];
    e.visual_path = f[5];
    e.thermal_path = f[6];
    m.push_back(std::move(e));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, bool check_files = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  return validate_manifest(parse_manifest(in), path.parent_path(), check_files);
}

inline void serialize_manifest(const Manifest& m, std::ostream& out) {
  for (const auto& e : m) {
    out << e.sample_id << '\t' << e.identity.id << '\t' << to_string(e.identity.gender)
        << '\t' << e.session << '\t' << e.audio_path << '\t' << e.visual_path << '\t'
        << e.thermal_path << '\n';
  }
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  serialize_manifest(m, out);
}

// Trial list file: label(1|0) <TAB> enroll_sample_id <TAB> test_sample_id.
inline void save_trials(const TrialList& trials, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trial list: " + path.string());
  for (const auto& t : trials)
    out << (t.label == TrialLabel::target ? '1' : '0') << '\t' << t.enroll_sample << '\t'
        << t.test_sample << '\n';
}

// Loads trials and resolves gender_pair against the manifest.
inline TrialList load_trials(const std::filesystem::path& path, const Manifest& manifest) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.sample_id] = &e;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trial list: " + path.string());
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 3)
      throw std::runtime_error("trial line " + std::to_string(lineno) +
                               ": expected 3 fields");
    TrialPair t;
    if (f[0] == "1") t.label = TrialLabel::target;
    else if (f[0] == "0") t.label = TrialLabel::nontarget;
    else throw std::runtime_error("trial line " + std::to_string(lineno) + ": bad label");
    t.enroll_sample = f[1];
    t.test_sample = f[2];
    auto a = by_id.find(t.enroll_sample), b = by_id.find(t.test_sample);
    if (a == by_id.end() || b == by_id.end())
      throw std::runtime_error("trial line " + std::to_string(lineno) +
                               ": sample id not in manifest");
    t.gender_pair = a->second->identity.gender == b->second->identity.gender
                        ? GenderPair::same
                        : GenderPair::opposite;
    if (t.enroll_sample == t.test_sample)
      throw std::runtime_error("trial line " + std::to_string(lineno) +
                               ": enroll and test sample identical");
    if (t.label == TrialLabel::target &&
        a->second->identity.id != b->second->identity.id)
      throw std::runtime_error("trial line " + std::to_string(lineno) +
                               ": target trial across identities");
    trials.push_back(std::move(t));
  }
  return trials;
}

}  // namespace tpv
