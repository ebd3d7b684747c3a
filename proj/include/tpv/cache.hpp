#pragma once
// On-disk embedding cache so evaluation never re-runs encoders it has already
// run. One file per (checkpoint, condition, manifest) triple; the checkpoint
// is identified by a content hash, so retraining invalidates naturally.
// Writes go through atomic replacement, making concurrent readers/writers
// safe: they either see the old complete file or the new complete file.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tpv/core.hpp"
#include "tpv/io.hpp"

namespace tpv {

struct EmbeddingCacheKey {
  std::string checkpoint_hash;  // content hash of the checkpoint file
  std::string condition;        // "clean" | "noisy"
  std::string manifest_hash;    // content hash of the manifest file

  std::string file_name() const {
    return checkpoint_hash + "-" + condition + "-" + manifest_hash + ".emb";
  }
};

inline EmbeddingCacheKey make_cache_key(const std::filesystem::path& checkpoint,
                                        const std::string& condition,
                                        const std::filesystem::path& manifest) {
  return {file_hash(checkpoint), condition, file_hash(manifest)};
}

// File layout: "TPVEMB1\n" then one line per embedding:
//   modality <TAB> sample_id <TAB> dim <TAB> v0 v1 ... (17 significant digits)
inline void save_embeddings(const std::vector<Embedding>& embs,
                            const std::filesystem::path& path) {
  std::ostringstream out;
  out << "TPVEMB1\n";
  out.precision(17);
  for (const auto& e : embs) {
    out << to_string(e.modality) << '\t' << e.sample_id << '\t' << e.vector.size() << '\t';
    for (Eigen::Index i = 0; i < e.vector.size(); ++i) {
      if (i) out << ' ';
      out << e.vector[i];
    }
    out << '\n';
  }
  atomic_write_file(path, out.str());
}

inline std::vector<Embedding> load_embeddings(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "TPVEMB1")
    throw std::runtime_error("bad embedding file header: " + path.string());
  std::vector<Embedding> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string mod, sid;
    Eigen::Index dim = 0;
    if (!(ls >> mod >> sid >> dim) || dim <= 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed embedding record");
    Embedding e;
    e.modality = parse_modality(mod);
    e.sample_id = sid;
    e.vector.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      if (!(ls >> e.vector[i]))
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": truncated embedding vector");
    out.push_back(std::move(e));
  }
  return out;
}

class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::filesystem::path path_for(const EmbeddingCacheKey& key) const {
    return dir_ / key.file_name();
  }

  bool contains(const EmbeddingCacheKey& key) const {
    std::error_code ec;
    return std::filesystem::exists(path_for(key), ec);
  }

  std::vector<Embedding> load(const EmbeddingCacheKey& key) const {
    return load_embeddings(path_for(key));
  }

  void store(const EmbeddingCacheKey& key, const std::vector<Embedding>& embs) const {
    save_embeddings(embs, path_for(key));
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace tpv
