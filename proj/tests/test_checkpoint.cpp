#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tpv/checkpoint.hpp"
#include "tpv/encoders.hpp"

using namespace tpv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tpv-ckpt-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

nn::ResNetConfig tiny_cfg() {
  nn::ResNetConfig cfg;
  cfg.input_channels = 1;
  cfg.stage_widths = {4, 8, 12, 16};
  cfg.blocks = {1, 1, 1, 1};
  cfg.pooling = nn::PoolKind::sap;
  cfg.embed_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("tensor blobs round-trip bit-exactly through a checkpoint file") {
  TempDir tmp;
  const fs::path file = tmp.path / "a.ckpt";

  std::vector<TensorBlob> tensors;
  nn::Mat<float> m(3, 5);
  Rng rng(3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  append_tensor(tensors, "w", m);
  nn::Vec<float> v(7);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<float>(rng.uniform());
  append_tensor(tensors, "b", v);

  nlohmann::json meta{{"kind", "unit-test"}, {"seed", 42}};
  save_checkpoint(file, meta, tensors);

  Checkpoint ckpt = load_checkpoint(file);
  CHECK(ckpt.meta.at("kind") == "unit-test");
  CHECK(ckpt.meta.at("seed") == 42);
  CHECK(ckpt.meta.at("format") == 1);
  REQUIRE(ckpt.tensors.size() == 2);

  nn::Mat<float> m2(3, 5);
  restore_tensor(ckpt, "w", m2);
  CHECK(std::memcmp(m.data(), m2.data(), sizeof(float) * m.size()) == 0);
  nn::Vec<float> v2(7);
  restore_tensor(ckpt, "b", v2);
  CHECK(std::memcmp(v.data(), v2.data(), sizeof(float) * v.size()) == 0);
}

TEST_CASE("loading rejects corrupt and mismatched checkpoints") {
  TempDir tmp;
  const fs::path file = tmp.path / "a.ckpt";
  std::vector<TensorBlob> tensors;
  nn::Mat<float> m(2, 2);
  m.setOnes();
  append_tensor(tensors, "w", m);
  save_checkpoint(file, nlohmann::json::object(), tensors);

  SUBCASE("bad magic") {
    std::string bytes = read_file(file);
    bytes[0] = 'X';
    atomic_write_file(file, bytes);
    CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(file)),
                         doctest::Contains("not a checkpoint"), std::runtime_error);
  }
  SUBCASE("truncated header") {
    std::string bytes = read_file(file);
    atomic_write_file(file, bytes.substr(0, 12));
    CHECK_THROWS(static_cast<void>(load_checkpoint(file)));
  }
  SUBCASE("truncated payload") {
    std::string bytes = read_file(file);
    atomic_write_file(file, bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_WITH_AS(static_cast<void>(load_checkpoint(file)),
                         doctest::Contains("truncated"), std::runtime_error);
  }
  SUBCASE("missing tensor name") {
    Checkpoint ckpt = load_checkpoint(file);
    nn::Mat<float> t(2, 2);
    CHECK_THROWS_WITH_AS(restore_tensor(ckpt, "nope", t), doctest::Contains("missing"),
                         std::runtime_error);
  }
  SUBCASE("shape mismatch") {
    Checkpoint ckpt = load_checkpoint(file);
    nn::Mat<float> t(3, 2);
    CHECK_THROWS_WITH_AS(restore_tensor(ckpt, "w", t), doctest::Contains("shape"),
                         std::runtime_error);
  }
}

TEST_CASE("saving a tensor with inconsistent shape metadata is an error") {
  TempDir tmp;
  TensorBlob t;
  t.name = "w";
  t.rows = 2;
  t.cols = 3;
  t.data.resize(4);  // wrong: should be 6
  CHECK_THROWS_AS(save_checkpoint(tmp.path / "x.ckpt", nlohmann::json::object(), {t}),
                  std::logic_error);
}

TEST_CASE("architecture descriptions round-trip") {
  auto cfg = tiny_cfg();
  auto j = arch_to_json(cfg);
  auto back = arch_from_json(j);
  CHECK(back.input_channels == cfg.input_channels);
  CHECK(back.stage_widths == cfg.stage_widths);
  CHECK(back.blocks == cfg.blocks);
  CHECK(back.pooling == cfg.pooling);
  CHECK(back.embed_dim == cfg.embed_dim);

  auto bad = j;
  bad["pooling"] = "mystery";
  CHECK_THROWS(arch_from_json(bad));
  bad = j;
  bad["stage_widths"] = std::vector<int>{1, 2, 3};
  CHECK_THROWS(arch_from_json(bad));
}

TEST_CASE("encoder snapshot/restore reproduces outputs bit-exactly") {
  TempDir tmp;
  const fs::path file = tmp.path / "enc.ckpt";
  auto cfg = tiny_cfg();
  nn::ResNetEncoder<float> enc(cfg, 7);

  // advance the batch-norm running stats so restored state matters
  nn::Batch<float> in;
  in.resize(1, 2, 40, 32);
  Rng rng(9);
  for (Eigen::Index i = 0; i < in.data.size(); ++i)
    in.data.data()[i] = static_cast<float>(rng.normal());
  nn::Batch<float> warm;
  enc.forward(in, warm, true);

  std::vector<TensorBlob> tensors;
  snapshot_encoder(enc, "audio/", tensors);
  save_checkpoint(file, {{"arch", arch_to_json(cfg)}}, tensors);

  nn::Batch<float> ref;
  enc.forward(in, ref, false);

  nn::ResNetEncoder<float> other(cfg, 999);  // different init
  Checkpoint ckpt = load_checkpoint(file);
  restore_encoder(other, ckpt, "audio/");
  nn::Batch<float> got;
  other.forward(in, got, false);
  CHECK((got.data - ref.data).cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("checkpoint writes replace the destination atomically") {
  TempDir tmp;
  const fs::path file = tmp.path / "a.ckpt";
  std::vector<TensorBlob> tensors;
  nn::Mat<float> m(2, 2);
  m.setOnes();
  append_tensor(tensors, "w", m);
  save_checkpoint(file, {{"version", 1}}, tensors);
  save_checkpoint(file, {{"version", 2}}, tensors);  // overwrite in place
  Checkpoint ckpt = load_checkpoint(file);
  CHECK(ckpt.meta.at("version") == 2);
  // no stray temporary files left behind
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.path)) ++files;
  CHECK(files == 1);
}
