#include <cmath>
#include <vector>

#include "doctest.h"
#include "tpv/fusion.hpp"

using namespace tpv;

namespace {

Embedding random_unit(Rng& rng, int d, Modality m, const std::string& id) {
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return make_embedding(v, m, id);
}

double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("fusion weight validation") {
  FusionWeights ok{Eigen::Vector3d(0.2, 0.3, 0.5)};
  CHECK_NOTHROW(ok.validate());
  FusionWeights neg{Eigen::Vector3d(-0.1, 0.6, 0.5)};
  CHECK_THROWS(neg.validate());
  FusionWeights off{Eigen::Vector3d(0.2, 0.3, 0.4)};
  CHECK_THROWS(off.validate());
  FusionWeights single{Eigen::VectorXd::Ones(1)};
  CHECK_THROWS(single.validate());
}

TEST_CASE("attention parameters start at zero and reject bad arity") {
  AttentionFusionParams p;
  p.init(3, 16);
  CHECK(p.modalities() == 3);
  CHECK(p.embed_dim() == 16);
  CHECK(p.W.value.rows() == 3);
  CHECK(p.W.value.cols() == 48);
  CHECK(p.W.value.cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.b.value.cwiseAbs().maxCoeff() == 0.0);
  AttentionFusionParams bad;
  CHECK_THROWS(bad.init(1, 16));
  CHECK_THROWS(bad.init(4, 16));
}

TEST_CASE("zero-initialized fusion weights are exactly uniform") {
  Rng rng(3);
  const int d = 8;
  AttentionFusionParams p;
  p.init(3, d);
  std::vector<Embedding> embs{random_unit(rng, d, Modality::audio, "s1"),
                              random_unit(rng, d, Modality::visual, "s1"),
                              random_unit(rng, d, Modality::thermal, "s1")};
  auto [fused, w] = attention_fuse(embs, p);
  for (int i = 0; i < 3; ++i) CHECK(w.alpha(i) == 1.0 / 3.0);
  CHECK(fused.modality == Modality::fused);
  CHECK(fused.sample_id == "s1");
  CHECK(fused.vector.norm() == doctest::Approx(1.0).epsilon(1e-12));

  // uniform weights => fused direction is the mean direction
  Eigen::VectorXd mean = (embs[0].vector + embs[1].vector + embs[2].vector) / 3.0;
  mean /= mean.norm();
  CHECK((fused.vector - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fusion weights stay on the simplex for random parameters") {
  Rng rng(7);
  const int d = 12;
  for (int trial = 0; trial < 500; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_int(2));
    AttentionFusionParams p;
    p.init(m, d);
    for (Eigen::Index i = 0; i < p.W.value.size(); ++i) p.W.value.data()[i] = 2 * rng.normal();
    for (int i = 0; i < m; ++i) p.b.value(i, 0) = rng.normal();
    std::vector<Embedding> embs;
    for (int i = 0; i < m; ++i)
      embs.push_back(random_unit(rng, d, static_cast<Modality>(i), "t"));
    auto [fused, w] = attention_fuse(embs, p);
    CHECK(w.alpha.size() == m);
    CHECK(w.alpha.minCoeff() >= 0.0);
    CHECK(w.alpha.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fused.vector.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("raising one modality's bias raises its weight") {
  Rng rng(11);
  const int d = 8;
  AttentionFusionParams p;
  p.init(3, d);
  std::vector<Embedding> embs{random_unit(rng, d, Modality::audio, "s"),
                              random_unit(rng, d, Modality::visual, "s"),
                              random_unit(rng, d, Modality::thermal, "s")};
  auto [f0, w0] = attention_fuse(embs, p);
  p.b.value(1, 0) = 2.0;
  auto [f1, w1] = attention_fuse(embs, p);
  CHECK(w1.alpha(1) > w0.alpha(1));
  CHECK(w1.alpha(0) < w0.alpha(0));
}

TEST_CASE("attention fusion validates inputs") {
  Rng rng(13);
  AttentionFusionParams p;
  p.init(3, 8);
  std::vector<Embedding> two{random_unit(rng, 8, Modality::audio, "s"),
                             random_unit(rng, 8, Modality::visual, "s")};
  CHECK_THROWS(attention_fuse(two, p));
  std::vector<Embedding> wrong_dim{random_unit(rng, 8, Modality::audio, "s"),
                                   random_unit(rng, 8, Modality::visual, "s"),
                                   random_unit(rng, 6, Modality::thermal, "s")};
  CHECK_THROWS(attention_fuse(wrong_dim, p));
}

TEST_CASE("verification score equals the chordal distance") {
  Eigen::VectorXd x(4), y(4);
  x << 1, 0, 0, 0;
  y << 0, 1, 0, 0;
  Embedding a = make_embedding(x, Modality::visual, "a");
  Embedding b = make_embedding(y, Modality::visual, "b");
  CHECK(verification_score(a, a) == 0.0);
  CHECK(verification_score(a, b) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  Embedding neg = make_embedding(-x, Modality::visual, "c");
  CHECK(verification_score(a, neg) == doctest::Approx(2.0).epsilon(1e-12));

  // chordal identity: |u - v| = sqrt(2 - 2 cos angle)
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    Embedding u = random_unit(rng, 16, Modality::audio, "u");
    Embedding v = random_unit(rng, 16, Modality::audio, "v");
    double cosang = u.vector.dot(v.vector);
    CHECK(verification_score(u, v) ==
          doctest::Approx(std::sqrt(std::max(0.0, 2 - 2 * cosang))).epsilon(1e-9));
  }
}

TEST_CASE("verification score is symmetric, bounded, and triangular") {
  Rng rng(19);
  for (int t = 0; t < 2000; ++t) {
    Embedding u = random_unit(rng, 8, Modality::thermal, "u");
    Embedding v = random_unit(rng, 8, Modality::thermal, "v");
    double s = verification_score(u, v);
    CHECK(s >= 0.0);
    CHECK(s <= 2.0);
    CHECK(s == verification_score(v, u));
  }
  for (int t = 0; t < 300; ++t) {
    Embedding u = random_unit(rng, 8, Modality::fused, "u");
    Embedding v = random_unit(rng, 8, Modality::fused, "v");
    Embedding z = random_unit(rng, 8, Modality::fused, "z");
    CHECK(verification_score(u, z) <=
          verification_score(u, v) + verification_score(v, z) + 1e-12);
  }
}

TEST_CASE("verification score rejects mismatched or unnormalized inputs") {
  Rng rng(23);
  Embedding a = random_unit(rng, 8, Modality::audio, "a");
  Embedding v = random_unit(rng, 8, Modality::visual, "v");
  CHECK_THROWS(verification_score(a, v));
  Embedding small = random_unit(rng, 4, Modality::audio, "s");
  CHECK_THROWS(verification_score(a, small));
  Embedding denorm = a;
  denorm.vector *= 1.5;
  CHECK_THROWS(verification_score(a, denorm));
}

TEST_CASE("score averaging is the plain mean and validates its inputs") {
  std::map<Modality, double> s{{Modality::audio, 0.3},
                               {Modality::visual, 0.6},
                               {Modality::thermal, 0.9}};
  CHECK(average_scores(s) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(average_scores({{Modality::audio, 1.4}}) == 1.4);
  CHECK_THROWS(average_scores({}));
  CHECK_THROWS(average_scores({{Modality::audio, 2.5}}));
  CHECK_THROWS(average_scores({{Modality::audio, -0.1}}));
}

TEST_CASE("batched fuser agrees with the single-pair fusion path") {
  Rng rng(29);
  const int d = 6, B = 4, m = 3;
  AttentionFusionParamsT<double> p;
  p.init(m, d);
  for (Eigen::Index i = 0; i < p.W.value.size(); ++i) p.W.value.data()[i] = rng.normal();
  for (int i = 0; i < m; ++i) p.b.value(i, 0) = 0.3 * rng.normal();

  std::vector<nn::Mat<double>> embs(m, nn::Mat<double>(d, B));
  for (auto& e : embs)
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();

  AttentionFuser<double> fuser(&p);
  nn::Mat<double> out;
  fuser.forward(embs, out, false);

  for (int j = 0; j < B; ++j) {
    std::vector<Embedding> cols;
    for (int i = 0; i < m; ++i)
      cols.push_back(make_embedding(embs[i].col(j), static_cast<Modality>(i), "x"));
    auto [fused_ref, w] = attention_fuse(cols, p);
    // the batched form leaves the weighted sum unnormalized
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < m; ++i) expect += w.alpha(i) * cols[i].vector;
    CHECK((out.col(j) - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fuser.weights()(1, j) == doctest::Approx(w.alpha(1)).epsilon(1e-12));
  }
}

TEST_CASE("fuser gradients agree with finite differences") {
  Rng rng(31);
  const int d = 5, B = 3, m = 3;
  AttentionFusionParamsT<double> p;
  p.init(m, d);
  for (Eigen::Index i = 0; i < p.W.value.size(); ++i) p.W.value.data()[i] = 0.5 * rng.normal();
  for (int i = 0; i < m; ++i) p.b.value(i, 0) = 0.2 * rng.normal();

  std::vector<nn::Mat<double>> embs(m, nn::Mat<double>(d, B));
  for (auto& e : embs)
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();

  AttentionFuser<double> fuser(&p);
  nn::Mat<double> out;
  fuser.forward(embs, out, true);
  nn::Mat<double> R(d, B);
  for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = rng.normal();

  p.W.grad.setZero();
  p.b.grad.setZero();
  std::vector<nn::Mat<double>> dembs;
  fuser.backward(R, dembs);

  auto run = [&]() {
    nn::Mat<double> o;
    fuser.forward(embs, o, true);
    return (o.array() * R.array()).sum();
  };
  const double h = 1e-6;
  auto probe = [&](double* slot, double analytic) {
    const double keep = *slot;
    *slot = keep + h;
    double up = run();
    *slot = keep - h;
    double dn = run();
    *slot = keep;
    CHECK(rel_err(analytic, (up - dn) / (2 * h)) < 1e-4);
  };
  for (Eigen::Index i = 0; i < p.W.value.size(); ++i)
    probe(p.W.value.data() + i, p.W.grad.data()[i]);
  for (int i = 0; i < m; ++i) probe(&p.b.value(i, 0), p.b.grad(i, 0));
  for (int i = 0; i < m; ++i)
    for (Eigen::Index k = 0; k < embs[i].size(); ++k)
      probe(embs[i].data() + k, dembs[i].data()[k]);
}
