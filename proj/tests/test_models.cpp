#include <cmath>
#include <random>

#include "coughfuse/error.hpp"
#include "coughfuse/models.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace coughfuse;
using models::Model;
using models::ModelKind;
using models::ModelSpec;
using nn::Matrix;

namespace {

void zero_all(Model& m) {
  for (auto* p : m.parameters()) p->value.setZero();
}

/// Frame-major rows holding the same Mel column in every frame.
Matrix constant_frames(const Eigen::VectorXd& column, Eigen::Index frames) {
  Matrix row(1, column.size() * frames);
  for (Eigen::Index t = 0; t < frames; ++t) row.block(0, t * column.size(), 1, column.size()) = column.transpose();
  return row;
}

}  // namespace

TEST_CASE("model gradients match central differences") {
  std::size_t kinks = 0;
  CHECK(gradcheck::check_models(21, 12, kinks) < gradcheck::kTolerance);
  // 12 models with about 10 probes of up to 20 entries each.
  CHECK(kinks <= 10);
}

TEST_CASE("zero parameters give logit 0 and a zero embedding") {
  std::mt19937_64 rng(1);
  Model dnn(ModelSpec::handcrafted(models::FeatureSet::kLogMel), 3);
  zero_all(dnn);
  const auto out = dnn.infer(oracle::random_matrix(2, Eigen::Index(dnn.spec().input_dim), rng));
  CHECK(out.logits.cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.embeddings.cols() == models::kEmbeddingDim);
  CHECK(out.embeddings.cwiseAbs().maxCoeff() == 0.0);

  Model cnn(ModelSpec::spectrogram(ModelKind::kSpecCnnB), 4);
  zero_all(cnn);
  const auto z = cnn.infer(Matrix::Zero(1, 64 * 224));
  CHECK(z.logits(0) == 0.0);
  CHECK(models::predict_segment_prob(z.logits(0)) == 0.5);
}

TEST_CASE("input sizes follow the model kind") {
  CHECK(ModelSpec::handcrafted(models::FeatureSet::kLogMel).input_dim == 26 * 20);
  CHECK(ModelSpec::handcrafted(models::FeatureSet::kMfcc).input_dim == 14 * 20);
  CHECK(ModelSpec::spectrogram(ModelKind::kSpecCnnA).n_mels == 128);
  CHECK(ModelSpec::spectrogram(ModelKind::kSpecCnnB).n_mels == 64);
  Model dnn(ModelSpec::handcrafted(models::FeatureSet::kMfcc), 0);
  CHECK_THROWS_AS(dnn.infer(Matrix::Zero(1, 7)), Error);
  Model cnn(ModelSpec::spectrogram(ModelKind::kSpecCnnB), 0);
  CHECK_THROWS_AS(cnn.infer(Matrix::Zero(1, 65)), Error);
}

TEST_CASE("embeddings are 256-d, nonnegative and finite") {
  std::mt19937_64 rng(2);
  for (auto kind : {ModelKind::kSpecCnnA, ModelKind::kSpecCnnB}) {
    Model m(ModelSpec::spectrogram(kind), 5);
    const auto n = Eigen::Index(m.spec().n_mels);
    const auto out = m.infer(oracle::random_matrix(2, n * 40, rng));
    CHECK(out.embeddings.rows() == 2);
    CHECK(out.embeddings.cols() == 256);
    CHECK(out.embeddings.minCoeff() >= 0.0);
    CHECK(out.logits.allFinite());
  }
}

TEST_CASE("frame-constant input gives an output invariant to length") {
  std::mt19937_64 rng(3);
  ModelSpec spec = ModelSpec::spectrogram(ModelKind::kSpecCnnB);
  Model m(spec, 6);
  const Eigen::VectorXd column = oracle::random_matrix(64, 1, rng).col(0);
  const double ref = m.infer(constant_frames(column, 224)).logits(0);
  for (Eigen::Index frames : {4, 17, 100, 301}) CHECK(std::abs(m.infer(constant_frames(column, frames)).logits(0) - ref) <= 1e-9);
}

TEST_CASE("parameter counts") {
  Model dnn(ModelSpec::handcrafted(models::FeatureSet::kLogMel), 0);
  const std::size_t head_tail = 1024 * 256 + 256 + 256 + 1;
  CHECK(dnn.parameter_count() == 520 * 1024 + 1024 + head_tail);
  Model cnn(ModelSpec::spectrogram(ModelKind::kSpecCnnA), 0);
  CHECK(cnn.parameter_count() == 128 * 32 * 3 + 32 + 32 * 64 * 3 + 64 + 128 * 1024 + 1024 + head_tail);
}

TEST_CASE("forward is pure and seeds reproduce") {
  std::mt19937_64 rng(4);
  Model a(ModelSpec::handcrafted(models::FeatureSet::kMfcc), 11), b(ModelSpec::handcrafted(models::FeatureSet::kMfcc), 11);
  const Matrix x = oracle::random_matrix(3, 280, rng);
  CHECK(a.infer(x).logits == a.infer(x).logits);
  CHECK(a.infer(x).logits == b.infer(x).logits);
  CHECK(a.forward(x).logits == a.infer(x).logits);
  Model c(ModelSpec::handcrafted(models::FeatureSet::kMfcc), 12);
  CHECK(a.infer(x).logits != c.infer(x).logits);
}

TEST_CASE("probabilities are the logistic of the logit") {
  std::mt19937_64 rng(5);
  Model m(ModelSpec::handcrafted(models::FeatureSet::kLogMel), 1);
  const Matrix x = oracle::random_matrix(4, 520, rng, 3.0);
  const auto logits = m.infer(x).logits;
  const auto probs = models::predict_segment_probs(m, x);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(probs[std::size_t(i)] == doctest::Approx(oracle::sigmoid(logits(i))).epsilon(1e-14));
  CHECK(models::predict_segment_prob(1e6) == 1.0);
  CHECK(models::predict_segment_prob(-1e6) == 0.0);
}

TEST_CASE("normalizer standardizes each feature or Mel band") {
  std::mt19937_64 rng(6);
  Model dnn(ModelSpec::handcrafted(models::FeatureSet::kMfcc), 0);
  Matrix rows = oracle::random_matrix(50, 280, rng, 3.0);
  rows.col(5).setConstant(2.0);
  dnn.fit_normalizer(rows);
  CHECK(dnn.normalizer().mean(0) == doctest::Approx(rows.col(0).mean()));
  CHECK(dnn.normalizer().stddev.minCoeff() > 0.0);

  ModelSpec spec = ModelSpec::spectrogram(ModelKind::kSpecCnnB);
  Model cnn(spec, 0);
  Matrix spec_rows = oracle::random_matrix(3, 64 * 10, rng);
  cnn.fit_normalizer(spec_rows);
  double band0 = 0;
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index t = 0; t < 10; ++t) band0 += spec_rows(r, t * 64);
  CHECK(cnn.normalizer().mean.size() == 64);
  CHECK(cnn.normalizer().mean(0) == doctest::Approx(band0 / 30));
}

TEST_CASE("checkpoint round trip preserves outputs") {
  testutil::TempDir dir;
  std::mt19937_64 rng(7);
  for (auto spec : {ModelSpec::handcrafted(models::FeatureSet::kLogMel), ModelSpec::spectrogram(ModelKind::kSpecCnnB)}) {
    Model m(spec, 9);
    const auto width = spec.is_spectrogram() ? Eigen::Index(spec.n_mels) * 12 : Eigen::Index(spec.input_dim);
    m.fit_normalizer(oracle::random_matrix(6, width, rng, 2.0));
    m.save(dir / "m.ckpt");
    const Model back = Model::load(dir / "m.ckpt");
    CHECK(back.spec() == spec);
    const Matrix x = oracle::random_matrix(2, width, rng);
    CHECK(back.infer(x).logits == m.infer(x).logits);
    CHECK(back.infer(x).embeddings == m.infer(x).embeddings);
  }
}

TEST_CASE("spec names round trip") {
  for (auto kind : {ModelKind::kHandcraftedDnn, ModelKind::kSpecCnnA, ModelKind::kSpecCnnB})
    CHECK(models::model_kind_from_string(models::to_string(kind)) == kind);
  CHECK(ModelSpec::handcrafted(models::FeatureSet::kLogMel).label() == "handcrafted_dnn:logmel");
  CHECK_THROWS_AS(models::model_kind_from_string("resnet"), InvalidArgument);
  const auto spec = ModelSpec::spectrogram(ModelKind::kSpecCnnA);
  CHECK(ModelSpec::from_json(spec.to_json()) == spec);
}
