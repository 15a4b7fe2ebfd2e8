#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "coughfuse/error.hpp"
#include "coughfuse/fusion.hpp"
#include "coughfuse/harness.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace coughfuse;
using fusion::Strategy;
using nn::Matrix;
using nn::Vector;

namespace {

fusion::FeatureAttentionParams random_attention(std::mt19937_64& rng, double scale = 0.1) {
  return {oracle::random_matrix(256, 256, rng, scale), oracle::random_matrix(256, 1, rng, scale).col(0),
          oracle::random_matrix(256, 1, rng).col(0), 0.3};
}

fusion::DecisionAttentionParams random_decision(std::mt19937_64& rng) {
  return {oracle::random_matrix(256, 1, rng, 0.1).col(0), 0.2, oracle::random_matrix(256, 1, rng, 0.1).col(0), -0.1};
}

Matrix random_stack(std::mt19937_64& rng, Eigen::Index n = 3) { return oracle::random_matrix(n, 256, rng).cwiseAbs(); }

Matrix permute_rows(const Matrix& m, const std::vector<Eigen::Index>& order) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(Eigen::Index(i)) = m.row(order[i]);
  return out;
}

}  // namespace

TEST_CASE("fusion gradients match central differences") {
  CHECK(gradcheck::check_fusion(Strategy::kFeatureMax, 31, 20) < gradcheck::kTolerance);
  CHECK(gradcheck::check_fusion(Strategy::kFeatureAvg, 32, 20) < gradcheck::kTolerance);
  CHECK(gradcheck::check_fusion(Strategy::kFeatureAttention, 33, 20) < gradcheck::kTolerance);
  CHECK(gradcheck::check_fusion(Strategy::kDecisionAttention, 34, 20) < gradcheck::kTolerance);
}

TEST_CASE("max and mean pooling over models") {
  Matrix toy(3, 2);
  toy << 1, -2,
         0, 5,
        -1, 3;
  std::vector<Eigen::Index> arg;
  const Vector mx = fusion::max_pool_models(toy, &arg);
  CHECK(mx(0) == 1.0);
  CHECK(mx(1) == 5.0);
  CHECK(arg == std::vector<Eigen::Index>{0, 1});

  Matrix same(3, 2);
  same << 4, 4,
          4, 4,
          4, 4;
  fusion::max_pool_models(same, &arg);
  CHECK(arg == std::vector<Eigen::Index>{0, 0});

  Matrix two(2, 4);
  two.row(0).setZero();
  two.row(1).setOnes();
  CHECK(fusion::mean_pool_models(two) == Vector::Constant(4, 0.5));

  std::mt19937_64 rng(1);
  Matrix rep(3, 256);
  const Eigen::RowVectorXd row = oracle::random_matrix(1, 256, rng);
  rep.rowwise() = row;
  CHECK(fusion::max_pool_models(rep) == row.transpose());
  CHECK((fusion::mean_pool_models(rep) - row.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("zero attention kernel reduces to feature averaging") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    auto p = random_attention(rng);
    p.conv_weight.setZero();
    p.conv_bias.setZero();
    const Matrix stack = random_stack(rng, 2 + i % 3);
    const Matrix w = fusion::feature_attention_weights(stack, p);
    CHECK((w.array() - 1.0 / double(stack.rows())).abs().maxCoeff() <= 1e-15);
    CHECK(std::abs(fusion::feature_attention(stack, p) - fusion::feature_avg(stack, p.out_weight, p.out_bias)) <= 1e-12);
  }
}

TEST_CASE("attention weights are convex per channel and per model") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Matrix stack = random_stack(rng);
    const Matrix w = fusion::feature_attention_weights(stack, random_attention(rng, 1.0));
    CHECK(w.minCoeff() >= 0.0);
    CHECK((w.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
    const Vector fused = fusion::feature_attention_fused(stack, random_attention(rng));
    for (Eigen::Index c = 0; c < 256; ++c) {
      CHECK(fused(c) >= stack.col(c).minCoeff() - 1e-12);
      CHECK(fused(c) <= stack.col(c).maxCoeff() + 1e-12);
    }
    const Vector dw = fusion::decision_attention_weights(stack, random_decision(rng));
    CHECK(dw.minCoeff() >= 0.0);
    CHECK(std::abs(dw.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("decision max and average") {
  const std::vector<double> p = {0.2, 0.7, 0.4};
  CHECK(fusion::decision_max(p) == 0.7);
  CHECK(fusion::decision_avg(p) == doctest::Approx(1.3 / 3).epsilon(1e-15));
  const std::vector<double> half = {0.5, 0.5, 0.5};
  CHECK(fusion::decision_max(half) == 0.5);
  CHECK(fusion::decision_avg(half) == 0.5);
  const std::vector<double> same = {0.123, 0.123, 0.123};
  CHECK(fusion::decision_avg(same) == doctest::Approx(0.123).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> t = {u(rng), u(rng), u(rng)};
    const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
    for (double v : {fusion::decision_max(t), fusion::decision_avg(t)}) {
      CHECK(v >= *lo);
      CHECK(v <= *hi);
    }
  }
  CHECK_THROWS_AS(fusion::decision_max(std::vector<double>{}), Error);
  CHECK_THROWS_AS(fusion::decision_avg(std::vector<double>{0.5, 1.5}), Error);
}

TEST_CASE("decision attention symmetric cases") {
  std::mt19937_64 rng(5);
  auto p = random_decision(rng);
  const Matrix stack = random_stack(rng);
  auto zero_gate = p;
  zero_gate.gate_weight.setZero();
  zero_gate.gate_bias = 0.0;
  const Vector w = fusion::decision_attention_weights(stack, zero_gate);
  CHECK((w.array() - 1.0 / 3).abs().maxCoeff() <= 1e-15);
  const Vector v = (stack * p.value_weight).array() + p.value_bias;
  CHECK(fusion::decision_attention(stack, zero_gate) == doctest::Approx(oracle::sigmoid(v.mean())).epsilon(1e-14));

  Matrix same(3, 256);
  same.rowwise() = stack.row(0);
  CHECK(fusion::decision_attention(same, p) ==
        doctest::Approx(oracle::sigmoid(stack.row(0).dot(p.value_weight) + p.value_bias)).epsilon(1e-14));
}

TEST_CASE("fusions are invariant under model reordering") {
  std::mt19937_64 rng(6);
  const std::vector<Eigen::Index> order = {2, 0, 1};
  for (int i = 0; i < 20; ++i) {
    const Matrix stack = random_stack(rng);
    const Matrix perm = permute_rows(stack, order);
    const auto fa = random_attention(rng);
    const auto da = random_decision(rng);
    CHECK(fusion::feature_attention(perm, fa) == doctest::Approx(fusion::feature_attention(stack, fa)).epsilon(1e-12));
    CHECK(fusion::decision_attention(perm, da) == doctest::Approx(fusion::decision_attention(stack, da)).epsilon(1e-12));
    CHECK(fusion::feature_max(perm, fa.out_weight, 0.0) == fusion::feature_max(stack, fa.out_weight, 0.0));
    CHECK(fusion::feature_avg(perm, fa.out_weight, 0.0) == doctest::Approx(fusion::feature_avg(stack, fa.out_weight, 0.0)).epsilon(1e-12));
    std::vector<double> probs = {0.1 + 0.01 * i, 0.5, 0.9 - 0.02 * i}, rev(probs.rbegin(), probs.rend());
    CHECK(fusion::decision_max(probs) == fusion::decision_max(rev));
    CHECK(fusion::decision_avg(probs) == doctest::Approx(fusion::decision_avg(rev)).epsilon(1e-15));
  }
}

TEST_CASE("stacks must be well formed") {
  CHECK_THROWS_AS(fusion::validate_stack(Matrix::Zero(1, 256)), Error);
  CHECK_THROWS_AS(fusion::validate_stack(Matrix::Zero(3, 255)), Error);
  Matrix bad = Matrix::Zero(3, 256);
  bad(1, 2) = std::nan("");
  CHECK_THROWS_AS(fusion::validate_stack(bad), Error);
  CHECK_NOTHROW(fusion::validate_stack(Matrix::Zero(3, 256)));
}

TEST_CASE("packed rows round trip") {
  std::mt19937_64 rng(7);
  std::vector<Matrix> stacks = {random_stack(rng), random_stack(rng)};
  const Matrix logits = oracle::random_matrix(2, 3, rng);
  const Matrix rows = fusion::pack_rows(stacks, logits);
  CHECK(rows.cols() == 3 * 256 + 3);
  CHECK(rows(1, 256 + 7) == stacks[1](1, 7));
  const auto back = fusion::unpack_rows(rows, 3);
  CHECK(back.stacks[0] == stacks[0]);
  CHECK(back.stacks[1] == stacks[1]);
  CHECK(back.member_logits == logits);
}

TEST_CASE("head predictions agree with the free functions") {
  std::mt19937_64 rng(8);
  std::vector<Matrix> stacks = {random_stack(rng), random_stack(rng)};
  const Matrix logits = oracle::random_matrix(2, 3, rng);
  const Matrix rows = fusion::pack_rows(stacks, logits);
  for (auto s : fusion::all_strategies()) {
    fusion::FusionHead head(s, 3, 5);
    const auto probs = head.predict(rows);
    for (std::size_t b = 0; b < 2; ++b) {
      double expect = 0;
      std::vector<double> member(3);
      for (int m = 0; m < 3; ++m) member[std::size_t(m)] = oracle::sigmoid(logits(Eigen::Index(b), m));
      switch (s) {
        case Strategy::kFeatureMax: {
          const auto fa = head.feature_attention_params();
          expect = oracle::sigmoid(fusion::feature_max(stacks[b], fa.out_weight, fa.out_bias));
          break;
        }
        case Strategy::kFeatureAvg: {
          const auto fa = head.feature_attention_params();
          expect = oracle::sigmoid(fusion::feature_avg(stacks[b], fa.out_weight, fa.out_bias));
          break;
        }
        case Strategy::kFeatureAttention:
          expect = oracle::sigmoid(fusion::feature_attention(stacks[b], head.feature_attention_params()));
          break;
        case Strategy::kDecisionMax: expect = fusion::decision_max(member); break;
        case Strategy::kDecisionAvg: expect = fusion::decision_avg(member); break;
        case Strategy::kDecisionAttention: expect = fusion::decision_attention(stacks[b], head.decision_attention_params()); break;
      }
      CHECK(probs[b] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("feature_avg head separates separable embeddings") {
  std::mt19937_64 rng(9);
  const int n = 64;
  std::vector<Matrix> stacks;
  Matrix logits = Matrix::Zero(n, 3);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    y(i) = i % 2;
    // Classes sit at -0.5 and +0.5 in every unit, so no bias is needed.
    Matrix s = oracle::random_matrix(3, 256, rng, 0.5);
    s.array() += y(i) ? 0.5 : -0.5;
    stacks.push_back(s);
  }
  const Matrix rows = fusion::pack_rows(stacks, logits);
  TrainConfig cfg;
  fusion::FusionHead head(Strategy::kFeatureAvg, 3, 1);
  const auto log = harness::train(head, rows, y, cfg, 2);
  const auto probs = head.predict(rows);
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += (probs[std::size_t(i)] >= 0.5) == (y(i) == 1.0);
  CHECK(correct == n);
  CHECK(log.epoch_loss.size() == 30);
}

TEST_CASE("training loss decreases") {
  std::vector<double> first, last;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::vector<Matrix> stacks;
    Vector y(48);
    for (int i = 0; i < 48; ++i) {
      y(i) = i % 4 == 0;
      Matrix s = random_stack(rng);
      s.block(0, 0, 3, 8).array() += y(i) ? 0.8 : 0.0;
      stacks.push_back(s);
    }
    fusion::FusionHead head(Strategy::kFeatureAttention, 3, seed);
    const auto log = harness::train(head, fusion::pack_rows(stacks, Matrix::Zero(48, 3)), y, TrainConfig{}, seed);
    first.push_back(log.epoch_loss.front());
    last.push_back(log.epoch_loss.back());
  }
  CHECK(oracle::percentile(last, 0.5) < oracle::percentile(first, 0.5));
}

TEST_CASE("fusion checkpoints detect changed members") {
  testutil::TempDir dir;
  std::vector<std::filesystem::path> paths;
  std::vector<std::string> hashes;
  for (int m = 0; m < 3; ++m) {
    models::Model model(models::ModelSpec::handcrafted(models::FeatureSet::kMfcc), std::uint64_t(m));
    const auto path = dir / ("m" + std::to_string(m) + ".ckpt");
    model.save(path);
    paths.push_back(path.filename());
    hashes.push_back(file_content_hash(path));
  }
  fusion::FusionHead head(Strategy::kDecisionAttention, 3, 1);
  fusion::save_fusion(dir / "f.ckpt", head, {Strategy::kDecisionAttention, paths, hashes});
  const auto loaded = fusion::load_fusion(dir / "f.ckpt");
  CHECK(loaded.info.member_hashes == hashes);
  CHECK(loaded.members.size() == 3);
  CHECK(loaded.head.decision_attention_params().value_weight == head.decision_attention_params().value_weight);

  models::Model other(models::ModelSpec::handcrafted(models::FeatureSet::kMfcc), 99);
  other.save(dir / "m1.ckpt");
  CHECK_THROWS_AS(fusion::load_fusion(dir / "f.ckpt"), Error);
}
