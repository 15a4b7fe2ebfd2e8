#include <cmath>
#include <random>

#include "coughfuse/error.hpp"
#include "coughfuse/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace coughfuse;

namespace {

struct Sweep {
  double threshold, sensitivity, specificity;
};

/// Tries every distinct score as a cutoff and keeps the largest one whose
/// sensitivity reaches the target.
Sweep sweep_oracle(const std::vector<double>& s, const std::vector<int>& y, double target) {
  Sweep best{-1, 0, 0};
  for (double t : s) {
    int tp = 0, p = 0, tn = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (y[i]) p++, tp += s[i] >= t;
      else n++, tn += s[i] < t;
    }
    const double sens = double(tp) / p;
    if (sens >= target && t > best.threshold) best = {t, sens, double(tn) / n};
  }
  return best;
}

void random_set(std::mt19937_64& rng, std::vector<double>& s, std::vector<int>& y) {
  const std::size_t n = 2 + rng() % 99;
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Coarse grid to force ties.
    s[i] = double(rng() % 20) / 20.0;
    y[i] = int(rng() % 3 == 0);
  }
  y[0] = 1;
  y[1] = 0;
}

}  // namespace

TEST_CASE("file score is the mean segment probability") {
  CHECK(metrics::aggregate_file_score(std::vector<double>{0.2, 0.8}) == 0.5);
  CHECK(metrics::aggregate_file_score(std::vector<double>{0.37}) == 0.37);
  CHECK_THROWS_AS(metrics::aggregate_file_score(std::vector<double>{}), Error);
}

TEST_CASE("AUC examples") {
  CHECK(metrics::roc_auc(std::vector<double>{0.8, 0.2, 0.6}, std::vector<int>{1, 0, 0}) == 1.0);
  CHECK(metrics::roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}) == 0.5);
  CHECK(metrics::roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}) == 0.0);
  CHECK_THROWS_AS(metrics::roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 1}), Error);
  CHECK_THROWS_AS(metrics::roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), Error);
}

TEST_CASE("AUC equals pair counting and ignores monotone transforms") {
  std::mt19937_64 rng(1);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 200; ++trial) {
    random_set(rng, s, y);
    const double auc = metrics::roc_auc(s, y);
    CHECK(auc == oracle::pair_count_auc(s, y));
    std::vector<double> cube(s), logistic(s);
    for (auto& v : cube) v = v * v * v;
    for (auto& v : logistic) v = oracle::sigmoid(4.0 * v - 1.0);
    CHECK(metrics::roc_auc(cube, y) == auc);
    CHECK(metrics::roc_auc(logistic, y) == auc);
  }
}

TEST_CASE("operating point examples") {
  // Five positives: the fourth highest reaches 0.8 sensitivity.
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.1, 0.05, 0.5, 0.3, 0.02};
  const std::vector<int> y = {1, 1, 1, 1, 1, 0, 0, 0};
  const auto op = metrics::sens_spec_at_operating_point(s, y, 0.8);
  CHECK(op.threshold == 0.1);
  CHECK(op.sensitivity == 0.8);
  CHECK(op.specificity == doctest::Approx(1.0 / 3));
  CHECK(op.target_met);

  const std::vector<double> sep = {0.9, 0.8, 0.7, 0.2, 0.1};
  const std::vector<int> ysep = {1, 1, 1, 0, 0};
  const auto r = metrics::sens_spec_at_operating_point(sep, ysep, 0.8);
  CHECK(r.sensitivity >= 0.8);
  CHECK(r.specificity == 1.0);

  // One negative above every positive.
  const std::vector<double> one = {0.95, 0.9, 0.8, 0.7, 0.6, 0.3, 0.2, 0.1};
  const std::vector<int> yone = {0, 1, 1, 1, 1, 0, 0, 0};
  CHECK(metrics::sens_spec_at_operating_point(one, yone, 0.8).specificity == 1.0 - 1.0 / 4);
}

TEST_CASE("operating point matches an exhaustive sweep") {
  std::mt19937_64 rng(2);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 200; ++trial) {
    random_set(rng, s, y);
    const auto got = metrics::sens_spec_at_operating_point(s, y, 0.8);
    const auto want = sweep_oracle(s, y, 0.8);
    CHECK(got.threshold == want.threshold);
    CHECK(got.sensitivity == doctest::Approx(want.sensitivity));
    CHECK(got.specificity == doctest::Approx(want.specificity));
  }
}

TEST_CASE("evaluate bundles the metrics in [0, 1]") {
  std::mt19937_64 rng(3);
  std::vector<double> s;
  std::vector<int> y;
  random_set(rng, s, y);
  const auto r = metrics::evaluate(s, y);
  for (double v : {r.sensitivity, r.specificity, r.auc}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(r.auc == metrics::roc_auc(s, y));
}

TEST_CASE("mean and population std") {
  const auto ms = metrics::mean_std(std::vector<double>{60, 70, 65, 62, 68});
  CHECK(ms.mean == 65.0);
  CHECK(ms.std == doctest::Approx(std::sqrt((25 + 25 + 0 + 9 + 9) / 5.0)));
  CHECK(metrics::mean_std(std::vector<double>{0.7, 0.7, 0.7}).std <= 1e-15);
  CHECK(metrics::mean_std(std::vector<double>{0.5, 0.5}).std == 0.0);
}
