#include "coughfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "coughfuse/error.hpp"

namespace coughfuse::metrics {

namespace {

struct ClassCounts {
  std::int64_t pos = 0;
  std::int64_t neg = 0;
};

ClassCounts check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw InvalidArgument("NaN score");
    (labels[i] ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0) throw InvalidArgument("metrics need at least one positive and one negative");
  return c;
}

}  // namespace

double aggregate_file_score(std::span<const double> segment_probs) {
  if (segment_probs.empty()) throw InvalidArgument("no segment probabilities to aggregate");
  return std::accumulate(segment_probs.begin(), segment_probs.end(), 0.0) / double(segment_probs.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto counts = check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positives' rank sum, ranks 1-based and averaged over ties.
  std::int64_t rank_sum_x2 = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const auto tied_rank_x2 = static_cast<std::int64_t>(i + 1 + j);  // 2 * mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_x2 += tied_rank_x2;
    i = j;
  }
  // 2U = 2R - P(P+1); AUC = 2U / (2 P N)
  const std::int64_t u_x2 = rank_sum_x2 - counts.pos * (counts.pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

OperatingPoint sens_spec_at_operating_point(std::span<const double> scores, std::span<const int> labels,
                                            double target_sensitivity) {
  const auto counts = check_inputs(scores, labels);
  if (!(target_sensitivity >= 0.0 && target_sensitivity <= 1.0))
    throw InvalidArgument("target sensitivity must lie in [0, 1]");

  std::vector<double> pos;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i]) pos.push_back(scores[i]);
  std::sort(pos.begin(), pos.end(), std::greater<>());

  // Fewest positives that must be called: ceil(target * P), guarding against
  // 0.8 * 5 landing a hair above 4.
  const double needed_real = target_sensitivity * double(counts.pos);
  auto needed = static_cast<std::int64_t>(std::ceil(needed_real - 1e-9));
  needed = std::clamp<std::int64_t>(needed, 1, counts.pos);

  OperatingPoint op;
  op.threshold = pos[static_cast<std::size_t>(needed - 1)];
  std::int64_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool called = scores[i] >= op.threshold;
    if (labels[i] && called) ++tp;
    if (!labels[i] && !called) ++tn;
  }
  op.sensitivity = double(tp) / double(counts.pos);
  op.specificity = double(tn) / double(counts.neg);
  op.target_met = op.sensitivity + 1e-12 >= target_sensitivity;
  return op;
}

MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels, double target_sensitivity) {
  const auto op = sens_spec_at_operating_point(scores, labels, target_sensitivity);
  return {op.sensitivity, op.specificity, roc_auc(scores, labels), op.threshold, op.target_met};
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean/std of an empty list");
  MeanStd r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(acc / double(values.size()));
  return r;
}

}  // namespace coughfuse::metrics
