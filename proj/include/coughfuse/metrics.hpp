#pragma once

#include <span>
#include <vector>

namespace coughfuse::metrics {

/// Arithmetic mean of a recording's segment probabilities.
double aggregate_file_score(std::span<const double> segment_probs);

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie), from average
/// ranks. The rank sum is kept in doubled integer ranks, so the result equals
/// exact pair counting bit for bit. `labels` are 0/1.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct OperatingPoint {
  double threshold = 0.0;    // scores >= threshold are called positive
  double sensitivity = 0.0;  // achieved, may exceed the target on ties
  double specificity = 0.0;
  bool target_met = true;    // false when no cutoff reaches the target
};

/// The largest cutoff whose sensitivity reaches `target_sensitivity`.
OperatingPoint sens_spec_at_operating_point(std::span<const double> scores, std::span<const int> labels,
                                            double target_sensitivity = 0.8);

struct MetricsReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  double threshold = 0.0;
  bool target_met = true;
};

MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels,
                       double target_sensitivity = 0.8);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

}  // namespace coughfuse::metrics
