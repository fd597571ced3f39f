#pragma once

#include <span>
#include <vector>

namespace cpicf::eval {

struct Metrics {
    double average_precision = 0.0;
    double f1 = 0.0;
    double roc_auc = 0.0;
};

struct PrPoint {
    double threshold;
    double precision;
    double recall;
};

/// Step-interpolated area under the precision-recall curve:
/// sum over distinct score thresholds of (R_i - R_{i-1}) * P_i.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Mann-Whitney rank statistic with mid-ranks for ties.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// F1 of the rule score >= threshold; 0 when nothing is predicted positive.
double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Throws UndefinedMetric unless both classes are present.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels);

/// One point per distinct threshold, in decreasing threshold order.
std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

} // namespace cpicf::eval
