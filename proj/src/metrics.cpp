#include "cpicf/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cpicf/errors.hpp"

namespace cpicf::eval {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw InvalidArgument("scores and labels differ in length (" + std::to_string(scores.size()) +
                              " vs " + std::to_string(labels.size()) + ")");
    for (int y : labels)
        if (y != 0 && y != 1) throw InvalidArgument("labels must be 0 or 1");
}

void require_both_classes(std::span<const int> labels, const char* metric) {
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size()))
        throw UndefinedMetric(std::string(metric) + " is undefined when only one class is present");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

} // namespace

std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const auto order = descending_order(scores);
    std::vector<PrPoint> curve;
    double tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t i = order[k];
        (labels[i] == 1 ? tp : fp) += 1;
        const bool last_of_tie = k + 1 == order.size() || scores[order[k + 1]] != scores[i];
        if (!last_of_tie) continue;
        curve.push_back({scores[i], tp / (tp + fp), total_pos > 0 ? tp / total_pos : 0.0});
    }
    return curve;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    require_both_classes(labels, "average precision");
    double ap = 0.0, previous_recall = 0.0;
    for (const auto& point : pr_curve(scores, labels)) {
        ap += (point.recall - previous_recall) * point.precision;
        previous_recall = point.recall;
    }
    return ap;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    require_both_classes(labels, "ROC AUC");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0, n_pos = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        std::size_t end = k;
        while (end < order.size() && scores[order[end]] == scores[order[k]]) ++end;
        // Ranks k+1 .. end share their mean.
        const double mid_rank = 0.5 * static_cast<double>(k + 1 + end);
        for (std::size_t t = k; t < end; ++t)
            if (labels[order[t]] == 1) {
                rank_sum += mid_rank;
                n_pos += 1;
            }
        k = end;
    }
    const double n_neg = static_cast<double>(scores.size()) - n_pos;
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_inputs(scores, labels);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (predicted && labels[i] == 1) tp += 1;
        else if (predicted) fp += 1;
        else if (labels[i] == 1) fn += 1;
    }
    const double denom = 2 * tp + fp + fn;
    return denom > 0 ? 2 * tp / denom : 0.0;
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels) {
    return {average_precision(scores, labels), f1_score(scores, labels, 0.5), roc_auc(scores, labels)};
}

} // namespace cpicf::eval
