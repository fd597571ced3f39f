#include "cpicf/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpicf/errors.hpp"

namespace cpicf::conformal {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("alpha must lie in (0,1)");
}

void check_rows(const FeatureMatrix& x, const Eigen::VectorXd& y, const char* what) {
    if (x.rows() == 0) throw InvalidArgument(std::string(what) + " is empty");
    if (x.rows() != y.size()) throw InvalidArgument(std::string(what) + ": row and target counts differ");
}

} // namespace

CalibrationScores::CalibrationScores(std::vector<double> scores) : scores_(std::move(scores)) {
    if (scores_.empty()) throw InvalidArgument("calibration scores are empty");
    for (double s : scores_)
        if (!std::isfinite(s)) throw InvalidArgument("calibration scores must be finite");
    std::sort(scores_.begin(), scores_.end());
}

std::size_t quantile_index(std::size_t n, double alpha) {
    check_alpha(alpha);
    // The guard keeps products such as 0.9 * 10 from rounding up past an integer.
    const double position = (1.0 - alpha) * static_cast<double>(n + 1);
    return static_cast<std::size_t>(std::ceil(position - 1e-9));
}

double calibrate_quantile(const CalibrationScores& scores, double alpha) {
    const std::size_t i = quantile_index(scores.size(), alpha);
    if (i > scores.size()) return kInfinity;
    return scores.order_statistic(std::max<std::size_t>(i, 1));
}

CalibrationScores classification_scores(const gbt::GbtModel& model, const tabular::LabeledDataset& calib) {
    if (calib.rows() == 0) throw InvalidArgument("calibration set is empty");
    const Eigen::VectorXd p = model.predict(calib.features());
    std::vector<double> scores(calib.rows());
    for (std::size_t i = 0; i < calib.rows(); ++i)
        scores[i] = classification_score(p(static_cast<Eigen::Index>(i)), calib.label(i));
    return CalibrationScores(std::move(scores));
}

PredictionSet prediction_set(double p, double qhat) {
    return {classification_score(p, 0) <= qhat, classification_score(p, 1) <= qhat};
}

ClassificationConformal calibrate_classifier(gbt::GbtModel model, const tabular::LabeledDataset& calib,
                                             double alpha) {
    const double qhat = calibrate_quantile(classification_scores(model, calib), alpha);
    return {std::move(model), qhat, alpha};
}

PredictionSet prediction_set(const ClassificationConformal& cc, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return prediction_set(gbt::predict_proba(cc.model, x), cc.qhat);
}

double IntervalModel::dispersion(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return std::max(rho.predict(x), rho_min);
}

IntervalModel calibrate_lwcp(gbt::GbtModel mu, gbt::GbtModel rho, const FeatureMatrix& calib_x,
                             const Eigen::VectorXd& calib_y, double alpha, double rho_min) {
    check_alpha(alpha);
    check_rows(calib_x, calib_y, "calibration set");
    if (!(rho_min > 0)) throw InvalidArgument("rho_min must be > 0");
    const Eigen::VectorXd mean = mu.predict(calib_x);
    const Eigen::VectorXd spread = rho.predict(calib_x).cwiseMax(rho_min);
    const Eigen::VectorXd weighted = (calib_y - mean).cwiseAbs().cwiseQuotient(spread);
    IntervalModel im{std::move(mu), std::move(rho), 0.0, alpha, rho_min};
    im.d_alpha = calibrate_quantile(
        CalibrationScores(std::vector<double>(weighted.data(), weighted.data() + weighted.size())), alpha);
    return im;
}

IntervalModel fit_lwcp(gbt::GbtModel mu, const FeatureMatrix& rho_x, const Eigen::VectorXd& rho_y,
                       const FeatureMatrix& calib_x, const Eigen::VectorXd& calib_y, double alpha,
                       const gbt::Hyperparams& hp, std::uint64_t seed, double rho_min) {
    check_alpha(alpha);
    check_rows(calib_x, calib_y, "calibration set");
    check_rows(rho_x, rho_y, "dispersion training set");
    const Eigen::VectorXd residual = (rho_y - mu.predict(rho_x)).cwiseAbs();
    auto rho = gbt::fit(rho_x, residual, gbt::Loss::squared(), hp, seed, mu.fingerprint());
    return calibrate_lwcp(std::move(mu), std::move(rho), calib_x, calib_y, alpha, rho_min);
}

PredictionInterval lwcp_interval(const IntervalModel& im, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const double centre = im.mu.predict(x);
    const double half = im.dispersion(x) * im.d_alpha;
    return {centre - half, centre + half, 2.0 * half, false};
}

CqrModel calibrate_cqr(gbt::GbtModel q_lo, gbt::GbtModel q_hi, const FeatureMatrix& calib_x,
                       const Eigen::VectorXd& calib_y, double alpha) {
    check_alpha(alpha);
    check_rows(calib_x, calib_y, "calibration split");
    const Eigen::VectorXd lo = q_lo.predict(calib_x);
    const Eigen::VectorXd hi = q_hi.predict(calib_x);
    std::vector<double> scores(static_cast<std::size_t>(calib_y.size()));
    for (Eigen::Index i = 0; i < calib_y.size(); ++i)
        scores[static_cast<std::size_t>(i)] = std::max(lo(i) - calib_y(i), calib_y(i) - hi(i));
    const double correction = calibrate_quantile(CalibrationScores(std::move(scores)), alpha);
    return {std::move(q_lo), std::move(q_hi), correction, alpha};
}

CqrModel fit_cqr(const FeatureMatrix& fit_x, const Eigen::VectorXd& fit_y, const FeatureMatrix& calib_x,
                 const Eigen::VectorXd& calib_y, double alpha, const gbt::Hyperparams& hp, std::uint64_t seed) {
    check_alpha(alpha);
    check_rows(fit_x, fit_y, "fit split");
    check_rows(calib_x, calib_y, "calibration split");
    auto q_lo = gbt::fit(fit_x, fit_y, gbt::Loss::pinball(alpha / 2), hp, seed);
    auto q_hi = gbt::fit(fit_x, fit_y, gbt::Loss::pinball(1 - alpha / 2), hp, seed);
    return calibrate_cqr(std::move(q_lo), std::move(q_hi), calib_x, calib_y, alpha);
}

PredictionInterval cqr_interval(const CqrModel& cm, const Eigen::Ref<const Eigen::VectorXd>& x) {
    const double lo = cm.q_lo.predict(x) - cm.correction;
    const double hi = cm.q_hi.predict(x) + cm.correction;
    return {lo, hi, hi - lo, hi < lo};
}

double empirical_coverage(std::span<const PredictionInterval> intervals, std::span<const double> truths) {
    if (intervals.size() != truths.size()) throw InvalidArgument("coverage: length mismatch");
    if (intervals.empty()) throw InvalidArgument("coverage: no intervals");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) covered += intervals[i].contains(truths[i]);
    return static_cast<double>(covered) / static_cast<double>(intervals.size());
}

double empirical_coverage(std::span<const PredictionSet> sets, std::span<const int> truths) {
    if (sets.size() != truths.size()) throw InvalidArgument("coverage: length mismatch");
    if (sets.empty()) throw InvalidArgument("coverage: no sets");
    std::size_t covered = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) covered += sets[i].contains(truths[i]);
    return static_cast<double>(covered) / static_cast<double>(sets.size());
}

} // namespace cpicf::conformal
