#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cpicf/gbt.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::conformal {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Calibration non-conformity scores, held in ascending order.
class CalibrationScores {
public:
    /// Sorts `scores`; throws InvalidArgument when empty or non-finite.
    explicit CalibrationScores(std::vector<double> scores);

    std::span<const double> values() const noexcept { return scores_; }
    std::size_t size() const noexcept { return scores_.size(); }
    /// 1-based order statistic S_{i:n}.
    double order_statistic(std::size_t i) const { return scores_.at(i - 1); }

private:
    std::vector<double> scores_;
};

/// ceil((1 - alpha)(n + 1)), the 1-based index of the calibrated quantile.
std::size_t quantile_index(std::size_t n, double alpha);

/// S_{i:n} with i = quantile_index(n, alpha), or +infinity when i > n.
double calibrate_quantile(const CalibrationScores& scores, double alpha);

// ---------------------------------------------------------------------------
// Binary classification prediction sets

/// 1 - p(true class): 1 - p for y = 1 and p for y = 0.
inline double classification_score(double p, int y) { return y == 1 ? 1.0 - p : p; }

CalibrationScores classification_scores(const gbt::GbtModel& model, const tabular::LabeledDataset& calib);

struct PredictionSet {
    bool zero = false;
    bool one = false;

    std::size_t size() const noexcept { return static_cast<std::size_t>(zero) + static_cast<std::size_t>(one); }
    bool contains(int y) const noexcept { return y == 1 ? one : zero; }
    static PredictionSet full() { return {true, true}; }
    static PredictionSet empty() { return {}; }
};

/// {y : S(x, y) <= qhat} for a point with predicted probability p.
PredictionSet prediction_set(double p, double qhat);

struct ClassificationConformal {
    gbt::GbtModel model;
    double qhat = kInfinity;
    double alpha = 0.1;
};

ClassificationConformal calibrate_classifier(gbt::GbtModel model, const tabular::LabeledDataset& calib,
                                             double alpha);

PredictionSet prediction_set(const ClassificationConformal& cc, const Eigen::Ref<const Eigen::VectorXd>& x);

// ---------------------------------------------------------------------------
// Regression intervals

struct PredictionInterval {
    double lo = 0.0;
    double hi = 0.0;
    // hi - lo; negative for crossed CQR intervals.
    double width = 0.0;
    bool crossed = false;

    bool contains(double y) const noexcept { return lo <= y && y <= hi; }
};

inline constexpr double kDispersionFloor = 1e-6;

// Locally weighted conformal predictor: mean model, dispersion model and the
// calibrated quantile of |y - mu(x)| / rho(x).
struct IntervalModel {
    gbt::GbtModel mu;
    gbt::GbtModel rho;
    double d_alpha = 0.0;
    double alpha = 0.1;
    double rho_min = kDispersionFloor;

    double dispersion(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Calibrates d_alpha for fixed mean and dispersion models.
IntervalModel calibrate_lwcp(gbt::GbtModel mu, gbt::GbtModel rho, const FeatureMatrix& calib_x,
                             const Eigen::VectorXd& calib_y, double alpha,
                             double rho_min = kDispersionFloor);

/// Fits rho on |y - mu(x)| over the dispersion rows, then calibrates on the
/// calibration rows. The two row sets are expected to be disjoint.
IntervalModel fit_lwcp(gbt::GbtModel mu, const FeatureMatrix& rho_x, const Eigen::VectorXd& rho_y,
                       const FeatureMatrix& calib_x, const Eigen::VectorXd& calib_y, double alpha,
                       const gbt::Hyperparams& hp, std::uint64_t seed, double rho_min = kDispersionFloor);

/// [mu - rho * d, mu + rho * d].
PredictionInterval lwcp_interval(const IntervalModel& im, const Eigen::Ref<const Eigen::VectorXd>& x);

struct CqrModel {
    gbt::GbtModel q_lo;
    gbt::GbtModel q_hi;
    double correction = 0.0;
    double alpha = 0.1;
};

CqrModel calibrate_cqr(gbt::GbtModel q_lo, gbt::GbtModel q_hi, const FeatureMatrix& calib_x,
                       const Eigen::VectorXd& calib_y, double alpha);

/// Quantile models at alpha/2 and 1 - alpha/2 on the fit split, corrected on
/// the calibration split.
CqrModel fit_cqr(const FeatureMatrix& fit_x, const Eigen::VectorXd& fit_y, const FeatureMatrix& calib_x,
                 const Eigen::VectorXd& calib_y, double alpha, const gbt::Hyperparams& hp, std::uint64_t seed);

/// [q_lo - c, q_hi + c]; crossing is reported, not repaired.
PredictionInterval cqr_interval(const CqrModel& cm, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Fraction of truths inside their interval (closed endpoints).
double empirical_coverage(std::span<const PredictionInterval> intervals, std::span<const double> truths);
double empirical_coverage(std::span<const PredictionSet> sets, std::span<const int> truths);

} // namespace cpicf::conformal
