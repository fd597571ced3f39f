#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cpicf/tabular.hpp"

namespace cpicf::gbt {

enum class LossKind { logistic, squared, pinball };

struct Loss {
    LossKind kind = LossKind::squared;
    double tau = 0.5; // pinball only

    static Loss logistic() { return {LossKind::logistic, 0.5}; }
    static Loss squared() { return {LossKind::squared, 0.5}; }
    static Loss pinball(double tau);

    bool operator==(const Loss&) const = default;
};

struct Hyperparams {
    int n_estimators = 100;
    int max_depth = 6;
    double learning_rate = 0.1;
    // Minimum hessian sum per child for logistic loss, minimum row count for
    // squared and pinball losses.
    double min_child_weight = 1.0;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    // L2 penalty on leaf values (Newton leaves only).
    double reg_lambda = 1.0;

    void validate() const;
    nlohmann::json to_json() const;
    static Hyperparams from_json(const nlohmann::json& doc);
    bool operator==(const Hyperparams&) const = default;
};

/// The tuning grid used for the entity classifier (5*5*4*5*3*3 points).
std::vector<Hyperparams> appendix_grid();

// Flat tree storage. A node is a leaf when feature < 0; otherwise rows with
// x[feature] <= threshold go to `left`.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;

    template <typename Row>
    double predict(const Row& x) const {
        int k = 0;
        while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
            const auto& n = nodes[static_cast<std::size_t>(k)];
            k = x(n.feature) <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(k)].value;
    }

    std::size_t depth() const;
};

class GbtModel {
public:
    GbtModel() = default;
    GbtModel(std::vector<Tree> trees, double learning_rate, double base_score, Loss loss,
             std::size_t n_features, std::string fingerprint);

    /// A model with one empty-contribution tree: predicts `base_score`
    /// (raw scale) everywhere.
    static GbtModel constant(double base_score, Loss loss, std::size_t n_features,
                             std::string fingerprint = {});

    /// base_score + learning_rate * sum of tree outputs.
    double raw(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    /// Probability for logistic models, raw prediction otherwise.
    double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    Eigen::VectorXd predict(const FeatureMatrix& x) const;

    const std::vector<Tree>& trees() const noexcept { return trees_; }
    double learning_rate() const noexcept { return learning_rate_; }
    double base_score() const noexcept { return base_score_; }
    const Loss& loss() const noexcept { return loss_; }
    std::size_t n_features() const noexcept { return n_features_; }
    const std::string& fingerprint() const noexcept { return fingerprint_; }

    /// Throws InvalidArgument when `schema` is not the one the model was fit on.
    void check_schema(const tabular::FeatureSchema& schema) const;

    nlohmann::json to_json() const;
    static GbtModel from_json(const nlohmann::json& doc);

private:
    void check_width(Eigen::Index cols) const;

    std::vector<Tree> trees_;
    double learning_rate_ = 0.1;
    double base_score_ = 0.0;
    Loss loss_{};
    std::size_t n_features_ = 0;
    std::string fingerprint_;
};

/// Optional per-round observer: (round, training loss after the round).
using RoundCallback = std::function<void(int, double)>;

GbtModel fit(const FeatureMatrix& x, const Eigen::VectorXd& targets, const Loss& loss,
             const Hyperparams& hp, std::uint64_t seed, std::string fingerprint = {},
             const RoundCallback& on_round = {});

/// Logistic model on a labelled dataset.
GbtModel fit_classifier(const tabular::LabeledDataset& data, const Hyperparams& hp,
                        std::uint64_t seed, const RoundCallback& on_round = {});

double predict_proba(const GbtModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
/// 1 iff predict_proba(x) >= threshold.
int classify(const GbtModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
             double threshold = 0.5);

/// Mean loss of `model` over the rows (log-loss, squared error or pinball).
double training_loss(const GbtModel& model, const FeatureMatrix& x, const Eigen::VectorXd& targets);

struct CvResult {
    Hyperparams best;
    std::size_t best_index = 0;
    std::vector<double> scores; // mean held-fold average precision per grid point
};

/// Stratified k-fold search maximising mean held-fold average precision.
/// Ties go to the earliest grid point.
CvResult cross_validate(const tabular::LabeledDataset& data, std::span<const Hyperparams> grid,
                        int folds, std::uint64_t seed);

} // namespace cpicf::gbt
