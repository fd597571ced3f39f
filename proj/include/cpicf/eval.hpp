#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cpicf/counterfactual.hpp"
#include "cpicf/gbt.hpp"
#include "cpicf/metrics.hpp"
#include "cpicf/search.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::eval {

// Square lattice of offsets omega over two features, centred on 0, with
// half-extent side / 2 per axis.
struct OmegaGrid {
    double side = 0.5;
    std::size_t resolution = 21;
    std::array<std::size_t, 2> dims{0, 1};

    void validate(std::size_t n_features) const;
    /// resolution^2 offsets; offset k along an axis is (k - (r - 1) / 2) * side / (r - 1).
    std::vector<Eigen::Vector2d> offsets() const;
    /// query + omega for every offset, other features held at the query.
    FeatureMatrix points(const Instance& query) const;
};

/// |p_theta(x) - p_theta_k(x)|.
double delta_point(const gbt::GbtModel& entity, const gbt::GbtModel& individual_mu,
                   const Eigen::Ref<const Eigen::VectorXd>& x);

// How the subtracted term pairs with the grid: Delta_k(X; omega) at the same
// offset, or Delta_k at the query itself for every offset.
enum class SecondTerm { pointwise, at_query };

const char* second_term_name(SecondTerm term);
SecondTerm parse_second_term(const std::string& name);

/// Grid mean of Delta_after(X + omega) - Delta_before(X + omega) (or
/// Delta_before(X) under SecondTerm::at_query). Negative means `after` moved
/// closer to the entity around the query.
double delta_change(const gbt::GbtModel& entity, const gbt::GbtModel& before, const gbt::GbtModel& after,
                    const Instance& query, const OmegaGrid& grid, SecondTerm second = SecondTerm::pointwise);

/// The individual's regression refit on its knowledge plus (x_prime, y_prime),
/// with the hyperparameters and seed of the original fit.
gbt::GbtModel retrain_with(const counterfactual::IndividualModel& im,
                           const counterfactual::IndividualKnowledge& knowledge, const Instance& x_prime,
                           double y_prime, const std::string& fingerprint);

/// Delta(X) per grid for a counterfactual labelled with its entity class.
/// Throws InvalidArgument for an invalid counterfactual.
std::vector<double> delta_improvement(const Instance& query, const counterfactual::Counterfactual& cf,
                                      const counterfactual::IndividualKnowledge& knowledge,
                                      const counterfactual::IndividualModel& im, const gbt::GbtModel& entity,
                                      std::span<const OmegaGrid> grids, SecondTerm second = SecondTerm::pointwise);

// One dataset realisation with its entity classifier.
struct Scenario {
    tabular::DatasetSplits splits;
    gbt::GbtModel entity;
};

using ScenarioFactory = std::function<Scenario(std::uint64_t seed)>;

// A lambda setting; nullopt is the unconstrained baseline.
struct LambdaSetting {
    std::optional<double> lambda;

    std::string label() const;
    static LambdaSetting from_json(const nlohmann::json& value);
    nlohmann::json to_json() const;
};

struct DeltaConfig {
    std::vector<LambdaSetting> lambdas{{0.0}, {1.0}, {10.0}, {100.0}, {1e5}, {std::nullopt}};
    double alpha = 0.1;
    std::vector<double> sides{0.1, 0.5, 1.0};
    std::size_t resolution = 21;
    std::array<std::size_t, 2> dims{0, 1};
    std::size_t n_queries = 100;
    std::size_t n_realizations = 7;
    std::size_t k_size = 100;
    SecondTerm second_term = SecondTerm::pointwise;
    gbt::Hyperparams individual_hp;
    search::GaConfig ga;
    double epsilon_width_floor = counterfactual::kWidthFloor;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

struct DeltaRow {
    std::size_t realization = 0;
    std::size_t query_index = 0;
    std::size_t train_row = 0;
    std::string lambda;
    bool valid = false;
    double l_info = 0.0;
    double l_dist = 0.0;
    std::vector<double> delta; // one per side; empty when invalid
};

struct DeltaCell {
    std::string lambda;
    double side = 0.0;
    std::size_t n_valid = 0;
    std::size_t n_invalid = 0;
    std::size_t n_negative = 0;
    double fraction_negative = 0.0; // over valid counterfactuals only
    double mean_delta = 0.0;
};

struct DeltaReport {
    double alpha = 0.0;
    std::vector<double> sides;
    std::vector<DeltaRow> rows;
    std::vector<DeltaCell> cells; // lambda-major, then side

    const DeltaCell& cell(const std::string& lambda, double side) const;
    /// Largest invalid fraction over lambda settings.
    double max_attrition() const;
};

/// Per realisation: fresh scenario, knowledge and individual model; queries
/// drawn from the training split with replacement, half from each class; one
/// counterfactual per query and lambda, with GA seeds shared across lambdas.
DeltaReport delta_experiment(const DeltaConfig& cfg, const ScenarioFactory& make_scenario);

void write_delta_csv(const DeltaReport& report, const std::filesystem::path& path);
nlohmann::json to_json(const DeltaReport& report);

struct AugmentConfig {
    std::vector<std::size_t> sample_points{50};
    std::vector<std::size_t> aug_per_sample{0, 1, 4};
    double lambda = 1000.0;
    double alpha = 0.1;
    std::size_t replicates = 3;
    gbt::Hyperparams individual_hp;
    gbt::Hyperparams classifier_hp;
    search::GaConfig ga;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

struct Summary {
    double mean = 0.0;
    double sd = 0.0; // NaN with fewer than two values
    double median = 0.0;
};

Summary summarize(std::span<const double> values);

struct AugmentRow {
    std::size_t sample_points = 0;
    std::size_t aug_per_sample = 0;
    double lambda = 0.0;
    Summary average_precision;
    Summary f1;
    Summary roc_auc;
    std::size_t replicates = 0;
    std::size_t invalid_counterfactuals = 0;
    std::vector<Metrics> per_replicate;
};

struct AugmentationReport {
    std::vector<AugmentRow> rows; // sample_points-major, then aug level

    const AugmentRow& row(std::size_t sample_points, std::size_t aug) const;
};

/// Per (sample size, replicate): a training subsample drawn independently of
/// the augmentation level, an individual model built on it, CPICFs labelled
/// with their entity class, and a fresh classifier scored on the test split.
AugmentationReport augmentation_experiment(const AugmentConfig& cfg, const Scenario& scenario);

void write_augment_csv(const AugmentationReport& report, const std::filesystem::path& path);
nlohmann::json to_json(const AugmentationReport& report);

} // namespace cpicf::eval
