#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cpicf/conformal.hpp"
#include "cpicf/gbt.hpp"
#include "cpicf/gower.hpp"
#include "cpicf/search.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::counterfactual {

inline constexpr std::size_t kMinKnowledgeRows = 10;

// The rows an individual holds, with the entity's probabilities as targets.
struct IndividualKnowledge {
    std::string id = "k0";
    std::vector<std::size_t> rows; // indices into the training split
    FeatureMatrix x;
    Eigen::VectorXd targets; // p_theta(x_i), in [0, 1]

    std::size_t size() const noexcept { return rows.size(); }
};

/// Uniform sample of `k_size` training rows without replacement.
IndividualKnowledge sample_knowledge(const tabular::LabeledDataset& train, std::size_t k_size,
                                     const gbt::GbtModel& entity, std::uint64_t seed, std::string id = "k0");

/// Knowledge made of the given training rows.
IndividualKnowledge knowledge_from_rows(const tabular::LabeledDataset& train, std::vector<std::size_t> rows,
                                        const gbt::GbtModel& entity, std::string id = "k0");

// The individual's regression of the entity's probabilities together with its
// locally weighted conformal intervals. interval.mu is the individual's model.
struct IndividualModel {
    conformal::IntervalModel interval;
    gbt::Hyperparams hp;
    std::uint64_t seed = 0;
    double alpha = 0.1;
    std::string k_id;

    const gbt::GbtModel& p_theta_k() const noexcept { return interval.mu; }
    double width(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return conformal::lwcp_interval(interval, x).width;
    }
};

/// The individual's squared-loss regression of entity probabilities.
gbt::GbtModel fit_p_theta_k(const FeatureMatrix& x, const Eigen::VectorXd& targets, const gbt::Hyperparams& hp,
                            std::uint64_t seed, std::string fingerprint);

/// Fits p_theta_k on the knowledge, the dispersion model on its absolute
/// in-sample residuals, and calibrates on `calib` against entity probabilities.
IndividualModel build_individual_model(const IndividualKnowledge& knowledge, const tabular::LabeledDataset& calib,
                                       const gbt::GbtModel& entity, double alpha, const gbt::Hyperparams& hp,
                                       std::uint64_t seed);

inline constexpr double kWidthFloor = 1e-6;

/// 1 / max(width(x), eps).
double l_info(const IndividualModel& im, const Eigen::Ref<const Eigen::VectorXd>& x, double eps = kWidthFloor);

enum class ObjectiveMode {
    cpicf,        // l_info + lambda * gower
    unconstrained // any point the entity classifies differently
};

struct CpicfConfig {
    double lambda = 1000.0;
    double alpha = 0.1;
    double epsilon_width_floor = kWidthFloor;
    ObjectiveMode mode = ObjectiveMode::cpicf;
    search::GaConfig ga;

    void validate() const;
};

struct Provenance {
    std::uint64_t seed = 0;
    double lambda = 0.0;
    double alpha = 0.0;
    std::string k_id;
    ObjectiveMode mode = ObjectiveMode::cpicf;
    std::size_t query_index = 0;
    std::size_t repeat = 0;
};

struct Counterfactual {
    Instance query;
    Instance result;
    double l_info = 0.0;
    double l_dist = 0.0;
    double objective = 0.0;
    bool valid = false;
    int query_label = 0; // entity class of the query
    int label_prime = 0; // entity class of the result
    std::size_t evaluations = 0;
    Provenance provenance;
};

// Everything generation reads; all references must outlive the call.
struct GenerationContext {
    const gbt::GbtModel& entity;
    const IndividualModel& individual;
    const gower::GowerContext& gower;
    const search::SearchSpace& space;
};

/// Minimises l_info(x') + lambda * gower(query, x') subject to the entity
/// classifying x' differently from the query. The GA anchor is the query with
/// at least one gene mutated. In unconstrained mode, points are drawn
/// uniformly from the space until one flips the class or the budget runs out.
Counterfactual generate(const Instance& query, const GenerationContext& ctx, const CpicfConfig& cfg);

/// `per_query` independent runs per query with seeds derived from
/// (base_seed, query index, repeat). Results are ordered by query, then repeat.
std::vector<Counterfactual> generate_batch(std::span<const Instance> queries, std::size_t per_query,
                                           const GenerationContext& ctx, const CpicfConfig& cfg,
                                           std::uint64_t base_seed, std::size_t threads = 1);

const char* mode_name(ObjectiveMode mode);

nlohmann::json to_json(const Counterfactual& cf, const tabular::FeatureSchema& schema);

/// One JSON object per line.
void write_jsonl(std::span<const Counterfactual> cfs, const tabular::FeatureSchema& schema,
                 const std::filesystem::path& path);

} // namespace cpicf::counterfactual
