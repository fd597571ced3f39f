#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpicf/counterfactual.hpp"
#include "cpicf/eval.hpp"
#include "cpicf/gbt.hpp"
#include "cpicf/search.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::experiment {

struct DatasetConfig {
    std::string source = "hypercube"; // or "csv"
    tabular::HypercubeParams hypercube;
    tabular::SplitFractions split;
    std::filesystem::path csv;
    std::filesystem::path schema;
    std::string label_column = "label";
    bool undersample = false;
    // Categoricals with more categories than this are target encoded.
    std::size_t encoding_threshold = 10;
    double encoding_smoothing = 10.0;
};

struct ModelConfig {
    gbt::Hyperparams hp;
    bool cv = false;
    std::vector<gbt::Hyperparams> cv_grid; // empty means the full tuning grid
    int cv_folds = 3;
    std::optional<std::filesystem::path> path; // load instead of training
};

struct IndividualConfig {
    std::size_t k_size = 100;
    gbt::Hyperparams hp;
};

struct ConformalConfig {
    double alpha = 0.1;
    std::vector<std::string> methods{"lwcp", "cqr", "class_set"};
    std::size_t resolution = 61;
    std::vector<std::string> ablations{"full", "sparse", "box", "half_plane"};
    std::size_t sparse_size = 100;
    double half_plane_threshold = 1.0;
};

struct CpicfBlock {
    double lambda = 1000.0;
    double epsilon_width_floor = counterfactual::kWidthFloor;
    counterfactual::ObjectiveMode mode = counterfactual::ObjectiveMode::cpicf;
    search::GaConfig ga;
    std::size_t n_queries = 20;
    std::size_t per_query = 1;
    std::optional<std::size_t> query_row; // a test-split row; otherwise sampled
    double max_attrition = 0.5;
};

struct DeltaBlock {
    std::vector<eval::LambdaSetting> lambdas;
    double alpha = 0.1;
    std::vector<double> sides;
    std::size_t resolution = 21;
    std::array<std::size_t, 2> dims{0, 1};
    std::size_t n_queries = 20;
    std::size_t n_realizations = 3;
    eval::SecondTerm second_term = eval::SecondTerm::pointwise;
    double max_attrition = 0.5;
};

struct AugmentBlock {
    std::vector<std::size_t> sample_points{50};
    std::vector<std::size_t> aug_per_sample{0, 1, 4};
    double lambda = 1000.0;
    double alpha = 0.1;
    std::size_t replicates = 3;
    gbt::Hyperparams classifier_hp;
};

struct ExperimentConfig {
    std::uint64_t seed = 7;
    DatasetConfig dataset;
    ModelConfig model;
    IndividualConfig individual;
    ConformalConfig conformal;
    CpicfBlock cpicf;
    DeltaBlock delta;
    AugmentBlock augment;
    // The merged document the config was parsed from.
    nlohmann::json document;

    /// Strict parse: unknown keys and wrong types throw ConfigError naming the
    /// offending path.
    static ExperimentConfig from_json(const nlohmann::json& doc);

    eval::DeltaConfig delta_config(std::size_t threads) const;
    eval::AugmentConfig augment_config(std::size_t threads) const;
};

/// Built-in profiles: "desk" (small, for CI) and "paper".
nlohmann::json profile(const std::string& name);

/// The profile with the user's document merge-patched on top, parsed.
ExperimentConfig load_config(const std::string& profile_name, const std::optional<std::filesystem::path>& path);

/// Dataset, splits and entity classifier for a data seed.
eval::Scenario build_scenario(const ExperimentConfig& cfg, std::uint64_t data_seed);

/// Data seed of the main (non-replicated) scenario.
std::uint64_t main_data_seed(const ExperimentConfig& cfg);

struct WidthCell {
    double x1 = 0.0;
    double x2 = 0.0;
    double width = 0.0;
    std::string method;
    double p_entity = 0.0;
};

/// LWCP width per knowledge variant ("lwcp:full", ...), CQR width and the
/// classification set size over a regular grid of the first two features.
std::vector<WidthCell> width_map(const ExperimentConfig& cfg, const eval::Scenario& scenario);

/// Training rows kept by a knowledge variant.
std::vector<std::size_t> ablation_rows(const std::string& variant, const tabular::LabeledDataset& train,
                                       const ConformalConfig& cfg, std::uint64_t seed);

struct WidthMapSummary {
    double band_mean = 0.0;     // lwcp:full where |p_entity - 0.5| < 0.1
    double off_band_mean = 0.0; // lwcp:full elsewhere
    double half_plane_full = 0.0;     // lwcp:full where x2 > threshold
    double half_plane_ablated = 0.0;  // lwcp:half_plane there
    std::size_t cqr_crossed = 0;
    std::size_t cqr_cells = 0;
};

WidthMapSummary summarize_width_map(const std::vector<WidthCell>& cells, double half_plane_threshold);

// Artifacts written by one subcommand, with per-stage seeds and timings.
class RunManifest {
public:
    RunManifest(std::string command, const ExperimentConfig& cfg, std::string profile);

    void add_seed(const std::string& stage, std::uint64_t seed) { seeds_[stage] = seed; }
    void add_artifact(const std::filesystem::path& path);
    void add_timing(const std::string& stage, double seconds) { timings_[stage] = seconds; }
    const std::vector<std::filesystem::path>& artifacts() const noexcept { return artifacts_; }
    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;

private:
    std::string command_;
    std::string profile_;
    std::string config_hash_;
    std::map<std::string, std::uint64_t> seeds_;
    std::map<std::string, double> timings_;
    std::vector<std::filesystem::path> artifacts_;
};

struct RunOptions {
    std::filesystem::path out_dir = "out";
    bool overwrite = false;
    std::size_t threads = 1;
    std::string profile = "desk";
    std::optional<std::size_t> query_row; // cpicf subcommand
};

// Subcommands. Each returns a process exit code: 0 on success, 4 when
// attrition exceeds the configured threshold (artifacts are still written).
int cmd_gen_data(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_train(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_width_map(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_cpicf(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_delta(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_augment(const ExperimentConfig& cfg, const RunOptions& opts);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitSoftFailure = 4;

} // namespace cpicf::experiment
