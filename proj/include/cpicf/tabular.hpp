#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace cpicf {

// One observation. Continuous features hold their value; categorical features
// hold the index of their category within FeatureSpec::categories.
using Instance = Eigen::VectorXd;

// Row-major so that X.row(i) is contiguous.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Labels = Eigen::VectorXi;

} // namespace cpicf

namespace cpicf::tabular {

struct Continuous {
    double lo = 0.0;
    double hi = 0.0;
};

struct Categorical {
    std::vector<std::string> categories;
};

struct FeatureSpec {
    std::string name;
    std::variant<Continuous, Categorical> kind;

    static FeatureSpec continuous(std::string name, double lo, double hi);
    static FeatureSpec categorical(std::string name, std::vector<std::string> categories);

    bool is_continuous() const noexcept { return std::holds_alternative<Continuous>(kind); }
    double lo() const;
    double hi() const;
    /// R_j = hi - lo for continuous features.
    double range() const;
    /// |S_j| for categorical features.
    std::size_t cardinality() const;
    const std::vector<std::string>& categories() const;
    /// Index of `label` in the category list, or -1.
    int category_index(std::string_view label) const;
};

// Ordered feature list, continuous features first. Indices [0, m) are
// continuous and [m, p) categorical.
class FeatureSchema {
public:
    FeatureSchema() = default;
    explicit FeatureSchema(std::vector<FeatureSpec> features);

    /// Stable-partitions `features` so continuous ones come first.
    static FeatureSchema continuous_first(std::vector<FeatureSpec> features);

    std::size_t size() const noexcept { return features_.size(); }
    std::size_t n_continuous() const noexcept { return m_; }
    std::size_t n_categorical() const noexcept { return features_.size() - m_; }
    const FeatureSpec& operator[](std::size_t j) const { return features_[j]; }
    const std::vector<FeatureSpec>& features() const noexcept { return features_; }
    std::vector<std::string> names() const;
    /// Index of the feature called `name`, or -1.
    int index_of(std::string_view name) const;

    bool valid(const Eigen::Ref<const Instance>& x) const noexcept;
    /// Throws InvalidArgument naming the offending feature.
    void validate(const Eigen::Ref<const Instance>& x) const;

    /// Stable identifier of names, kinds and category lists (ranges excluded,
    /// so that splits of one dataset share a fingerprint).
    std::string fingerprint() const;

    nlohmann::json to_json() const;
    static FeatureSchema from_json(const nlohmann::json& doc);

    bool operator==(const FeatureSchema& other) const;

private:
    std::vector<FeatureSpec> features_;
    std::size_t m_ = 0;
};

FeatureSchema load_schema(const std::filesystem::path& path);
void save_schema(const FeatureSchema& schema, const std::filesystem::path& path);

class LabeledDataset {
public:
    LabeledDataset() = default;
    /// Validates every row against `schema` and every label against {0,1}.
    LabeledDataset(FeatureSchema schema, FeatureMatrix x, Labels y);

    const FeatureSchema& schema() const noexcept { return schema_; }
    const FeatureMatrix& features() const noexcept { return x_; }
    const Labels& labels() const noexcept { return y_; }
    std::size_t rows() const noexcept { return static_cast<std::size_t>(x_.rows()); }
    Instance row(std::size_t i) const { return x_.row(static_cast<Eigen::Index>(i)).transpose(); }
    int label(std::size_t i) const { return y_(static_cast<Eigen::Index>(i)); }
    std::size_t count(int label) const;

    LabeledDataset subset(std::span<const std::size_t> indices) const;
    /// Same rows under a replacement schema (e.g. ranges recomputed).
    LabeledDataset with_schema(FeatureSchema schema) const;
    /// Rows appended; schemas must share a fingerprint.
    LabeledDataset concat(const LabeledDataset& other) const;

private:
    FeatureSchema schema_;
    FeatureMatrix x_;
    Labels y_;
};

/// Schema ranges of continuous features set to the observed min/max of `x`.
FeatureSchema observed_ranges(const FeatureSchema& schema, const FeatureMatrix& x);

struct HypercubeParams {
    std::size_t n = 30000;
    std::size_t n_features = 2;
    double class_sep = 1.0;
    double minority_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Gaussian clusters on the vertices of a hypercube with side 2*class_sep.
/// Vertices are taken in Gray-code order and assigned to classes alternately,
/// which for two features gives the XOR layout. Label 1 is the minority class.
LabeledDataset generate_hypercube(const HypercubeParams& params);

struct SplitFractions {
    double train = 0.6;
    double calibration = 0.2;
    double test = 0.2;
};

struct DatasetSplits {
    LabeledDataset train;
    LabeledDataset calibration;
    LabeledDataset test;
    // Source row indices, ascending within each split.
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> calibration_rows;
    std::vector<std::size_t> test_rows;
};

/// Calibration and test sizes are floor(f * n); the remainder goes to train.
DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& fractions,
                    std::uint64_t seed);

/// Keeps every minority row and an equal-size random sample of the majority.
LabeledDataset undersample_majority(const LabeledDataset& dataset, std::uint64_t seed);

enum class Encoding { one_hot, target };

struct EncodingPolicy {
    // One entry per categorical feature, in schema order.
    std::vector<Encoding> per_feature;
    double smoothing = 10.0;

    static EncodingPolicy all(const FeatureSchema& schema, Encoding encoding,
                              double smoothing = 10.0);
    /// Target encoding for features with more than `threshold` categories,
    /// one-hot for the rest.
    static EncodingPolicy by_cardinality(const FeatureSchema& schema, std::size_t threshold,
                                         double smoothing = 10.0);
};

struct TransformReport {
    struct Unseen {
        std::size_t row;
        std::string feature;
        std::string category;
    };
    std::vector<Unseen> unseen;
};

// Maps a mixed schema to an all-continuous one. Fitted on a training split;
// target statistics never see the rows being transformed unless they are the
// training rows themselves.
class Encoder {
public:
    static Encoder fit(const LabeledDataset& train, const EncodingPolicy& policy);

    LabeledDataset transform(const LabeledDataset& data, TransformReport* report = nullptr) const;
    const FeatureSchema& output_schema() const noexcept { return output_; }
    std::size_t output_width() const noexcept { return output_.size(); }

private:
    struct Column {
        std::size_t source = 0;
        Encoding encoding = Encoding::one_hot;
        std::vector<std::string> vocabulary;
        std::vector<double> target_values; // per vocabulary entry
    };

    FeatureSchema input_;
    FeatureSchema output_;
    std::vector<Column> categorical_;
    double global_mean_ = 0.0;
};

LabeledDataset encode(const LabeledDataset& dataset, const EncodingPolicy& policy,
                      TransformReport* report = nullptr);

/// Reads a header-led CSV. Columns are matched to schema features by name;
/// the label column must hold 0 or 1. Errors name the 1-based data row.
LabeledDataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                        std::string_view label_column);

/// Writes continuous values with 17 significant digits so that load_csv
/// reproduces them bit for bit.
void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path,
               std::string_view label_column = "label");

/// Splits one CSV record honouring double quotes.
std::vector<std::string> parse_csv_record(std::string_view line);

std::string format_double(double value);

} // namespace cpicf::tabular
