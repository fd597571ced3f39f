#include "cpicf/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "cpicf/errors.hpp"
#include "cpicf/rng.hpp"

namespace cpicf::tabular {

namespace {

std::vector<std::size_t> indices_of_label(const Labels& y, int label) {
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y(i) == label) out.push_back(static_cast<std::size_t>(i));
    return out;
}

std::size_t floor_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

bool parse_double(std::string_view text, double& out) {
    const std::string s = trim(text);
    if (s.empty()) return false;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

} // namespace

FeatureSpec FeatureSpec::continuous(std::string name, double lo, double hi) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw InvalidArgument("feature '" + name + "': continuous range requires finite lo <= hi");
    return FeatureSpec{std::move(name), Continuous{lo, hi}};
}

FeatureSpec FeatureSpec::categorical(std::string name, std::vector<std::string> categories) {
    if (categories.empty())
        throw InvalidArgument("feature '" + name + "': categorical needs at least one category");
    std::set<std::string> unique(categories.begin(), categories.end());
    if (unique.size() != categories.size())
        throw InvalidArgument("feature '" + name + "': duplicate category labels");
    return FeatureSpec{std::move(name), Categorical{std::move(categories)}};
}

double FeatureSpec::lo() const { return std::get<Continuous>(kind).lo; }
double FeatureSpec::hi() const { return std::get<Continuous>(kind).hi; }
double FeatureSpec::range() const { return hi() - lo(); }
std::size_t FeatureSpec::cardinality() const { return categories().size(); }

const std::vector<std::string>& FeatureSpec::categories() const {
    return std::get<Categorical>(kind).categories;
}

int FeatureSpec::category_index(std::string_view label) const {
    const auto& cats = categories();
    const auto it = std::find(cats.begin(), cats.end(), label);
    return it == cats.end() ? -1 : static_cast<int>(it - cats.begin());
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
    if (features_.empty()) throw InvalidArgument("schema needs at least one feature");
    std::set<std::string> names;
    bool seen_categorical = false;
    for (const auto& f : features_) {
        if (!names.insert(f.name).second)
            throw InvalidArgument("duplicate feature name '" + f.name + "'");
        if (f.is_continuous()) {
            if (seen_categorical)
                throw InvalidArgument("continuous feature '" + f.name +
                                      "' follows a categorical one; schema must be continuous-first");
            ++m_;
        } else {
            seen_categorical = true;
        }
    }
}

FeatureSchema FeatureSchema::continuous_first(std::vector<FeatureSpec> features) {
    std::stable_partition(features.begin(), features.end(),
                          [](const FeatureSpec& f) { return f.is_continuous(); });
    return FeatureSchema(std::move(features));
}

std::vector<std::string> FeatureSchema::names() const {
    std::vector<std::string> out;
    out.reserve(features_.size());
    for (const auto& f : features_) out.push_back(f.name);
    return out;
}

int FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t j = 0; j < features_.size(); ++j)
        if (features_[j].name == name) return static_cast<int>(j);
    return -1;
}

bool FeatureSchema::valid(const Eigen::Ref<const Instance>& x) const noexcept {
    if (static_cast<std::size_t>(x.size()) != features_.size()) return false;
    for (std::size_t j = 0; j < features_.size(); ++j) {
        const double v = x(static_cast<Eigen::Index>(j));
        if (!std::isfinite(v)) return false;
        if (!features_[j].is_continuous()) {
            if (v != std::floor(v) || v < 0 ||
                v >= static_cast<double>(features_[j].cardinality()))
                return false;
        }
    }
    return true;
}

void FeatureSchema::validate(const Eigen::Ref<const Instance>& x) const {
    if (static_cast<std::size_t>(x.size()) != features_.size())
        throw InvalidArgument("instance has " + std::to_string(x.size()) + " values, schema has " +
                              std::to_string(features_.size()) + " features");
    for (std::size_t j = 0; j < features_.size(); ++j) {
        const double v = x(static_cast<Eigen::Index>(j));
        if (!std::isfinite(v))
            throw InvalidArgument("feature '" + features_[j].name + "' is not finite");
        if (!features_[j].is_continuous() &&
            (v != std::floor(v) || v < 0 || v >= static_cast<double>(features_[j].cardinality())))
            throw InvalidArgument("feature '" + features_[j].name + "' holds an invalid category");
    }
}

std::string FeatureSchema::fingerprint() const {
    std::uint64_t h = fnv1a64("schema");
    for (const auto& f : features_) {
        h = fnv1a64(f.name, h);
        h = fnv1a64(f.is_continuous() ? "|c|" : "|k|", h);
        if (!f.is_continuous())
            for (const auto& c : f.categories()) h = fnv1a64(c + "\x1f", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json FeatureSchema::to_json() const {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& f : features_) {
        if (f.is_continuous())
            doc.push_back({{"name", f.name}, {"kind", "continuous"}, {"lo", f.lo()}, {"hi", f.hi()}});
        else
            doc.push_back({{"name", f.name}, {"kind", "categorical"}, {"categories", f.categories()}});
    }
    return doc;
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) throw DataError("schema document must be a JSON array");
    std::vector<FeatureSpec> features;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        const std::string where = "schema entry " + std::to_string(i);
        if (!entry.is_object() || !entry.contains("name") || !entry.contains("kind"))
            throw DataError(where + ": needs 'name' and 'kind'");
        for (const auto& [key, _] : entry.items())
            if (key != "name" && key != "kind" && key != "lo" && key != "hi" && key != "categories")
                throw DataError(where + ": unknown key '" + key + "'");
        const auto name = entry.at("name").get<std::string>();
        const auto kind = entry.at("kind").get<std::string>();
        try {
            if (kind == "continuous") {
                if (!entry.contains("lo") || !entry.contains("hi"))
                    throw DataError(where + ": continuous feature needs 'lo' and 'hi'");
                features.push_back(FeatureSpec::continuous(name, entry.at("lo").get<double>(),
                                                           entry.at("hi").get<double>()));
            } else if (kind == "categorical") {
                if (!entry.contains("categories"))
                    throw DataError(where + ": categorical feature needs 'categories'");
                std::vector<std::string> cats;
                for (const auto& c : entry.at("categories"))
                    cats.push_back(c.is_string() ? c.get<std::string>() : c.dump());
                features.push_back(FeatureSpec::categorical(name, std::move(cats)));
            } else {
                throw DataError(where + ": kind must be 'continuous' or 'categorical'");
            }
        } catch (const InvalidArgument& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    try {
        return FeatureSchema::continuous_first(std::move(features));
    } catch (const InvalidArgument& e) {
        throw DataError(e.what());
    }
}

bool FeatureSchema::operator==(const FeatureSchema& other) const {
    return to_json() == other.to_json();
}

FeatureSchema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("schema file " + path.string() + ": " + e.what());
    }
    return FeatureSchema::from_json(doc);
}

void save_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schema file " + path.string());
    out << schema.to_json().dump(2) << '\n';
}

LabeledDataset::LabeledDataset(FeatureSchema schema, FeatureMatrix x, Labels y)
    : schema_(std::move(schema)), x_(std::move(x)), y_(std::move(y)) {
    if (x_.rows() != y_.size())
        throw InvalidArgument("dataset has " + std::to_string(x_.rows()) + " rows but " +
                              std::to_string(y_.size()) + " labels");
    if (x_.rows() > 0 && static_cast<std::size_t>(x_.cols()) != schema_.size())
        throw InvalidArgument("dataset width does not match schema");
    if (x_.rows() == 0) x_.resize(0, static_cast<Eigen::Index>(schema_.size()));
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
        if (!schema_.valid(x_.row(i).transpose()))
            throw InvalidArgument("row " + std::to_string(i) + " is not valid under the schema");
        if (y_(i) != 0 && y_(i) != 1)
            throw InvalidArgument("row " + std::to_string(i) + " has a label outside {0,1}");
    }
}

std::size_t LabeledDataset::count(int label) const {
    return static_cast<std::size_t>((y_.array() == label).count());
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    FeatureMatrix x(static_cast<Eigen::Index>(indices.size()), x_.cols());
    Labels y(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= rows()) throw InvalidArgument("subset index out of range");
        x.row(static_cast<Eigen::Index>(k)) = x_.row(static_cast<Eigen::Index>(indices[k]));
        y(static_cast<Eigen::Index>(k)) = y_(static_cast<Eigen::Index>(indices[k]));
    }
    LabeledDataset out;
    out.schema_ = schema_;
    out.x_ = std::move(x);
    out.y_ = std::move(y);
    return out;
}

LabeledDataset LabeledDataset::with_schema(FeatureSchema schema) const {
    if (schema.fingerprint() != schema_.fingerprint())
        throw InvalidArgument("replacement schema has a different fingerprint");
    LabeledDataset out = *this;
    out.schema_ = std::move(schema);
    return out;
}

LabeledDataset LabeledDataset::concat(const LabeledDataset& other) const {
    if (other.schema_.fingerprint() != schema_.fingerprint())
        throw InvalidArgument("cannot concatenate datasets with different schemas");
    FeatureMatrix x(x_.rows() + other.x_.rows(), x_.cols());
    x << x_, other.x_;
    Labels y(y_.size() + other.y_.size());
    y << y_, other.y_;
    LabeledDataset out;
    out.schema_ = schema_;
    out.x_ = std::move(x);
    out.y_ = std::move(y);
    return out;
}

FeatureSchema observed_ranges(const FeatureSchema& schema, const FeatureMatrix& x) {
    std::vector<FeatureSpec> features = schema.features();
    if (x.rows() == 0) return schema;
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (!features[j].is_continuous()) continue;
        const auto col = x.col(static_cast<Eigen::Index>(j));
        features[j].kind = Continuous{col.minCoeff(), col.maxCoeff()};
    }
    return FeatureSchema(std::move(features));
}

LabeledDataset generate_hypercube(const HypercubeParams& params) {
    if (params.n < 2) throw InvalidArgument("generate_hypercube: n must be >= 2");
    if (params.n_features < 2) throw InvalidArgument("generate_hypercube: n_features must be >= 2");
    if (params.n_features > 62)
        throw InvalidArgument("generate_hypercube: n_features above 62 exceeds the vertex index width");
    if (!(params.class_sep > 0)) throw InvalidArgument("generate_hypercube: class_sep must be > 0");
    if (!(params.minority_fraction > 0 && params.minority_fraction < 1))
        throw InvalidArgument("generate_hypercube: minority_fraction must lie in (0,1)");

    const auto d = static_cast<Eigen::Index>(params.n_features);
    const std::uint64_t vertices_per_class = std::uint64_t{1} << (params.n_features - 1);
    Rng rng(params.seed);
    FeatureMatrix x(static_cast<Eigen::Index>(params.n), d);
    Labels y(static_cast<Eigen::Index>(params.n));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int label = rng.bernoulli(params.minority_fraction) ? 1 : 0;
        // Gray-code position 2r + label; neighbouring positions differ in one
        // coordinate, so classes interleave across the cube.
        const std::uint64_t position = 2 * rng.below(vertices_per_class) + static_cast<std::uint64_t>(label);
        const std::uint64_t vertex = position ^ (position >> 1);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double centre = ((vertex >> j) & 1U) ? params.class_sep : -params.class_sep;
            x(i, j) = centre + rng.normal();
        }
        y(i) = label;
    }
    std::vector<FeatureSpec> features;
    for (Eigen::Index j = 0; j < d; ++j)
        features.push_back(FeatureSpec::continuous("x" + std::to_string(j + 1), 0.0, 0.0));
    auto schema = observed_ranges(FeatureSchema(std::move(features)), x);
    return LabeledDataset(std::move(schema), std::move(x), std::move(y));
}

DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& fractions,
                    std::uint64_t seed) {
    if (!(fractions.train > 0 && fractions.calibration > 0 && fractions.test > 0))
        throw InvalidArgument("split fractions must be positive");
    if (std::abs(fractions.train + fractions.calibration + fractions.test - 1.0) > 1e-9)
        throw InvalidArgument("split fractions must sum to 1");
    const std::size_t n = dataset.rows();
    const std::size_t n_cal = floor_count(fractions.calibration, n);
    const std::size_t n_test = floor_count(fractions.test, n);
    const std::size_t n_train = n - n_cal - n_test;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    DatasetSplits out;
    out.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.calibration_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                                order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
    out.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), order.end());
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.calibration_rows.begin(), out.calibration_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    out.train = dataset.subset(out.train_rows);
    out.calibration = dataset.subset(out.calibration_rows);
    out.test = dataset.subset(out.test_rows);
    return out;
}

LabeledDataset undersample_majority(const LabeledDataset& dataset, std::uint64_t seed) {
    auto zeros = indices_of_label(dataset.labels(), 0);
    auto ones = indices_of_label(dataset.labels(), 1);
    if (zeros.empty() || ones.empty())
        throw InvalidArgument("undersample_majority: both classes must be present");
    auto& majority = zeros.size() >= ones.size() ? zeros : ones;
    const auto& minority = zeros.size() >= ones.size() ? ones : zeros;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(majority));
    majority.resize(minority.size());
    std::vector<std::size_t> keep(minority.begin(), minority.end());
    keep.insert(keep.end(), majority.begin(), majority.end());
    std::sort(keep.begin(), keep.end());
    return dataset.subset(keep);
}

EncodingPolicy EncodingPolicy::all(const FeatureSchema& schema, Encoding encoding, double smoothing) {
    return EncodingPolicy{std::vector<Encoding>(schema.n_categorical(), encoding), smoothing};
}

EncodingPolicy EncodingPolicy::by_cardinality(const FeatureSchema& schema, std::size_t threshold,
                                              double smoothing) {
    EncodingPolicy policy;
    policy.smoothing = smoothing;
    for (std::size_t j = schema.n_continuous(); j < schema.size(); ++j)
        policy.per_feature.push_back(schema[j].cardinality() > threshold ? Encoding::target
                                                                          : Encoding::one_hot);
    return policy;
}

Encoder Encoder::fit(const LabeledDataset& train, const EncodingPolicy& policy) {
    const auto& schema = train.schema();
    if (policy.per_feature.size() != schema.n_categorical())
        throw InvalidArgument("encoding policy needs one entry per categorical feature");
    if (policy.smoothing < 0) throw InvalidArgument("target-encoding smoothing must be >= 0");
    const bool needs_labels = std::any_of(policy.per_feature.begin(), policy.per_feature.end(),
                                          [](Encoding e) { return e == Encoding::target; });
    if (needs_labels && train.rows() == 0)
        throw InvalidArgument("target encoding requires labelled training rows");

    Encoder enc;
    enc.input_ = schema;
    enc.global_mean_ = train.rows() ? train.labels().cast<double>().mean() : 0.0;

    std::vector<FeatureSpec> out;
    for (std::size_t j = 0; j < schema.n_continuous(); ++j) out.push_back(schema[j]);
    for (std::size_t j = schema.n_continuous(); j < schema.size(); ++j) {
        Column col;
        col.source = j;
        col.encoding = policy.per_feature[j - schema.n_continuous()];
        col.vocabulary = schema[j].categories();
        if (col.encoding == Encoding::one_hot) {
            for (const auto& c : col.vocabulary)
                out.push_back(FeatureSpec::continuous(schema[j].name + "=" + c, 0.0, 1.0));
        } else {
            std::vector<double> sums(col.vocabulary.size(), 0.0);
            std::vector<double> counts(col.vocabulary.size(), 0.0);
            for (std::size_t i = 0; i < train.rows(); ++i) {
                const auto c = static_cast<std::size_t>(train.features()(static_cast<Eigen::Index>(i),
                                                                         static_cast<Eigen::Index>(j)));
                sums[c] += train.label(i);
                counts[c] += 1.0;
            }
            const double s = policy.smoothing;
            for (std::size_t c = 0; c < sums.size(); ++c) {
                const double denom = counts[c] + s;
                col.target_values.push_back(denom > 0 ? (sums[c] + s * enc.global_mean_) / denom
                                                      : enc.global_mean_);
            }
            const auto [lo, hi] = std::minmax_element(col.target_values.begin(), col.target_values.end());
            out.push_back(FeatureSpec::continuous(schema[j].name, std::min(*lo, enc.global_mean_),
                                                  std::max(*hi, enc.global_mean_)));
        }
        enc.categorical_.push_back(std::move(col));
    }
    enc.output_ = FeatureSchema(std::move(out));
    return enc;
}

LabeledDataset Encoder::transform(const LabeledDataset& data, TransformReport* report) const {
    const auto& schema = data.schema();
    if (schema.n_continuous() != input_.n_continuous() || schema.size() != input_.size())
        throw InvalidArgument("encoder applied to a dataset with a different feature layout");
    const auto n = static_cast<Eigen::Index>(data.rows());
    FeatureMatrix x = FeatureMatrix::Zero(n, static_cast<Eigen::Index>(output_.size()));
    const auto m = static_cast<Eigen::Index>(input_.n_continuous());
    x.leftCols(m) = data.features().leftCols(m);

    // Categories are matched by label, so a dataset whose schema carries extra
    // categories maps them to the unseen rule.
    std::vector<std::vector<int>> remap;
    for (const auto& col : categorical_) {
        const auto& cats = schema[col.source].categories();
        std::vector<int> r(cats.size(), -1);
        for (std::size_t c = 0; c < cats.size(); ++c) {
            const auto it = std::find(col.vocabulary.begin(), col.vocabulary.end(), cats[c]);
            if (it != col.vocabulary.end()) r[c] = static_cast<int>(it - col.vocabulary.begin());
        }
        remap.push_back(std::move(r));
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index out_col = m;
        for (std::size_t k = 0; k < categorical_.size(); ++k) {
            const auto& col = categorical_[k];
            const auto raw = static_cast<std::size_t>(data.features()(i, static_cast<Eigen::Index>(col.source)));
            const int mapped = remap[k][raw];
            if (mapped < 0 && report)
                report->unseen.push_back({static_cast<std::size_t>(i), schema[col.source].name,
                                          schema[col.source].categories()[raw]});
            if (col.encoding == Encoding::one_hot) {
                if (mapped >= 0) x(i, out_col + mapped) = 1.0;
                out_col += static_cast<Eigen::Index>(col.vocabulary.size());
            } else {
                x(i, out_col) = mapped >= 0 ? col.target_values[static_cast<std::size_t>(mapped)] : global_mean_;
                out_col += 1;
            }
        }
    }
    return LabeledDataset(output_, std::move(x), data.labels());
}

LabeledDataset encode(const LabeledDataset& dataset, const EncodingPolicy& policy,
                      TransformReport* report) {
    return Encoder::fit(dataset, policy).transform(dataset, report);
}

std::vector<std::string> parse_csv_record(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (quoted) throw DataError("unterminated quoted field");
    fields.push_back(std::move(field));
    return fields;
}

std::string format_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

LabeledDataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                        std::string_view label_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = parse_csv_record(line);
    for (auto& h : header) h = trim(h);

    auto find_column = [&](std::string_view name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw DataError(path.string() + ": missing column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::size_t> columns;
    for (const auto& f : schema.features()) columns.push_back(find_column(f.name));
    const std::size_t label_col = find_column(label_column);

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const std::string where = path.string() + ": row " + std::to_string(row);
        std::vector<std::string> fields;
        try {
            fields = parse_csv_record(line);
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        if (fields.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        for (std::size_t j = 0; j < schema.size(); ++j) {
            const auto& spec = schema[j];
            const auto& raw = fields[columns[j]];
            if (spec.is_continuous()) {
                double v = 0;
                if (!parse_double(raw, v))
                    throw DataError(where + ", column '" + spec.name + "': cannot parse '" + raw +
                                    "' as a number");
                values.push_back(v);
            } else {
                const int c = spec.category_index(raw);
                if (c < 0)
                    throw DataError(where + ", column '" + spec.name + "': category '" + raw +
                                    "' is not in the schema");
                values.push_back(c);
            }
        }
        const std::string label = trim(fields[label_col]);
        if (label != "0" && label != "1")
            throw DataError(where + ", column '" + std::string(label_column) + "': label '" + label +
                            "' is not 0 or 1");
        labels.push_back(label == "1" ? 1 : 0);
    }

    const auto n = static_cast<Eigen::Index>(labels.size());
    const auto p = static_cast<Eigen::Index>(schema.size());
    FeatureMatrix x = n ? FeatureMatrix(Eigen::Map<FeatureMatrix>(values.data(), n, p))
                        : FeatureMatrix(0, p);
    Labels y = Eigen::Map<Labels>(labels.data(), n);
    return LabeledDataset(schema, std::move(x), std::move(y));
}

namespace {

std::string quote_if_needed(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace

void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path,
               std::string_view label_column) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write CSV file " + path.string());
    const auto& schema = dataset.schema();
    for (const auto& f : schema.features()) out << quote_if_needed(f.name) << ',';
    out << quote_if_needed(std::string(label_column)) << '\n';
    for (std::size_t i = 0; i < dataset.rows(); ++i) {
        for (std::size_t j = 0; j < schema.size(); ++j) {
            const double v = dataset.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (schema[j].is_continuous())
                out << format_double(v);
            else
                out << quote_if_needed(schema[j].categories()[static_cast<std::size_t>(v)]);
            out << ',';
        }
        out << dataset.label(i) << '\n';
    }
}

} // namespace cpicf::tabular
