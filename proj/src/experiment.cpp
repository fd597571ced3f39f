#include "cpicf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "cpicf/conformal.hpp"
#include "cpicf/errors.hpp"
#include "cpicf/gower.hpp"
#include "cpicf/metrics.hpp"
#include "cpicf/rng.hpp"

namespace cpicf::experiment {

namespace fs = std::filesystem;
namespace cf = cpicf::counterfactual;
using nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be consumed before
// finish(), otherwise the first unconsumed key is reported with its path.
class Fields {
public:
    Fields(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    std::string where(const std::string& key = {}) const {
        const std::string base = path_.empty() ? "" : path_;
        return key.empty() ? (base.empty() ? "/" : base) : base + "/" + key;
    }

    bool present(const std::string& key) {
        used_.insert(key);
        return doc_.contains(key) && !doc_.at(key).is_null();
    }

    const json& at(const std::string& key) {
        if (!present(key)) throw ConfigError(where(key) + ": missing");
        return doc_.at(key);
    }

    template <typename T>
    T get(const std::string& key) {
        const json& v = at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(where(key) + ": expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
                    throw ConfigError(where(key) + ": expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
            }
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type");
        }
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) {
        if (!present(key)) return std::nullopt;
        return get<T>(key);
    }

    template <typename T>
    std::vector<T> list(const std::string& key) {
        const json& v = at(key);
        if (!v.is_array()) throw ConfigError(where(key) + ": expected an array");
        std::vector<T> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            json wrapper = {{"v", v[i]}};
            Fields item(wrapper, where(key) + "/" + std::to_string(i));
            out.push_back(item.get<T>("v"));
        }
        return out;
    }

    Fields child(const std::string& key) { return Fields(at(key), where(key)); }

    void finish() const {
        for (const auto& item : doc_.items())
            if (!used_.count(item.key())) throw ConfigError("unknown config key " + where(item.key()));
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> used_;
};

gbt::Hyperparams parse_hp(const json& doc, const std::string& path) {
    static const std::set<std::string> known{"n_estimators",     "max_depth", "learning_rate",   "min_child_weight",
                                             "subsample",        "colsample_bytree", "reg_lambda"};
    if (doc.is_object())
        for (const auto& [key, value] : doc.items())
            if (!known.contains(key)) throw ConfigError("unknown config key " + path + "/" + key);
    try {
        return gbt::Hyperparams::from_json(doc);
    } catch (const DataError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const json::exception&) {
        throw ConfigError(path + ": wrong type");
    }
}

search::GaConfig parse_ga(Fields f) {
    search::GaConfig ga;
    ga.population = f.get<std::size_t>("population");
    ga.evaluations = f.get<std::size_t>("evaluations");
    ga.generations = f.optional<std::size_t>("generations");
    ga.mutation_rate = f.optional<double>("mutation_rate").value_or(-1.0);
    ga.crossover_rate = f.get<double>("crossover_rate");
    ga.sigma_fraction = f.get<double>("sigma_fraction");
    f.finish();
    try {
        ga.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(f.where() + ": " + e.what());
    }
    return ga;
}

void check(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

tabular::LabeledDataset load_dataset(const ExperimentConfig& cfg, std::uint64_t data_seed) {
    const auto& d = cfg.dataset;
    if (d.source == "hypercube") {
        auto params = d.hypercube;
        params.seed = derive_seed(data_seed, "hypercube");
        return tabular::generate_hypercube(params);
    }
    const auto schema = tabular::load_schema(d.schema);
    auto data = tabular::load_csv(d.csv, schema, d.label_column);
    if (d.undersample) data = tabular::undersample_majority(data, derive_seed(data_seed, "undersample"));
    return data;
}

// Encodes categoricals (fit on train) and resets continuous ranges to the
// training split's observed box.
tabular::DatasetSplits prepare_splits(const ExperimentConfig& cfg, tabular::DatasetSplits splits) {
    if (splits.train.schema().n_categorical() > 0) {
        const auto policy = tabular::EncodingPolicy::by_cardinality(
            splits.train.schema(), cfg.dataset.encoding_threshold, cfg.dataset.encoding_smoothing);
        const auto enc = tabular::Encoder::fit(splits.train, policy);
        splits.train = enc.transform(splits.train);
        splits.calibration = enc.transform(splits.calibration);
        splits.test = enc.transform(splits.test);
    }
    if (cfg.dataset.source != "hypercube") {
        const auto schema = tabular::observed_ranges(splits.train.schema(), splits.train.features());
        splits.train = splits.train.with_schema(schema);
        splits.calibration = splits.calibration.with_schema(schema);
        splits.test = splits.test.with_schema(schema);
    }
    return splits;
}

gbt::GbtModel train_entity(const ExperimentConfig& cfg, const tabular::LabeledDataset& train, std::uint64_t seed,
                           gbt::CvResult* cv_out = nullptr) {
    if (cfg.model.path) {
        std::ifstream in(*cfg.model.path);
        if (!in) throw DataError("cannot read model " + cfg.model.path->string());
        json doc;
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw DataError("model " + cfg.model.path->string() + ": " + e.what());
        }
        auto model = gbt::GbtModel::from_json(doc);
        model.check_schema(train.schema());
        return model;
    }
    gbt::Hyperparams hp = cfg.model.hp;
    if (cfg.model.cv) {
        const auto grid = cfg.model.cv_grid.empty() ? gbt::appendix_grid() : cfg.model.cv_grid;
        auto cv = gbt::cross_validate(train, grid, cfg.model.cv_folds, derive_seed(seed, "cv"));
        hp = cv.best;
        if (cv_out) *cv_out = std::move(cv);
    }
    return gbt::fit_classifier(train, hp, derive_seed(seed, "entity"));
}

// Output directory with collision checks. Every file goes through path().
class Output {
public:
    Output(const RunOptions& opts, RunManifest& manifest) : opts_(opts), manifest_(manifest) {
        fs::create_directories(opts.out_dir);
    }

    fs::path path(const std::string& name) {
        const fs::path p = opts_.out_dir / name;
        if (fs::exists(p) && !opts_.overwrite)
            throw ConfigError("refusing to overwrite " + p.string() + " (pass --overwrite)");
        pending_.push_back(p);
        return p;
    }

    void reserve(const std::vector<std::string>& names) {
        for (const auto& n : names) {
            const fs::path p = opts_.out_dir / n;
            if (fs::exists(p) && !opts_.overwrite)
                throw ConfigError("refusing to overwrite " + p.string() + " (pass --overwrite)");
        }
    }

    void write_json(const std::string& name, const json& doc) {
        const auto p = path(name);
        std::ofstream out(p, std::ios::binary);
        if (!out) throw DataError("cannot write " + p.string());
        out << doc.dump(2) << '\n';
    }

    // Registers every written file and writes the manifest last.
    void close(const std::string& command) {
        for (const auto& p : pending_) manifest_.add_artifact(p);
        manifest_.write(path(command + ".manifest.json"));
    }

private:
    const RunOptions& opts_;
    RunManifest& manifest_;
    std::vector<fs::path> pending_;
};

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::string tag(double v) { return tabular::format_double(v); }

// Short form for file names.
std::string name_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

json hp_profile(int n, int depth, double lr) {
    return gbt::Hyperparams{n, depth, lr, 1.0, 1.0, 1.0, 1.0}.to_json();
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig cfg;
    cfg.document = doc;
    Fields root(doc, "");
    cfg.seed = root.get<std::uint64_t>("seed");

    {
        Fields f = root.child("dataset");
        auto& d = cfg.dataset;
        d.source = f.get<std::string>("source");
        check(d.source == "hypercube" || d.source == "csv", "/dataset/source: expected \"hypercube\" or \"csv\"");
        Fields h = f.child("hypercube");
        d.hypercube.n = h.get<std::size_t>("n");
        d.hypercube.n_features = h.get<std::size_t>("n_features");
        d.hypercube.class_sep = h.get<double>("class_sep");
        d.hypercube.minority_fraction = h.get<double>("minority_fraction");
        h.finish();
        Fields s = f.child("split");
        d.split = {s.get<double>("train"), s.get<double>("calibration"), s.get<double>("test")};
        s.finish();
        d.csv = f.optional<std::string>("csv").value_or("");
        d.schema = f.optional<std::string>("schema").value_or("");
        d.label_column = f.get<std::string>("label_column");
        d.undersample = f.get<bool>("undersample");
        Fields e = f.child("encoding");
        d.encoding_threshold = e.get<std::size_t>("threshold");
        d.encoding_smoothing = e.get<double>("smoothing");
        e.finish();
        f.finish();
        if (d.source == "csv") check(!d.csv.empty() && !d.schema.empty(), "/dataset: csv source needs csv and schema");
    }
    {
        Fields f = root.child("model");
        cfg.model.hp = parse_hp(f.at("hp"), "/model/hp");
        Fields cv = f.child("cv");
        cfg.model.cv = cv.get<bool>("enabled");
        cfg.model.cv_folds = cv.get<int>("folds");
        check(cfg.model.cv_folds >= 2, "/model/cv/folds: must be >= 2");
        const json& grid = cv.at("grid");
        if (grid.is_string()) {
            check(grid.get<std::string>() == "appendix", "/model/cv/grid: expected \"appendix\" or a list");
        } else {
            check(grid.is_array() && !grid.empty(), "/model/cv/grid: expected \"appendix\" or a non-empty list");
            for (std::size_t i = 0; i < grid.size(); ++i)
                cfg.model.cv_grid.push_back(parse_hp(grid[i], "/model/cv/grid/" + std::to_string(i)));
        }
        cv.finish();
        if (auto p = f.optional<std::string>("path")) cfg.model.path = *p;
        f.finish();
    }
    {
        Fields f = root.child("individual");
        cfg.individual.k_size = f.get<std::size_t>("k_size");
        check(cfg.individual.k_size >= cf::kMinKnowledgeRows, "/individual/k_size: must be >= 10");
        cfg.individual.hp = parse_hp(f.at("hp"), "/individual/hp");
        f.finish();
    }
    {
        Fields f = root.child("conformal");
        auto& c = cfg.conformal;
        c.alpha = f.get<double>("alpha");
        check(c.alpha > 0 && c.alpha < 1, "/conformal/alpha: must lie in (0,1)");
        c.methods = f.list<std::string>("methods");
        for (const auto& m : c.methods)
            check(m == "lwcp" || m == "cqr" || m == "class_set", "/conformal/methods: unknown method '" + m + "'");
        c.resolution = f.get<std::size_t>("resolution");
        check(c.resolution >= 2, "/conformal/resolution: must be >= 2");
        c.ablations = f.list<std::string>("ablations");
        for (const auto& a : c.ablations)
            check(a == "full" || a == "sparse" || a == "box" || a == "half_plane",
                  "/conformal/ablations: unknown variant '" + a + "'");
        c.sparse_size = f.get<std::size_t>("sparse_size");
        c.half_plane_threshold = f.get<double>("half_plane_threshold");
        f.finish();
    }
    {
        Fields f = root.child("cpicf");
        auto& c = cfg.cpicf;
        c.lambda = f.get<double>("lambda");
        check(c.lambda >= 0 && std::isfinite(c.lambda), "/cpicf/lambda: must be finite and >= 0");
        c.epsilon_width_floor = f.get<double>("epsilon_width_floor");
        check(c.epsilon_width_floor > 0, "/cpicf/epsilon_width_floor: must be > 0");
        const auto mode = f.get<std::string>("mode");
        check(mode == "cpicf" || mode == "unconstrained", "/cpicf/mode: expected \"cpicf\" or \"unconstrained\"");
        c.mode = mode == "cpicf" ? cf::ObjectiveMode::cpicf : cf::ObjectiveMode::unconstrained;
        c.ga = parse_ga(f.child("ga"));
        c.n_queries = f.get<std::size_t>("n_queries");
        c.per_query = f.get<std::size_t>("per_query");
        c.query_row = f.optional<std::size_t>("query_row");
        c.max_attrition = f.get<double>("max_attrition");
        f.finish();
    }
    {
        Fields f = root.child("delta");
        auto& d = cfg.delta;
        const json& lambdas = f.at("lambdas");
        check(lambdas.is_array() && !lambdas.empty(), "/delta/lambdas: expected a non-empty array");
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            try {
                d.lambdas.push_back(eval::LambdaSetting::from_json(lambdas[i]));
            } catch (const InvalidArgument& e) {
                throw ConfigError("/delta/lambdas/" + std::to_string(i) + ": " + e.what());
            }
        }
        d.alpha = f.get<double>("alpha");
        check(d.alpha > 0 && d.alpha < 1, "/delta/alpha: must lie in (0,1)");
        d.sides = f.list<double>("sides");
        check(!d.sides.empty(), "/delta/sides: must not be empty");
        d.resolution = f.get<std::size_t>("resolution");
        check(d.resolution >= 2, "/delta/resolution: must be >= 2");
        const auto dims = f.list<std::size_t>("dims");
        check(dims.size() == 2 && dims[0] != dims[1], "/delta/dims: expected two distinct feature indices");
        d.dims = {dims[0], dims[1]};
        d.n_queries = f.get<std::size_t>("n_queries");
        d.n_realizations = f.get<std::size_t>("n_realizations");
        try {
            d.second_term = eval::parse_second_term(f.get<std::string>("second_term"));
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("/delta/second_term: ") + e.what());
        }
        d.max_attrition = f.get<double>("max_attrition");
        f.finish();
    }
    {
        Fields f = root.child("augment");
        auto& a = cfg.augment;
        a.sample_points = f.list<std::size_t>("sample_points");
        a.aug_per_sample = f.list<std::size_t>("aug_per_sample");
        a.lambda = f.get<double>("lambda");
        a.alpha = f.get<double>("alpha");
        a.replicates = f.get<std::size_t>("replicates");
        a.classifier_hp = parse_hp(f.at("classifier_hp"), "/augment/classifier_hp");
        f.finish();
    }
    root.finish();

    try {
        cfg.delta_config(1).validate();
        cfg.augment_config(1).validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

eval::DeltaConfig ExperimentConfig::delta_config(std::size_t threads) const {
    eval::DeltaConfig d;
    d.lambdas = delta.lambdas;
    d.alpha = delta.alpha;
    d.sides = delta.sides;
    d.resolution = delta.resolution;
    d.dims = delta.dims;
    d.n_queries = delta.n_queries;
    d.n_realizations = delta.n_realizations;
    d.k_size = individual.k_size;
    d.second_term = delta.second_term;
    d.individual_hp = individual.hp;
    d.ga = cpicf.ga;
    d.epsilon_width_floor = cpicf.epsilon_width_floor;
    d.seed = seed;
    d.threads = threads;
    return d;
}

eval::AugmentConfig ExperimentConfig::augment_config(std::size_t threads) const {
    eval::AugmentConfig a;
    a.sample_points = augment.sample_points;
    a.aug_per_sample = augment.aug_per_sample;
    a.lambda = augment.lambda;
    a.alpha = augment.alpha;
    a.replicates = augment.replicates;
    a.individual_hp = individual.hp;
    a.classifier_hp = augment.classifier_hp;
    a.ga = cpicf.ga;
    a.seed = seed;
    a.threads = threads;
    return a;
}

json profile(const std::string& name) {
    const bool paper = name == "paper";
    if (!paper && name != "desk") throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
    const json ga = {{"population", 20},     {"evaluations", 50},      {"generations", nullptr},
                     {"mutation_rate", nullptr}, {"crossover_rate", 0.9}, {"sigma_fraction", 0.1}};
    return {
        {"seed", 7},
        {"dataset",
         {{"source", "hypercube"},
          {"hypercube",
           {{"n", paper ? 30000 : 3000}, {"n_features", 2}, {"class_sep", 2.0}, {"minority_fraction", 0.1}}},
          {"split", {{"train", 0.6}, {"calibration", 0.2}, {"test", 0.2}}},
          {"csv", nullptr},
          {"schema", nullptr},
          {"label_column", "label"},
          {"undersample", false},
          {"encoding", {{"threshold", 10}, {"smoothing", 10.0}}}}},
        {"model",
         {{"hp", hp_profile(100, 6, 0.1)},
          {"cv", {{"enabled", false}, {"grid", "appendix"}, {"folds", 3}}},
          {"path", nullptr}}},
        {"individual", {{"k_size", 100}, {"hp", hp_profile(100, 6, 0.1)}}},
        {"conformal",
         {{"alpha", 0.1},
          {"methods", {"lwcp", "cqr", "class_set"}},
          {"resolution", paper ? 101 : 61},
          {"ablations", {"full", "sparse", "box", "half_plane"}},
          {"sparse_size", 100},
          {"half_plane_threshold", 1.0}}},
        {"cpicf",
         {{"lambda", 1000.0},
          {"epsilon_width_floor", cf::kWidthFloor},
          {"mode", "cpicf"},
          {"ga", ga},
          {"n_queries", paper ? 100 : 20},
          {"per_query", 1},
          {"query_row", nullptr},
          {"max_attrition", 0.5}}},
        {"delta",
         {{"lambdas", json::array({0.0, 1.0, 10.0, 100.0, 1e5, "unconstrained"})},
          {"alpha", 0.1},
          {"sides", {0.1, 0.5, 1.0}},
          {"resolution", 21},
          {"dims", {0, 1}},
          {"n_queries", paper ? 100 : 20},
          {"n_realizations", paper ? 7 : 3},
          {"second_term", "pointwise"},
          {"max_attrition", 0.5}}},
        {"augment",
         {{"sample_points", paper ? json::array({50, 500}) : json::array({50})},
          {"aug_per_sample", {0, 1, 4}},
          {"lambda", 1000.0},
          {"alpha", 0.1},
          {"replicates", paper ? 7 : 3},
          {"classifier_hp", hp_profile(100, 3, 0.1)}}}};
}

ExperimentConfig load_config(const std::string& profile_name, const std::optional<fs::path>& path) {
    json doc = profile(profile_name);
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot read config " + path->string());
        json user;
        try {
            in >> user;
        } catch (const json::exception& e) {
            throw ConfigError("config " + path->string() + ": " + e.what());
        }
        if (!user.is_object()) throw ConfigError("config " + path->string() + ": expected a JSON object");
        doc.merge_patch(user);
    }
    return ExperimentConfig::from_json(doc);
}

std::uint64_t main_data_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, "data"); }

eval::Scenario build_scenario(const ExperimentConfig& cfg, std::uint64_t data_seed) {
    const auto data = load_dataset(cfg, data_seed);
    auto splits = prepare_splits(cfg, tabular::split(data, cfg.dataset.split, derive_seed(data_seed, "split")));
    auto entity = train_entity(cfg, splits.train, data_seed);
    return {std::move(splits), std::move(entity)};
}

std::vector<std::size_t> ablation_rows(const std::string& variant, const tabular::LabeledDataset& train,
                                       const ConformalConfig& cfg, std::uint64_t seed) {
    std::vector<std::size_t> rows;
    if (variant == "sparse") {
        const std::size_t k = std::min(cfg.sparse_size, train.rows());
        rows.resize(train.rows());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        Rng rng(seed);
        rng.shuffle(std::span<std::size_t>(rows));
        rows.resize(k);
        std::sort(rows.begin(), rows.end());
        return rows;
    }
    for (std::size_t i = 0; i < train.rows(); ++i) {
        const auto x = train.row(i);
        bool drop = false;
        if (variant == "box") drop = x(0) < -1.0 && x(1) < 0.0; // the lower-left cluster
        else if (variant == "half_plane") drop = x(1) > cfg.half_plane_threshold;
        else if (variant != "full") throw ConfigError("unknown knowledge variant '" + variant + "'");
        if (!drop) rows.push_back(i);
    }
    return rows;
}

std::vector<WidthCell> width_map(const ExperimentConfig& cfg, const eval::Scenario& sc) {
    const auto& train = sc.splits.train;
    const auto& calib = sc.splits.calibration;
    const auto& schema = train.schema();
    if (schema.n_continuous() < 2) throw ConfigError("width map needs two continuous features");
    const std::size_t r = cfg.conformal.resolution;
    const double alpha = cfg.conformal.alpha;
    const std::uint64_t root = derive_seed(cfg.seed, "width_map");

    FeatureMatrix grid(static_cast<Eigen::Index>(r * r), static_cast<Eigen::Index>(schema.size()));
    for (std::size_t j = 0; j < schema.size(); ++j)
        grid.col(static_cast<Eigen::Index>(j)).setConstant(schema[j].is_continuous() ? 0.5 * (schema[j].lo() + schema[j].hi()) : 0.0);
    auto axis = [&](std::size_t d, std::size_t i) {
        return schema[d].lo() + schema[d].range() * static_cast<double>(i) / static_cast<double>(r - 1);
    };
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            const auto k = static_cast<Eigen::Index>(i * r + j);
            grid(k, 0) = axis(0, i);
            grid(k, 1) = axis(1, j);
        }
    const Eigen::VectorXd p = sc.entity.predict(grid);

    std::vector<WidthCell> cells;
    auto emit = [&](const std::string& method, auto&& width_at) {
        for (Eigen::Index k = 0; k < grid.rows(); ++k) {
            const Eigen::VectorXd x = grid.row(k).transpose();
            cells.push_back({grid(k, 0), grid(k, 1), width_at(x), method, p(k)});
        }
    };

    const auto& methods = cfg.conformal.methods;
    auto wants = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    if (wants("lwcp")) {
        for (const auto& variant : cfg.conformal.ablations) {
            const auto rows = ablation_rows(variant, train, cfg.conformal, derive_seed(root, "sparse"));
            const auto knowledge = cf::knowledge_from_rows(train, rows, sc.entity, variant);
            const auto im = cf::build_individual_model(knowledge, calib, sc.entity, alpha, cfg.individual.hp,
                                                       derive_seed(root, "individual"));
            emit("lwcp:" + variant, [&](const Eigen::VectorXd& x) { return im.width(x); });
        }
    }
    if (wants("cqr")) {
        const Eigen::VectorXd fit_y = sc.entity.predict(train.features());
        const Eigen::VectorXd calib_y = sc.entity.predict(calib.features());
        const auto cqr = conformal::fit_cqr(train.features(), fit_y, calib.features(), calib_y, alpha,
                                            cfg.individual.hp, derive_seed(root, "cqr"));
        emit("cqr", [&](const Eigen::VectorXd& x) { return conformal::cqr_interval(cqr, x).width; });
    }
    if (wants("class_set")) {
        const auto cc = conformal::calibrate_classifier(sc.entity, calib, alpha);
        emit("class_set", [&](const Eigen::VectorXd& x) {
            return static_cast<double>(conformal::prediction_set(cc, x).size());
        });
    }
    return cells;
}

WidthMapSummary summarize_width_map(const std::vector<WidthCell>& cells, double threshold) {
    WidthMapSummary s;
    double band = 0, off = 0, hp_full = 0, hp_abl = 0;
    std::size_t n_band = 0, n_off = 0, n_full = 0, n_abl = 0;
    for (const auto& c : cells) {
        if (c.method == "lwcp:full") {
            if (std::abs(c.p_entity - 0.5) < 0.1) {
                band += c.width;
                ++n_band;
            } else {
                off += c.width;
                ++n_off;
            }
            if (c.x2 > threshold) {
                hp_full += c.width;
                ++n_full;
            }
        } else if (c.method == "lwcp:half_plane" && c.x2 > threshold) {
            hp_abl += c.width;
            ++n_abl;
        } else if (c.method == "cqr") {
            ++s.cqr_cells;
            if (c.width < 0) ++s.cqr_crossed;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.band_mean = n_band ? band / static_cast<double>(n_band) : nan;
    s.off_band_mean = n_off ? off / static_cast<double>(n_off) : nan;
    s.half_plane_full = n_full ? hp_full / static_cast<double>(n_full) : nan;
    s.half_plane_ablated = n_abl ? hp_abl / static_cast<double>(n_abl) : nan;
    return s;
}

RunManifest::RunManifest(std::string command, const ExperimentConfig& cfg, std::string profile)
    : command_(std::move(command)), profile_(std::move(profile)), config_hash_(hex64(fnv1a64(cfg.document.dump()))) {}

void RunManifest::add_artifact(const fs::path& path) { artifacts_.push_back(path); }

json RunManifest::to_json() const {
    json artifacts = json::array();
    for (const auto& p : artifacts_)
        artifacts.push_back({{"path", p.filename().string()},
                             {"bytes", fs::exists(p) ? fs::file_size(p) : 0},
                             {"fnv1a64", fs::exists(p) ? hex64(file_hash(p)) : ""}});
    json seeds = json::object();
    for (const auto& [k, v] : seeds_) seeds[k] = v;
    json timings = json::object();
    for (const auto& [k, v] : timings_) timings[k] = v;
    return {{"command", command_},
            {"profile", profile_},
            {"config_hash", config_hash_},
            {"versions", {{"cpicf", "0.1.0"}, {"model_format", 1}}},
            {"seeds", seeds},
            {"artifacts", artifacts},
            {"wall_clock_seconds", timings}};
}

void RunManifest::write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
}

int cmd_gen_data(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("gen-data", cfg, opts.profile);
    Output out(opts, manifest);
    out.reserve({"data.csv", "schema.json", "splits.json", "gen-data.manifest.json"});
    Stopwatch clock;
    const auto seed = main_data_seed(cfg);
    manifest.add_seed("data", seed);
    const auto data = load_dataset(cfg, seed);
    const auto splits = tabular::split(data, cfg.dataset.split, derive_seed(seed, "split"));
    manifest.add_timing("generate", clock.lap());

    tabular::write_csv(data, out.path("data.csv"), cfg.dataset.label_column);
    tabular::save_schema(data.schema(), out.path("schema.json"));
    out.write_json("splits.json", {{"train", splits.train_rows},
                                   {"calibration", splits.calibration_rows},
                                   {"test", splits.test_rows}});
    manifest.add_timing("write", clock.lap());
    out.close("gen-data");
    return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("train", cfg, opts.profile);
    Output out(opts, manifest);
    out.reserve({"entity_model.json", "metrics.csv", "pr_curve.csv", "train_summary.json", "train.manifest.json"});
    Stopwatch clock;
    const auto seed = main_data_seed(cfg);
    manifest.add_seed("data", seed);
    const auto data = load_dataset(cfg, seed);
    const auto splits = prepare_splits(cfg, tabular::split(data, cfg.dataset.split, derive_seed(seed, "split")));
    manifest.add_timing("data", clock.lap());

    gbt::CvResult cv;
    const auto model = train_entity(cfg, splits.train, seed, &cv);
    manifest.add_timing("fit", clock.lap());

    const Eigen::VectorXd p = model.predict(splits.test.features());
    const std::vector<double> scores(p.data(), p.data() + p.size());
    const std::vector<int> labels(splits.test.labels().data(), splits.test.labels().data() + splits.test.rows());
    const auto m = eval::compute_metrics(scores, labels);

    out.write_json("entity_model.json", model.to_json());
    {
        std::ofstream f(out.path("metrics.csv"), std::ios::binary);
        f << "ap,f1,roc_auc\n"
          << tag(m.average_precision) << ',' << tag(m.f1) << ',' << tag(m.roc_auc) << '\n';
    }
    {
        std::ofstream f(out.path("pr_curve.csv"), std::ios::binary);
        f << "threshold,precision,recall\n";
        for (const auto& pt : eval::pr_curve(scores, labels))
            f << tag(pt.threshold) << ',' << tag(pt.precision) << ',' << tag(pt.recall) << '\n';
    }
    json summary = {{"metrics", {{"ap", m.average_precision}, {"f1", m.f1}, {"roc_auc", m.roc_auc}}},
                    {"rows", {{"train", splits.train.rows()}, {"calibration", splits.calibration.rows()},
                              {"test", splits.test.rows()}}},
                    {"cv", cfg.model.cv}};
    if (cfg.model.cv) {
        summary["selected_hp"] = cv.best.to_json();
        summary["selected_index"] = cv.best_index;
        summary["cv_scores"] = cv.scores;
    } else {
        summary["selected_hp"] = cfg.model.hp.to_json();
    }
    out.write_json("train_summary.json", summary);
    manifest.add_timing("evaluate", clock.lap());
    out.close("train");
    return kExitOk;
}

int cmd_width_map(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("width-map", cfg, opts.profile);
    Output out(opts, manifest);
    out.reserve({"width_map.csv", "width_map_summary.json", "width-map.manifest.json"});
    Stopwatch clock;
    const auto seed = main_data_seed(cfg);
    manifest.add_seed("data", seed);
    manifest.add_seed("width_map", derive_seed(cfg.seed, "width_map"));
    const auto sc = build_scenario(cfg, seed);
    manifest.add_timing("scenario", clock.lap());
    const auto cells = width_map(cfg, sc);
    manifest.add_timing("map", clock.lap());
    {
        std::ofstream f(out.path("width_map.csv"), std::ios::binary);
        f << "x1,x2,width,method\n";
        for (const auto& c : cells) f << tag(c.x1) << ',' << tag(c.x2) << ',' << tag(c.width) << ',' << c.method << '\n';
    }
    const auto s = summarize_width_map(cells, cfg.conformal.half_plane_threshold);
    auto num = [](double v) { return std::isnan(v) ? json() : json(v); };
    out.write_json("width_map_summary.json", {{"alpha", cfg.conformal.alpha},
                                              {"boundary_band_mean_width", num(s.band_mean)},
                                              {"off_band_mean_width", num(s.off_band_mean)},
                                              {"half_plane_full_mean_width", num(s.half_plane_full)},
                                              {"half_plane_ablated_mean_width", num(s.half_plane_ablated)},
                                              {"cqr_crossed_cells", s.cqr_crossed},
                                              {"cqr_cells", s.cqr_cells}});
    out.close("width-map");
    return kExitOk;
}

int cmd_cpicf(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("cpicf", cfg, opts.profile);
    Output out(opts, manifest);
    const std::string stem = "counterfactuals_lambda" + name_tag(cfg.cpicf.lambda) + "_alpha" + name_tag(cfg.conformal.alpha) +
                             "_seed" + std::to_string(cfg.seed);
    out.reserve({stem + ".jsonl", stem + "_summary.json", "cpicf.manifest.json"});
    Stopwatch clock;
    const auto seed = main_data_seed(cfg);
    manifest.add_seed("data", seed);
    const auto sc = build_scenario(cfg, seed);
    const auto& train = sc.splits.train;
    const auto& test = sc.splits.test;

    const auto knowledge_seed = derive_seed(cfg.seed, "knowledge");
    const auto individual_seed = derive_seed(cfg.seed, "individual");
    manifest.add_seed("knowledge", knowledge_seed);
    manifest.add_seed("individual", individual_seed);
    const auto knowledge = cf::sample_knowledge(train, cfg.individual.k_size, sc.entity, knowledge_seed);
    const auto im = cf::build_individual_model(knowledge, sc.splits.calibration, sc.entity, cfg.conformal.alpha,
                                               cfg.individual.hp, individual_seed);
    manifest.add_timing("models", clock.lap());

    std::vector<std::size_t> rows;
    const auto query_row = opts.query_row ? opts.query_row : cfg.cpicf.query_row;
    if (query_row) {
        if (*query_row >= test.rows()) throw ConfigError("query row " + std::to_string(*query_row) + " out of range");
        rows.push_back(*query_row);
    } else {
        rows.resize(test.rows());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        const auto qseed = derive_seed(cfg.seed, "queries");
        manifest.add_seed("queries", qseed);
        Rng rng(qseed);
        rng.shuffle(std::span<std::size_t>(rows));
        rows.resize(std::min(cfg.cpicf.n_queries, rows.size()));
    }
    std::vector<Instance> queries;
    for (auto r : rows) queries.push_back(test.row(r));

    const gower::GowerContext gower_ctx(train.schema());
    const auto space = search::SearchSpace::from_schema(train.schema());
    const cf::GenerationContext ctx{sc.entity, im, gower_ctx, space};
    cf::CpicfConfig cc;
    cc.lambda = cfg.cpicf.lambda;
    cc.alpha = cfg.conformal.alpha;
    cc.epsilon_width_floor = cfg.cpicf.epsilon_width_floor;
    cc.mode = cfg.cpicf.mode;
    cc.ga = cfg.cpicf.ga;
    const auto ga_seed = derive_seed(cfg.seed, "ga");
    manifest.add_seed("ga", ga_seed);
    const auto cfs = cf::generate_batch(queries, cfg.cpicf.per_query, ctx, cc, ga_seed, opts.threads);
    manifest.add_timing("generate", clock.lap());

    {
        const auto path = out.path(stem + ".jsonl");
        std::ofstream f(path, std::ios::binary);
        for (std::size_t i = 0; i < cfs.size(); ++i) {
            auto doc = cf::to_json(cfs[i], train.schema());
            doc["test_row"] = rows[cfs[i].provenance.query_index];
            f << doc.dump() << '\n';
        }
    }
    const auto n_valid = static_cast<std::size_t>(
        std::count_if(cfs.begin(), cfs.end(), [](const cf::Counterfactual& c) { return c.valid; }));
    const double attrition = cfs.empty() ? 0.0 : 1.0 - static_cast<double>(n_valid) / static_cast<double>(cfs.size());
    out.write_json(stem + "_summary.json",
                   {{"counterfactuals", cfs.size()}, {"valid", n_valid}, {"attrition", attrition},
                    {"lambda", cfg.cpicf.lambda}, {"alpha", cfg.conformal.alpha}, {"d_alpha", im.interval.d_alpha}});
    out.close("cpicf");
    return attrition > cfg.cpicf.max_attrition ? kExitSoftFailure : kExitOk;
}

int cmd_delta(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("delta", cfg, opts.profile);
    Output out(opts, manifest);
    const std::string stem = "delta_alpha" + name_tag(cfg.delta.alpha) + "_seed" + std::to_string(cfg.seed);
    out.reserve({stem + ".csv", stem + ".json", "delta.manifest.json"});
    Stopwatch clock;
    const auto dc = cfg.delta_config(opts.threads);
    manifest.add_seed("delta", derive_seed(cfg.seed, "delta"));
    const auto report = eval::delta_experiment(dc, [&](std::uint64_t s) { return build_scenario(cfg, s); });
    manifest.add_timing("experiment", clock.lap());
    eval::write_delta_csv(report, out.path(stem + ".csv"));
    auto doc = eval::to_json(report);
    doc["second_term"] = eval::second_term_name(cfg.delta.second_term);
    out.write_json(stem + ".json", doc);
    out.close("delta");
    return report.max_attrition() > cfg.delta.max_attrition ? kExitSoftFailure : kExitOk;
}

int cmd_augment(const ExperimentConfig& cfg, const RunOptions& opts) {
    RunManifest manifest("augment", cfg, opts.profile);
    Output out(opts, manifest);
    const std::string stem = "augment_lambda" + name_tag(cfg.augment.lambda) + "_alpha" + name_tag(cfg.augment.alpha) +
                             "_seed" + std::to_string(cfg.seed);
    out.reserve({stem + ".csv", stem + ".json", "augment.manifest.json"});
    Stopwatch clock;
    const auto seed = main_data_seed(cfg);
    manifest.add_seed("data", seed);
    manifest.add_seed("augment", derive_seed(cfg.seed, "augment"));
    const auto sc = build_scenario(cfg, seed);
    manifest.add_timing("scenario", clock.lap());
    const auto report = eval::augmentation_experiment(cfg.augment_config(opts.threads), sc);
    manifest.add_timing("experiment", clock.lap());
    eval::write_augment_csv(report, out.path(stem + ".csv"));
    out.write_json(stem + ".json", eval::to_json(report));
    out.close("augment");
    return kExitOk;
}

} // namespace cpicf::experiment
