#include "cpicf/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "cpicf/errors.hpp"
#include "cpicf/metrics.hpp"
#include "cpicf/rng.hpp"

namespace cpicf::gbt {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Order statistic r_(ceil(tau*n)), a minimiser of the pinball loss.
double tau_quantile(std::vector<double>& values, double tau) {
    const auto n = values.size();
    auto k = static_cast<std::size_t>(std::ceil(tau * static_cast<double>(n) - 1e-12));
    k = std::clamp<std::size_t>(k, 1, n) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

const char* loss_name(LossKind kind) {
    switch (kind) {
    case LossKind::logistic: return "logistic";
    case LossKind::squared: return "squared";
    case LossKind::pinball: return "pinball";
    }
    return "?";
}

LossKind loss_from_name(const std::string& name) {
    if (name == "logistic") return LossKind::logistic;
    if (name == "squared") return LossKind::squared;
    if (name == "pinball") return LossKind::pinball;
    throw DataError("unknown loss '" + name + "'");
}

std::size_t tree_depth(const Tree& tree, std::size_t node) {
    const auto& n = tree.nodes[node];
    if (n.is_leaf()) return 0;
    return 1 + std::max(tree_depth(tree, static_cast<std::size_t>(n.left)),
                        tree_depth(tree, static_cast<std::size_t>(n.right)));
}

nlohmann::json node_to_json(const Tree& tree, std::size_t k) {
    const auto& n = tree.nodes[k];
    if (n.is_leaf()) return {{"leaf", n.value}};
    return {{"feature", n.feature},
            {"threshold", n.threshold},
            {"left", node_to_json(tree, static_cast<std::size_t>(n.left))},
            {"right", node_to_json(tree, static_cast<std::size_t>(n.right))}};
}

int node_from_json(const nlohmann::json& doc, Tree& tree, std::size_t n_features, int depth) {
    if (depth > 256) throw DataError("model tree too deep");
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (doc.contains("leaf")) {
        tree.nodes.back().value = doc.at("leaf").get<double>();
        return index;
    }
    const int feature = doc.at("feature").get<int>();
    if (feature < 0 || static_cast<std::size_t>(feature) >= n_features)
        throw DataError("model tree splits on feature " + std::to_string(feature) + " out of range");
    const double threshold = doc.at("threshold").get<double>();
    const int left = node_from_json(doc.at("left"), tree, n_features, depth + 1);
    const int right = node_from_json(doc.at("right"), tree, n_features, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.feature = feature;
    node.threshold = threshold;
    node.left = left;
    node.right = right;
    return index;
}

// Exact greedy builder. Each selected feature keeps the sampled rows sorted by
// value; a node owns the same [begin, end) segment in every feature's list, and
// splitting stable-partitions each list.
class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, const std::vector<double>& grad, const std::vector<double>& hess,
                const std::vector<double>& residual, const Loss& loss, const Hyperparams& hp)
        : x_(x), grad_(grad), hess_(hess), residual_(residual), loss_(loss), hp_(hp) {}

    Tree build(const std::vector<std::vector<std::uint32_t>>& presorted,
               const std::vector<int>& features, const std::vector<char>& in_sample) {
        features_ = features;
        sorted_.clear();
        std::size_t n_sample = 0;
        for (int f : features_) {
            std::vector<std::uint32_t> rows;
            rows.reserve(presorted[static_cast<std::size_t>(f)].size());
            for (auto r : presorted[static_cast<std::size_t>(f)])
                if (in_sample[r]) rows.push_back(r);
            n_sample = rows.size();
            sorted_.push_back(std::move(rows));
        }
        go_left_.assign(static_cast<std::size_t>(x_.rows()), 0);
        buffer_.resize(n_sample);
        tree_ = Tree{};
        grow(0, n_sample, 0);
        return std::move(tree_);
    }

private:
    struct Split {
        double gain = 0.0;
        std::size_t feature_slot = 0;
        double threshold = 0.0;
        bool found = false;
    };

    double child_weight(double h_sum, double count) const {
        return loss_.kind == LossKind::logistic ? h_sum : count;
    }

    double score(double g, double h) const { return g * g / (h + hp_.reg_lambda); }

    double leaf_value(std::size_t begin, std::size_t end, double g, double h) const {
        if (loss_.kind != LossKind::pinball) return -g / (h + hp_.reg_lambda);
        std::vector<double> r;
        r.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k) r.push_back(residual_[sorted_[0][k]]);
        return tau_quantile(r, loss_.tau);
    }

    int grow(std::size_t begin, std::size_t end, int depth) {
        const int index = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double g = 0, h = 0;
        for (std::size_t k = begin; k < end; ++k) {
            g += grad_[sorted_[0][k]];
            h += hess_[sorted_[0][k]];
        }
        const auto count = static_cast<double>(end - begin);
        Split best;
        if (depth < hp_.max_depth && end - begin >= 2) best = find_split(begin, end, g, h, count);
        if (!best.found) {
            tree_.nodes[static_cast<std::size_t>(index)].value = leaf_value(begin, end, g, h);
            return index;
        }
        const int feature = features_[best.feature_slot];
        std::size_t n_left = 0;
        for (std::size_t k = begin; k < end; ++k) {
            const auto r = sorted_[0][k];
            const bool left = x_(r, feature) <= best.threshold;
            go_left_[r] = left;
            n_left += left;
        }
        for (auto& rows : sorted_) {
            std::size_t l = 0, rr = n_left;
            for (std::size_t k = begin; k < end; ++k) {
                const auto r = rows[k];
                buffer_[go_left_[r] ? l++ : rr++] = r;
            }
            std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(end - begin),
                      rows.begin() + static_cast<std::ptrdiff_t>(begin));
        }
        const int left = grow(begin, begin + n_left, depth + 1);
        const int right = grow(begin + n_left, end, depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(index)];
        node.feature = feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = right;
        return index;
    }

    Split find_split(std::size_t begin, std::size_t end, double g, double h, double count) const {
        Split best;
        const double parent = score(g, h);
        for (std::size_t slot = 0; slot < features_.size(); ++slot) {
            const auto& rows = sorted_[slot];
            const int f = features_[slot];
            double gl = 0, hl = 0, nl = 0;
            for (std::size_t k = begin; k + 1 < end; ++k) {
                const auto r = rows[k];
                gl += grad_[r];
                hl += hess_[r];
                nl += 1;
                const double a = x_(r, f);
                const double b = x_(rows[k + 1], f);
                if (!(a < b)) continue;
                if (child_weight(hl, nl) < hp_.min_child_weight ||
                    child_weight(h - hl, count - nl) < hp_.min_child_weight)
                    continue;
                const double gain = score(gl, hl) + score(g - gl, h - hl) - parent;
                if (gain > best.gain) {
                    double threshold = a + (b - a) / 2;
                    if (!(threshold < b)) threshold = a;
                    best = {gain, slot, threshold, true};
                }
            }
        }
        return best;
    }

    const FeatureMatrix& x_;
    const std::vector<double>& grad_;
    const std::vector<double>& hess_;
    const std::vector<double>& residual_;
    const Loss& loss_;
    const Hyperparams& hp_;
    std::vector<int> features_;
    std::vector<std::vector<std::uint32_t>> sorted_;
    std::vector<char> go_left_;
    std::vector<std::uint32_t> buffer_;
    Tree tree_;
};

double mean_loss(const Loss& loss, const std::vector<double>& raw, const Eigen::VectorXd& y) {
    double total = 0.0;
    const auto n = y.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double f = raw[static_cast<std::size_t>(i)];
        switch (loss.kind) {
        case LossKind::logistic: {
            // log(1 + e^f) - y f, computed stably.
            const double softplus = f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
            total += softplus - y(i) * f;
            break;
        }
        case LossKind::squared: total += 0.5 * (y(i) - f) * (y(i) - f); break;
        case LossKind::pinball: {
            const double u = y(i) - f;
            total += u >= 0 ? loss.tau * u : (loss.tau - 1.0) * u;
            break;
        }
        }
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

} // namespace

Loss Loss::pinball(double tau) {
    if (!(tau > 0 && tau < 1)) throw InvalidArgument("pinball tau must lie in (0,1)");
    return {LossKind::pinball, tau};
}

void Hyperparams::validate() const {
    if (n_estimators < 1) throw InvalidArgument("n_estimators must be >= 1");
    if (max_depth < 0) throw InvalidArgument("max_depth must be >= 0");
    if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be > 0");
    if (!(min_child_weight >= 0)) throw InvalidArgument("min_child_weight must be >= 0");
    if (!(subsample > 0 && subsample <= 1)) throw InvalidArgument("subsample must lie in (0,1]");
    if (!(colsample_bytree > 0 && colsample_bytree <= 1))
        throw InvalidArgument("colsample_bytree must lie in (0,1]");
    if (!(reg_lambda >= 0)) throw InvalidArgument("reg_lambda must be >= 0");
}

nlohmann::json Hyperparams::to_json() const {
    return {{"n_estimators", n_estimators},     {"max_depth", max_depth},
            {"learning_rate", learning_rate},   {"min_child_weight", min_child_weight},
            {"subsample", subsample},           {"colsample_bytree", colsample_bytree},
            {"reg_lambda", reg_lambda}};
}

Hyperparams Hyperparams::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw DataError("hyperparameters must be a JSON object");
    Hyperparams hp;
    for (const auto& [key, value] : doc.items()) {
        if (key == "n_estimators") hp.n_estimators = value.get<int>();
        else if (key == "max_depth") hp.max_depth = value.get<int>();
        else if (key == "learning_rate") hp.learning_rate = value.get<double>();
        else if (key == "min_child_weight") hp.min_child_weight = value.get<double>();
        else if (key == "subsample") hp.subsample = value.get<double>();
        else if (key == "colsample_bytree") hp.colsample_bytree = value.get<double>();
        else if (key == "reg_lambda") hp.reg_lambda = value.get<double>();
        else throw DataError("unknown hyperparameter '" + key + "'");
    }
    try {
        hp.validate();
    } catch (const InvalidArgument& e) {
        throw DataError(e.what());
    }
    return hp;
}

std::vector<Hyperparams> appendix_grid() {
    std::vector<Hyperparams> grid;
    for (int n : {80, 100, 120, 150, 300})
        for (int depth : {8, 9, 10, 11, 12})
            for (double lr : {0.01, 0.05, 0.1, 0.20})
                for (double mcw : {1.0, 2.0, 3.0, 4.0, 5.0})
                    for (double ss : {0.6, 0.8, 1.0})
                        for (double cs : {0.6, 0.8, 1.0}) {
                            Hyperparams hp;
                            hp.n_estimators = n;
                            hp.max_depth = depth;
                            hp.learning_rate = lr;
                            hp.min_child_weight = mcw;
                            hp.subsample = ss;
                            hp.colsample_bytree = cs;
                            grid.push_back(hp);
                        }
    return grid;
}

std::size_t Tree::depth() const { return nodes.empty() ? 0 : tree_depth(*this, 0); }

GbtModel::GbtModel(std::vector<Tree> trees, double learning_rate, double base_score, Loss loss,
                   std::size_t n_features, std::string fingerprint)
    : trees_(std::move(trees)),
      learning_rate_(learning_rate),
      base_score_(base_score),
      loss_(loss),
      n_features_(n_features),
      fingerprint_(std::move(fingerprint)) {
    if (trees_.empty()) throw InvalidArgument("a model needs at least one tree");
}

GbtModel GbtModel::constant(double base_score, Loss loss, std::size_t n_features, std::string fingerprint) {
    Tree t;
    t.nodes.push_back(TreeNode{});
    return GbtModel({std::move(t)}, 1.0, base_score, loss, n_features, std::move(fingerprint));
}

void GbtModel::check_width(Eigen::Index cols) const {
    if (static_cast<std::size_t>(cols) != n_features_)
        throw InvalidArgument("model expects " + std::to_string(n_features_) + " features, got " +
                              std::to_string(cols));
}

double GbtModel::raw(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check_width(x.size());
    double sum = 0.0;
    for (const auto& t : trees_) sum += t.predict(x);
    return base_score_ + learning_rate_ * sum;
}

double GbtModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const double r = raw(x);
    return loss_.kind == LossKind::logistic ? sigmoid(r) : r;
}

Eigen::VectorXd GbtModel::predict(const FeatureMatrix& x) const {
    check_width(x.cols());
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto row = x.row(i);
        double sum = 0.0;
        for (const auto& t : trees_) sum += t.predict(row);
        const double r = base_score_ + learning_rate_ * sum;
        out(i) = loss_.kind == LossKind::logistic ? sigmoid(r) : r;
    }
    return out;
}

void GbtModel::check_schema(const tabular::FeatureSchema& schema) const {
    if (schema.size() != n_features_ || (!fingerprint_.empty() && schema.fingerprint() != fingerprint_))
        throw InvalidArgument("schema does not match the model's training schema");
}

nlohmann::json GbtModel::to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) trees.push_back(node_to_json(t, 0));
    return {{"format", "cpicf-gbt"},
            {"version", 1},
            {"loss", {{"kind", loss_name(loss_.kind)}, {"tau", loss_.tau}}},
            {"learning_rate", learning_rate_},
            {"base_score", base_score_},
            {"n_features", n_features_},
            {"fingerprint", fingerprint_},
            {"trees", std::move(trees)}};
}

GbtModel GbtModel::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format").get<std::string>() != "cpicf-gbt") throw DataError("not a cpicf-gbt model");
        if (doc.at("version").get<int>() != 1)
            throw DataError("unsupported model version " + doc.at("version").dump());
        Loss loss{loss_from_name(doc.at("loss").at("kind").get<std::string>()),
                  doc.at("loss").at("tau").get<double>()};
        const auto n_features = doc.at("n_features").get<std::size_t>();
        std::vector<Tree> trees;
        for (const auto& t : doc.at("trees")) {
            Tree tree;
            node_from_json(t, tree, n_features, 0);
            trees.push_back(std::move(tree));
        }
        return GbtModel(std::move(trees), doc.at("learning_rate").get<double>(),
                        doc.at("base_score").get<double>(), loss, n_features,
                        doc.at("fingerprint").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("malformed model JSON: ") + e.what());
    }
}

GbtModel fit(const FeatureMatrix& x, const Eigen::VectorXd& targets, const Loss& loss,
             const Hyperparams& hp, std::uint64_t seed, std::string fingerprint,
             const RoundCallback& on_round) {
    hp.validate();
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    if (n < 2) throw InvalidArgument("fit needs at least 2 rows");
    if (static_cast<std::size_t>(targets.size()) != n)
        throw InvalidArgument("fit: target count does not match row count");
    if (d == 0) throw InvalidArgument("fit needs at least one feature");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("fit: too many rows");
    for (Eigen::Index i = 0; i < targets.size(); ++i)
        if (!std::isfinite(targets(i))) throw InvalidArgument("fit: non-finite target at row " + std::to_string(i));
    if (!x.allFinite()) throw InvalidArgument("fit: non-finite feature value");

    double base = 0.0;
    switch (loss.kind) {
    case LossKind::logistic: {
        if (targets.minCoeff() < 0 || targets.maxCoeff() > 1)
            throw InvalidArgument("logistic fit: targets must lie in [0,1]");
        if (!(targets.minCoeff() < targets.maxCoeff()))
            throw InvalidArgument("logistic fit: both classes must be present");
        const double mean = targets.mean();
        base = std::log(mean / (1.0 - mean));
        break;
    }
    case LossKind::squared: base = targets.mean(); break;
    case LossKind::pinball: {
        std::vector<double> t(targets.data(), targets.data() + n);
        base = tau_quantile(t, loss.tau);
        break;
    }
    }

    std::vector<std::vector<std::uint32_t>> presorted(d);
    for (std::size_t f = 0; f < d; ++f) {
        auto& order = presorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), std::uint32_t{0});
        const auto col = static_cast<Eigen::Index>(f);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return x(a, col) < x(b, col); });
    }

    Rng rng(seed);
    std::vector<double> raw(n, base), grad(n), hess(n, 1.0), residual(n);
    std::vector<char> in_sample(n, 1);
    std::vector<std::uint32_t> row_pool(n);
    std::vector<int> all_features(d);
    std::iota(all_features.begin(), all_features.end(), 0);
    const auto n_rows_per_tree =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hp.subsample * static_cast<double>(n))));
    const auto n_cols_per_tree =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hp.colsample_bytree * static_cast<double>(d))));

    TreeBuilder builder(x, grad, hess, residual, loss, hp);
    std::vector<Tree> trees;
    trees.reserve(static_cast<std::size_t>(hp.n_estimators));
    for (int round = 0; round < hp.n_estimators; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const double y = targets(static_cast<Eigen::Index>(i));
            switch (loss.kind) {
            case LossKind::logistic: {
                const double p = sigmoid(raw[i]);
                grad[i] = p - y;
                hess[i] = std::max(p * (1.0 - p), 1e-16);
                break;
            }
            case LossKind::squared: grad[i] = raw[i] - y; break;
            case LossKind::pinball:
                grad[i] = y < raw[i] ? 1.0 - loss.tau : -loss.tau;
                residual[i] = y - raw[i];
                break;
            }
        }

        if (n_rows_per_tree < n) {
            std::iota(row_pool.begin(), row_pool.end(), std::uint32_t{0});
            std::fill(in_sample.begin(), in_sample.end(), 0);
            for (std::size_t k = 0; k < n_rows_per_tree; ++k) {
                const auto j = k + static_cast<std::size_t>(rng.below(n - k));
                std::swap(row_pool[k], row_pool[j]);
                in_sample[row_pool[k]] = 1;
            }
        }
        std::vector<int> features = all_features;
        if (n_cols_per_tree < d) {
            for (std::size_t k = 0; k < n_cols_per_tree; ++k) {
                const auto j = k + static_cast<std::size_t>(rng.below(d - k));
                std::swap(features[k], features[j]);
            }
            features.resize(n_cols_per_tree);
            std::sort(features.begin(), features.end());
        }

        Tree tree = builder.build(presorted, features, in_sample);
        for (std::size_t i = 0; i < n; ++i)
            raw[i] += hp.learning_rate * tree.predict(x.row(static_cast<Eigen::Index>(i)));
        trees.push_back(std::move(tree));
        if (on_round) on_round(round, mean_loss(loss, raw, targets));
    }
    return GbtModel(std::move(trees), hp.learning_rate, base, loss, d, std::move(fingerprint));
}

GbtModel fit_classifier(const tabular::LabeledDataset& data, const Hyperparams& hp, std::uint64_t seed,
                        const RoundCallback& on_round) {
    if (data.count(0) == 0 || data.count(1) == 0)
        throw InvalidArgument("logistic fit: both classes must be present");
    return fit(data.features(), data.labels().cast<double>(), Loss::logistic(), hp, seed,
               data.schema().fingerprint(), on_round);
}

double predict_proba(const GbtModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (model.loss().kind != LossKind::logistic)
        throw InvalidArgument("predict_proba needs a logistic model");
    return model.predict(x);
}

int classify(const GbtModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, double threshold) {
    return predict_proba(model, x) >= threshold ? 1 : 0;
}

double training_loss(const GbtModel& model, const FeatureMatrix& x, const Eigen::VectorXd& targets) {
    std::vector<double> raw(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) raw[static_cast<std::size_t>(i)] = model.raw(x.row(i).transpose());
    return mean_loss(model.loss(), raw, targets);
}

CvResult cross_validate(const tabular::LabeledDataset& data, std::span<const Hyperparams> grid, int folds,
                        std::uint64_t seed) {
    if (grid.empty()) throw InvalidArgument("cross_validate: empty grid");
    if (folds < 2) throw InvalidArgument("cross_validate: folds must be >= 2");

    // Stratified assignment: shuffle each class, deal rows round-robin.
    Rng rng(derive_seed(seed, "cv-folds"));
    std::vector<int> fold_of(data.rows(), 0);
    for (int label : {0, 1}) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < data.rows(); ++i)
            if (data.label(i) == label) rows.push_back(i);
        rng.shuffle(std::span<std::size_t>(rows));
        for (std::size_t k = 0; k < rows.size(); ++k) fold_of[rows[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
    }

    struct Fold {
        tabular::LabeledDataset train, held;
    };
    std::vector<Fold> usable;
    for (int f = 0; f < folds; ++f) {
        std::vector<std::size_t> train_rows, held_rows;
        for (std::size_t i = 0; i < data.rows(); ++i) (fold_of[i] == f ? held_rows : train_rows).push_back(i);
        Fold fold{data.subset(train_rows), data.subset(held_rows)};
        const bool ok = fold.train.count(0) && fold.train.count(1) && fold.held.count(0) && fold.held.count(1);
        if (ok) usable.push_back(std::move(fold));
    }
    if (usable.empty()) throw InvalidArgument("cross_validate: no fold contains both classes");

    const std::uint64_t fit_seed = derive_seed(seed, "cv-fit");
    CvResult result;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double total = 0.0;
        for (const auto& fold : usable) {
            const auto model = fit_classifier(fold.train, grid[g], fit_seed);
            const Eigen::VectorXd scores = model.predict(fold.held.features());
            std::vector<int> labels(fold.held.labels().data(), fold.held.labels().data() + fold.held.rows());
            total += eval::average_precision(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
        }
        const double mean = total / static_cast<double>(usable.size());
        result.scores.push_back(mean);
        if (mean > best) {
            best = mean;
            result.best = grid[g];
            result.best_index = g;
        }
    }
    return result;
}

} // namespace cpicf::gbt
