#include "cpicf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cpicf/errors.hpp"
#include "cpicf/gower.hpp"
#include "cpicf/parallel.hpp"
#include "cpicf/rng.hpp"

namespace cpicf::eval {

namespace cf = cpicf::counterfactual;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Training rows drawn with replacement, alternating between the classes so
// that both are equally represented.
std::vector<std::size_t> balanced_queries(const tabular::LabeledDataset& train, std::size_t n, Rng& rng) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < train.rows(); ++i) by_class[static_cast<std::size_t>(train.label(i))].push_back(i);
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t q = 0; q < n; ++q) {
        const auto* pool = &by_class[q % 2];
        if (pool->empty()) pool = &by_class[1 - q % 2];
        out.push_back((*pool)[static_cast<std::size_t>(rng.below(pool->size()))]);
    }
    return out;
}

std::vector<double> probabilities(const gbt::GbtModel& model, const tabular::LabeledDataset& data) {
    const Eigen::VectorXd p = model.predict(data.features());
    return {p.data(), p.data() + p.size()};
}

std::vector<int> label_vector(const tabular::LabeledDataset& data) {
    return {data.labels().data(), data.labels().data() + data.labels().size()};
}

std::string lambda_text(double lambda) { return tabular::format_double(lambda); }

} // namespace

void OmegaGrid::validate(std::size_t n_features) const {
    if (!(side >= 0) || !std::isfinite(side)) throw InvalidArgument("omega grid side must be finite and >= 0");
    if (resolution < 2) throw InvalidArgument("omega grid resolution must be >= 2");
    if (dims[0] == dims[1]) throw InvalidArgument("omega grid dims must differ");
    if (dims[0] >= n_features || dims[1] >= n_features) throw InvalidArgument("omega grid dim out of range");
}

std::vector<Eigen::Vector2d> OmegaGrid::offsets() const {
    const double step = side / static_cast<double>(resolution - 1);
    const double centre = static_cast<double>(resolution - 1) / 2.0;
    std::vector<Eigen::Vector2d> out;
    out.reserve(resolution * resolution);
    for (std::size_t i = 0; i < resolution; ++i)
        for (std::size_t j = 0; j < resolution; ++j)
            out.emplace_back((static_cast<double>(i) - centre) * step, (static_cast<double>(j) - centre) * step);
    return out;
}

FeatureMatrix OmegaGrid::points(const Instance& query) const {
    validate(static_cast<std::size_t>(query.size()));
    const auto offs = offsets();
    FeatureMatrix x(static_cast<Eigen::Index>(offs.size()), query.size());
    const auto d0 = static_cast<Eigen::Index>(dims[0]);
    const auto d1 = static_cast<Eigen::Index>(dims[1]);
    for (std::size_t k = 0; k < offs.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        x.row(r) = query.transpose();
        x(r, d0) += offs[k](0);
        x(r, d1) += offs[k](1);
    }
    return x;
}

double delta_point(const gbt::GbtModel& entity, const gbt::GbtModel& individual_mu,
                   const Eigen::Ref<const Eigen::VectorXd>& x) {
    return std::abs(entity.predict(x) - individual_mu.predict(x));
}

const char* second_term_name(SecondTerm term) { return term == SecondTerm::pointwise ? "pointwise" : "at_query"; }

SecondTerm parse_second_term(const std::string& name) {
    if (name == "pointwise") return SecondTerm::pointwise;
    if (name == "at_query") return SecondTerm::at_query;
    throw InvalidArgument("unknown delta_second_term '" + name + "'");
}

double delta_change(const gbt::GbtModel& entity, const gbt::GbtModel& before, const gbt::GbtModel& after,
                    const Instance& query, const OmegaGrid& grid, SecondTerm second) {
    const FeatureMatrix x = grid.points(query);
    const Eigen::VectorXd p = entity.predict(x);
    const Eigen::VectorXd d_after = (p - after.predict(x)).cwiseAbs();
    double total = 0.0;
    if (second == SecondTerm::pointwise) {
        const Eigen::VectorXd d_before = (p - before.predict(x)).cwiseAbs();
        total = (d_after - d_before).sum();
    } else {
        total = d_after.sum() - static_cast<double>(x.rows()) * delta_point(entity, before, query);
    }
    return total / static_cast<double>(x.rows());
}

gbt::GbtModel retrain_with(const cf::IndividualModel& im, const cf::IndividualKnowledge& knowledge,
                           const Instance& x_prime, double y_prime, const std::string& fingerprint) {
    const auto n = knowledge.x.rows();
    FeatureMatrix x(n + 1, knowledge.x.cols());
    x.topRows(n) = knowledge.x;
    x.row(n) = x_prime.transpose();
    Eigen::VectorXd y(n + 1);
    y.head(n) = knowledge.targets;
    y(n) = y_prime;
    return cf::fit_p_theta_k(x, y, im.hp, im.seed, fingerprint);
}

std::vector<double> delta_improvement(const Instance& query, const cf::Counterfactual& c,
                                      const cf::IndividualKnowledge& knowledge, const cf::IndividualModel& im,
                                      const gbt::GbtModel& entity, std::span<const OmegaGrid> grids,
                                      SecondTerm second) {
    if (!c.valid) throw InvalidArgument("delta requires a valid counterfactual");
    const auto after = retrain_with(im, knowledge, c.result, static_cast<double>(c.label_prime), entity.fingerprint());
    std::vector<double> out;
    out.reserve(grids.size());
    for (const auto& g : grids) out.push_back(delta_change(entity, im.p_theta_k(), after, query, g, second));
    return out;
}

std::string LambdaSetting::label() const { return lambda ? lambda_text(*lambda) : "unconstrained"; }

LambdaSetting LambdaSetting::from_json(const nlohmann::json& value) {
    if (value.is_string()) {
        if (value.get<std::string>() == "unconstrained") return {std::nullopt};
        throw InvalidArgument("lambda must be a number or \"unconstrained\"");
    }
    if (!value.is_number()) throw InvalidArgument("lambda must be a number or \"unconstrained\"");
    return {value.get<double>()};
}

nlohmann::json LambdaSetting::to_json() const {
    return lambda ? nlohmann::json(*lambda) : nlohmann::json("unconstrained");
}

void DeltaConfig::validate() const {
    if (lambdas.empty()) throw InvalidArgument("delta: lambda list is empty");
    for (const auto& l : lambdas)
        if (l.lambda && !(*l.lambda >= 0 && std::isfinite(*l.lambda)))
            throw InvalidArgument("delta: lambda must be finite and >= 0");
    if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("delta: alpha must lie in (0,1)");
    if (sides.empty()) throw InvalidArgument("delta: no omega sides");
    if (n_queries == 0) throw InvalidArgument("delta: n_queries must be >= 1");
    if (n_realizations == 0) throw InvalidArgument("delta: n_realizations must be >= 1");
    if (k_size < cf::kMinKnowledgeRows) throw InvalidArgument("delta: k_size too small");
    individual_hp.validate();
    ga.validate();
}

const DeltaCell& DeltaReport::cell(const std::string& lambda, double side) const {
    for (const auto& c : cells)
        if (c.lambda == lambda && c.side == side) return c;
    throw InvalidArgument("no delta cell for lambda " + lambda);
}

double DeltaReport::max_attrition() const {
    double worst = 0.0;
    for (const auto& c : cells) {
        const auto total = c.n_valid + c.n_invalid;
        if (total) worst = std::max(worst, static_cast<double>(c.n_invalid) / static_cast<double>(total));
    }
    return worst;
}

DeltaReport delta_experiment(const DeltaConfig& cfg, const ScenarioFactory& make_scenario) {
    cfg.validate();
    std::vector<OmegaGrid> grids;
    for (double side : cfg.sides) grids.push_back({side, cfg.resolution, cfg.dims});

    DeltaReport report;
    report.alpha = cfg.alpha;
    report.sides = cfg.sides;
    const std::size_t n_lambda = cfg.lambdas.size();

    for (std::size_t r = 0; r < cfg.n_realizations; ++r) {
        const std::uint64_t seed_r = derive_seed(derive_seed(cfg.seed, "delta"), r);
        const Scenario sc = make_scenario(derive_seed(seed_r, "scenario"));
        const auto& train = sc.splits.train;
        for (const auto& g : grids) g.validate(train.schema().size());

        const auto knowledge =
            cf::sample_knowledge(train, cfg.k_size, sc.entity, derive_seed(seed_r, "knowledge"), "k" + std::to_string(r));
        const auto im = cf::build_individual_model(knowledge, sc.splits.calibration, sc.entity, cfg.alpha,
                                                   cfg.individual_hp, derive_seed(seed_r, "individual"));
        const gower::GowerContext gower_ctx(train.schema());
        const auto space = search::SearchSpace::from_schema(train.schema());
        const cf::GenerationContext ctx{sc.entity, im, gower_ctx, space};

        Rng query_rng(derive_seed(seed_r, "queries"));
        const auto query_rows = balanced_queries(train, cfg.n_queries, query_rng);
        const std::uint64_t ga_base = derive_seed(seed_r, "ga");

        std::vector<DeltaRow> rows(n_lambda * cfg.n_queries);
        parallel_for(rows.size(), cfg.threads, [&](std::size_t t) {
            const std::size_t li = t / cfg.n_queries;
            const std::size_t q = t % cfg.n_queries;
            const auto& setting = cfg.lambdas[li];
            cf::CpicfConfig cc;
            cc.lambda = setting.lambda.value_or(0.0);
            cc.alpha = cfg.alpha;
            cc.epsilon_width_floor = cfg.epsilon_width_floor;
            cc.mode = setting.lambda ? cf::ObjectiveMode::cpicf : cf::ObjectiveMode::unconstrained;
            cc.ga = cfg.ga;
            cc.ga.seed = derive_seed(ga_base, q);
            const Instance query = train.row(query_rows[q]);
            auto c = cf::generate(query, ctx, cc);

            DeltaRow& row = rows[t];
            row.realization = r;
            row.query_index = q;
            row.train_row = query_rows[q];
            row.lambda = setting.label();
            row.valid = c.valid;
            row.l_info = c.l_info;
            row.l_dist = c.l_dist;
            if (c.valid) row.delta = delta_improvement(query, c, knowledge, im, sc.entity, grids, cfg.second_term);
        });
        for (auto& row : rows) report.rows.push_back(std::move(row));
    }

    for (const auto& setting : cfg.lambdas) {
        const std::string label = setting.label();
        for (std::size_t s = 0; s < cfg.sides.size(); ++s) {
            DeltaCell cell;
            cell.lambda = label;
            cell.side = cfg.sides[s];
            double sum = 0.0;
            for (const auto& row : report.rows) {
                if (row.lambda != label) continue;
                if (!row.valid) {
                    ++cell.n_invalid;
                    continue;
                }
                ++cell.n_valid;
                sum += row.delta[s];
                if (row.delta[s] < 0) ++cell.n_negative;
            }
            if (cell.n_valid) {
                cell.fraction_negative = static_cast<double>(cell.n_negative) / static_cast<double>(cell.n_valid);
                cell.mean_delta = sum / static_cast<double>(cell.n_valid);
            } else {
                cell.fraction_negative = kNaN;
                cell.mean_delta = kNaN;
            }
            report.cells.push_back(cell);
        }
    }
    return report;
}

void write_delta_csv(const DeltaReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "lambda,side,alpha,n_valid,n_invalid,n_negative,fraction_negative,mean_delta\n";
    for (const auto& c : report.cells)
        out << c.lambda << ',' << tabular::format_double(c.side) << ',' << tabular::format_double(report.alpha) << ','
            << c.n_valid << ',' << c.n_invalid << ',' << c.n_negative << ','
            << tabular::format_double(c.fraction_negative) << ',' << tabular::format_double(c.mean_delta) << '\n';
}

nlohmann::json to_json(const DeltaReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json delta = nlohmann::json::array();
        for (double d : r.delta) delta.push_back(d);
        rows.push_back({{"realization", r.realization},
                        {"query_index", r.query_index},
                        {"train_row", r.train_row},
                        {"lambda", r.lambda},
                        {"valid", r.valid},
                        {"l_info", r.l_info},
                        {"l_dist", r.l_dist},
                        {"delta", delta}});
    }
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        cells.push_back({{"lambda", c.lambda},
                         {"side", c.side},
                         {"n_valid", c.n_valid},
                         {"n_invalid", c.n_invalid},
                         {"n_negative", c.n_negative},
                         {"fraction_negative", c.n_valid ? nlohmann::json(c.fraction_negative) : nlohmann::json()},
                         {"mean_delta", c.n_valid ? nlohmann::json(c.mean_delta) : nlohmann::json()}});
    }
    return {{"alpha", report.alpha}, {"sides", report.sides}, {"cells", cells}, {"per_query", rows}};
}

void AugmentConfig::validate() const {
    if (sample_points.empty() || aug_per_sample.empty()) throw InvalidArgument("augment: empty level list");
    for (auto s : sample_points)
        if (s < cf::kMinKnowledgeRows) throw InvalidArgument("augment: sample_points below the knowledge minimum");
    if (!(lambda >= 0 && std::isfinite(lambda))) throw InvalidArgument("augment: lambda must be finite and >= 0");
    if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("augment: alpha must lie in (0,1)");
    if (replicates == 0) throw InvalidArgument("augment: replicates must be >= 1");
    individual_hp.validate();
    classifier_hp.validate();
    ga.validate();
}

Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) return {kNaN, kNaN, kNaN};
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / (n - 1.0));
    } else {
        s.sd = kNaN;
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    return s;
}

const AugmentRow& AugmentationReport::row(std::size_t sample_points, std::size_t aug) const {
    for (const auto& r : rows)
        if (r.sample_points == sample_points && r.aug_per_sample == aug) return r;
    throw InvalidArgument("no augmentation row for the requested levels");
}

AugmentationReport augmentation_experiment(const AugmentConfig& cfg, const Scenario& scenario) {
    cfg.validate();
    const auto& train = scenario.splits.train;
    const auto& test = scenario.splits.test;
    const auto test_labels = label_vector(test);
    const gower::GowerContext gower_ctx(train.schema());
    const auto space = search::SearchSpace::from_schema(train.schema());
    const std::uint64_t root = derive_seed(cfg.seed, "augment");

    AugmentationReport report;
    for (std::size_t s_index = 0; s_index < cfg.sample_points.size(); ++s_index) {
        const std::size_t s = cfg.sample_points[s_index];
        if (s > train.rows()) throw InvalidArgument("augment: sample_points exceeds the training split");
        const std::size_t n_aug = cfg.aug_per_sample.size();
        // [replicate][aug level]
        std::vector<std::vector<Metrics>> metrics(cfg.replicates, std::vector<Metrics>(n_aug));
        std::vector<std::vector<std::size_t>> invalid(cfg.replicates, std::vector<std::size_t>(n_aug, 0));

        parallel_for(cfg.replicates, cfg.threads, [&](std::size_t rep) {
            const std::uint64_t rep_seed = derive_seed(root, s, rep);
            std::vector<std::size_t> rows;
            for (std::uint64_t attempt = 0;; ++attempt) {
                if (attempt == 5) throw DataError("augment: every subsample drawn was single-class");
                std::vector<std::size_t> pool(train.rows());
                std::iota(pool.begin(), pool.end(), std::size_t{0});
                Rng rng(derive_seed(rep_seed, attempt));
                rng.shuffle(std::span<std::size_t>(pool));
                pool.resize(s);
                std::sort(pool.begin(), pool.end());
                const auto sub = train.subset(pool);
                if (sub.count(0) > 0 && sub.count(1) > 0) {
                    rows = std::move(pool);
                    break;
                }
            }
            const auto base = train.subset(rows);
            const auto knowledge = cf::knowledge_from_rows(train, rows, scenario.entity, "aug" + std::to_string(rep));
            const auto im = cf::build_individual_model(knowledge, scenario.splits.calibration, scenario.entity,
                                                       cfg.alpha, cfg.individual_hp, derive_seed(rep_seed, "individual"));
            const cf::GenerationContext ctx{scenario.entity, im, gower_ctx, space};
            cf::CpicfConfig cc;
            cc.lambda = cfg.lambda;
            cc.alpha = cfg.alpha;
            cc.ga = cfg.ga;
            std::vector<Instance> queries;
            for (std::size_t i = 0; i < base.rows(); ++i) queries.push_back(base.row(i));

            for (std::size_t a = 0; a < n_aug; ++a) {
                const std::size_t per = cfg.aug_per_sample[a];
                const auto cfs = cf::generate_batch(queries, per, ctx, cc, derive_seed(rep_seed, "cf"));
                std::vector<const cf::Counterfactual*> kept;
                for (const auto& c : cfs) {
                    if (c.valid)
                        kept.push_back(&c);
                    else
                        ++invalid[rep][a];
                }
                const auto n0 = static_cast<Eigen::Index>(base.rows());
                const auto n_kept = static_cast<Eigen::Index>(kept.size());
                FeatureMatrix x(n0 + n_kept, base.features().cols());
                Labels y(n0 + n_kept);
                x.topRows(n0) = base.features();
                y.head(n0) = base.labels();
                for (Eigen::Index i = 0; i < n_kept; ++i) {
                    x.row(n0 + i) = kept[static_cast<std::size_t>(i)]->result.transpose();
                    y(n0 + i) = kept[static_cast<std::size_t>(i)]->label_prime;
                }
                const tabular::LabeledDataset augmented(train.schema(), std::move(x), std::move(y));
                const auto clf = gbt::fit_classifier(augmented, cfg.classifier_hp, derive_seed(rep_seed, "classifier"));
                const auto scores = probabilities(clf, test);
                metrics[rep][a] = compute_metrics(scores, test_labels);
            }
        });

        for (std::size_t a = 0; a < n_aug; ++a) {
            AugmentRow row;
            row.sample_points = s;
            row.aug_per_sample = cfg.aug_per_sample[a];
            row.lambda = cfg.lambda;
            row.replicates = cfg.replicates;
            std::vector<double> ap, f1, auc;
            for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
                const auto& m = metrics[rep][a];
                row.per_replicate.push_back(m);
                ap.push_back(m.average_precision);
                f1.push_back(m.f1);
                auc.push_back(m.roc_auc);
                row.invalid_counterfactuals += invalid[rep][a];
            }
            row.average_precision = summarize(ap);
            row.f1 = summarize(f1);
            row.roc_auc = summarize(auc);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

void write_augment_csv(const AugmentationReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "sample_points,aug_per_sample,lambda,ap_mean,ap_sd,f1_mean,f1_sd,roc_auc_mean,roc_auc_sd,replicates,"
           "invalid_counterfactuals\n";
    auto f = [](double v) { return tabular::format_double(v); };
    for (const auto& r : report.rows)
        out << r.sample_points << ',' << r.aug_per_sample << ',' << f(r.lambda) << ',' << f(r.average_precision.mean)
            << ',' << f(r.average_precision.sd) << ',' << f(r.f1.mean) << ',' << f(r.f1.sd) << ','
            << f(r.roc_auc.mean) << ',' << f(r.roc_auc.sd) << ',' << r.replicates << ',' << r.invalid_counterfactuals
            << '\n';
}

nlohmann::json to_json(const AugmentationReport& report) {
    auto summary = [](const Summary& s) {
        return nlohmann::json{{"mean", s.mean},
                              {"sd", std::isnan(s.sd) ? nlohmann::json() : nlohmann::json(s.sd)},
                              {"median", s.median}};
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json reps = nlohmann::json::array();
        for (const auto& m : r.per_replicate)
            reps.push_back({{"average_precision", m.average_precision}, {"f1", m.f1}, {"roc_auc", m.roc_auc}});
        rows.push_back({{"sample_points", r.sample_points},
                        {"aug_per_sample", r.aug_per_sample},
                        {"lambda", r.lambda},
                        {"average_precision", summary(r.average_precision)},
                        {"f1", summary(r.f1)},
                        {"roc_auc", summary(r.roc_auc)},
                        {"replicates", r.replicates},
                        {"invalid_counterfactuals", r.invalid_counterfactuals},
                        {"per_replicate", reps}});
    }
    return {{"rows", rows}};
}

} // namespace cpicf::eval
