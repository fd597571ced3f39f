#include "cpicf/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cpicf/errors.hpp"
#include "cpicf/parallel.hpp"
#include "cpicf/rng.hpp"

namespace cpicf::counterfactual {

namespace {

nlohmann::json instance_to_json(const Instance& x, const tabular::FeatureSchema& schema) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t j = 0; j < schema.size(); ++j) {
        const double v = x(static_cast<Eigen::Index>(j));
        if (schema[j].is_continuous())
            obj[schema[j].name] = v;
        else
            obj[schema[j].name] = schema[j].categories()[static_cast<std::size_t>(v)];
    }
    return obj;
}

} // namespace

IndividualKnowledge knowledge_from_rows(const tabular::LabeledDataset& train, std::vector<std::size_t> rows,
                                        const gbt::GbtModel& entity, std::string id) {
    if (rows.size() < kMinKnowledgeRows)
        throw InvalidArgument("individual knowledge needs at least " + std::to_string(kMinKnowledgeRows) + " rows");
    entity.check_schema(train.schema());
    IndividualKnowledge k;
    k.id = std::move(id);
    k.x = train.subset(rows).features();
    k.rows = std::move(rows);
    k.targets = entity.predict(k.x);
    return k;
}

IndividualKnowledge sample_knowledge(const tabular::LabeledDataset& train, std::size_t k_size,
                                     const gbt::GbtModel& entity, std::uint64_t seed, std::string id) {
    if (k_size < kMinKnowledgeRows)
        throw InvalidArgument("k_size must be >= " + std::to_string(kMinKnowledgeRows));
    if (k_size > train.rows()) throw InvalidArgument("k_size exceeds the training split");
    std::vector<std::size_t> pool(train.rows());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < k_size; ++i)
        std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.below(pool.size() - i))]);
    pool.resize(k_size);
    std::sort(pool.begin(), pool.end());
    return knowledge_from_rows(train, std::move(pool), entity, std::move(id));
}

gbt::GbtModel fit_p_theta_k(const FeatureMatrix& x, const Eigen::VectorXd& targets, const gbt::Hyperparams& hp,
                            std::uint64_t seed, std::string fingerprint) {
    return gbt::fit(x, targets, gbt::Loss::squared(), hp, derive_seed(seed, "p_theta_k"), std::move(fingerprint));
}

IndividualModel build_individual_model(const IndividualKnowledge& knowledge, const tabular::LabeledDataset& calib,
                                       const gbt::GbtModel& entity, double alpha, const gbt::Hyperparams& hp,
                                       std::uint64_t seed) {
    if (knowledge.size() < kMinKnowledgeRows)
        throw InvalidArgument("individual knowledge needs at least " + std::to_string(kMinKnowledgeRows) + " rows");
    if (calib.rows() == 0) throw InvalidArgument("calibration set is empty");
    entity.check_schema(calib.schema());
    auto p_theta_k = fit_p_theta_k(knowledge.x, knowledge.targets, hp, seed, entity.fingerprint());
    const Eigen::VectorXd calib_targets = entity.predict(calib.features());
    auto interval = conformal::fit_lwcp(std::move(p_theta_k), knowledge.x, knowledge.targets, calib.features(),
                                        calib_targets, alpha, hp, derive_seed(seed, "rho"));
    return IndividualModel{std::move(interval), hp, seed, alpha, knowledge.id};
}

double l_info(const IndividualModel& im, const Eigen::Ref<const Eigen::VectorXd>& x, double eps) {
    return 1.0 / std::max(im.width(x), eps);
}

void CpicfConfig::validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
    if (!(alpha > 0 && alpha < 1)) throw InvalidArgument("alpha must lie in (0,1)");
    if (!(epsilon_width_floor > 0)) throw InvalidArgument("epsilon_width_floor must be > 0");
    ga.validate();
}

const char* mode_name(ObjectiveMode mode) {
    return mode == ObjectiveMode::cpicf ? "cpicf" : "unconstrained";
}

Counterfactual generate(const Instance& query, const GenerationContext& ctx, const CpicfConfig& cfg) {
    cfg.validate();
    if (static_cast<std::size_t>(query.size()) != ctx.space.size())
        throw InvalidArgument("query width does not match the search space");

    Counterfactual cf;
    cf.query = query;
    cf.query_label = gbt::classify(ctx.entity, query);
    cf.provenance = {cfg.ga.seed, cfg.lambda, cfg.alpha, ctx.individual.k_id, cfg.mode, 0, 0};

    auto flips = [&](const Instance& x) { return gbt::classify(ctx.entity, x) != cf.query_label; };
    auto info = [&](const Instance& x) { return l_info(ctx.individual, x, cfg.epsilon_width_floor); };
    auto dist = [&](const Instance& x) { return gower::distance(ctx.gower, query, x); };

    if (cfg.mode == ObjectiveMode::unconstrained) {
        Rng rng(cfg.ga.seed);
        Instance candidate;
        const std::size_t budget = cfg.ga.budget();
        for (std::size_t i = 0; i < budget; ++i) {
            candidate = ctx.space.sample(rng);
            ++cf.evaluations;
            if (flips(candidate)) break;
        }
        cf.result = candidate;
        cf.objective = 0.0;
    } else {
        Rng anchor_rng(derive_seed(cfg.ga.seed, "anchor"));
        const Instance anchor = search::mutate(ctx.space.clamp(query), ctx.space, cfg.ga.mutation_rate,
                                               cfg.ga.sigma_fraction, anchor_rng, true);
        const auto objective = [&](const Instance& x) { return info(x) + cfg.lambda * dist(x); };
        const auto found = search::minimize(objective, flips, ctx.space, cfg.ga, anchor);
        cf.result = found.best.instance;
        cf.evaluations = found.evaluations;
    }

    cf.l_info = info(cf.result);
    cf.l_dist = dist(cf.result);
    if (cfg.mode == ObjectiveMode::cpicf) cf.objective = cf.l_info + cfg.lambda * cf.l_dist;
    cf.label_prime = gbt::classify(ctx.entity, cf.result);
    cf.valid = cf.label_prime != cf.query_label;
    return cf;
}

std::vector<Counterfactual> generate_batch(std::span<const Instance> queries, std::size_t per_query,
                                           const GenerationContext& ctx, const CpicfConfig& cfg,
                                           std::uint64_t base_seed, std::size_t threads) {
    std::vector<Counterfactual> out(queries.size() * per_query);
    parallel_for(out.size(), threads, [&](std::size_t t) {
        const std::size_t q = t / per_query;
        const std::size_t r = t % per_query;
        CpicfConfig local = cfg;
        local.ga.seed = derive_seed(base_seed, q, r);
        out[t] = generate(queries[q], ctx, local);
        out[t].provenance.query_index = q;
        out[t].provenance.repeat = r;
    });
    return out;
}

nlohmann::json to_json(const Counterfactual& cf, const tabular::FeatureSchema& schema) {
    const auto& p = cf.provenance;
    return {{"query", instance_to_json(cf.query, schema)},
            {"result", instance_to_json(cf.result, schema)},
            {"l_info", cf.l_info},
            {"l_dist", cf.l_dist},
            {"objective", cf.objective},
            {"valid", cf.valid},
            {"query_label", cf.query_label},
            {"label_prime", cf.label_prime},
            {"evaluations", cf.evaluations},
            {"provenance",
             {{"seed", p.seed},
              {"lambda", p.lambda},
              {"alpha", p.alpha},
              {"k_id", p.k_id},
              {"mode", mode_name(p.mode)},
              {"query_index", p.query_index},
              {"repeat", p.repeat}}}};
}

void write_jsonl(std::span<const Counterfactual> cfs, const tabular::FeatureSchema& schema,
                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& cf : cfs) out << to_json(cf, schema).dump() << '\n';
}

} // namespace cpicf::counterfactual
