#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cpicf/counterfactual.hpp"
#include "cpicf/errors.hpp"
#include "support.hpp"

using namespace cpicf;
using namespace cpicf::counterfactual;

namespace {

struct Fixture {
    testing::SmallWorld world = testing::small_world(21);
    IndividualKnowledge knowledge = sample_knowledge(world.splits.train, 100, world.entity, 5);
    gbt::Hyperparams hp = [] {
        gbt::Hyperparams h;
        h.n_estimators = 40;
        h.max_depth = 3;
        return h;
    }();
    IndividualModel im = build_individual_model(knowledge, world.splits.calibration, world.entity, 0.1, hp, 6);
    gower::GowerContext gower_ctx{world.splits.train.schema()};
    search::SearchSpace space = search::SearchSpace::from_schema(world.splits.train.schema());
    GenerationContext ctx() const { return {world.entity, im, gower_ctx, space}; }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

gbt::GbtModel constant(double v) { return gbt::GbtModel::constant(v, gbt::Loss::squared(), 2); }

} // namespace

TEST_SUITE("counterfactual") {

TEST_CASE("knowledge sampling") {
    const auto& f = fixture();
    CHECK(f.knowledge.size() == 100);
    CHECK(std::is_sorted(f.knowledge.rows.begin(), f.knowledge.rows.end()));
    CHECK(std::adjacent_find(f.knowledge.rows.begin(), f.knowledge.rows.end()) == f.knowledge.rows.end());
    for (std::size_t i = 0; i < f.knowledge.size(); ++i) {
        const double t = f.knowledge.targets(static_cast<Eigen::Index>(i));
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
        CHECK(t == gbt::predict_proba(f.world.entity, f.world.splits.train.row(f.knowledge.rows[i])));
    }
    const auto again = sample_knowledge(f.world.splits.train, 100, f.world.entity, 5);
    CHECK(again.rows == f.knowledge.rows);

    const auto& train = f.world.splits.train;
    const auto all = sample_knowledge(train, train.rows(), f.world.entity, 1);
    std::vector<std::size_t> expect(train.rows());
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    CHECK(all.rows == expect);
    CHECK(all.targets == f.world.entity.predict(train.features()));

    CHECK_THROWS_AS(sample_knowledge(train, 9, f.world.entity, 1), InvalidArgument);
    CHECK_THROWS_AS(sample_knowledge(train, train.rows() + 1, f.world.entity, 1), InvalidArgument);
}

TEST_CASE("more knowledge tracks the entity more closely") {
    const auto& f = fixture();
    const auto& train = f.world.splits.train;
    const auto big = sample_knowledge(train, train.rows(), f.world.entity, 1);
    auto hp = f.hp;
    hp.n_estimators = 100;
    hp.max_depth = 5;
    const auto full = fit_p_theta_k(big.x, big.targets, hp, 2, f.world.entity.fingerprint());
    const auto& test = f.world.splits.test.features();
    const Eigen::VectorXd p = f.world.entity.predict(test);
    auto median_gap = [&](const gbt::GbtModel& m) {
        Eigen::VectorXd gap = (m.predict(test) - p).cwiseAbs();
        std::vector<double> v(gap.data(), gap.data() + gap.size());
        std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    CHECK(median_gap(full) < median_gap(f.im.p_theta_k()));
}

TEST_CASE("constant knowledge targets give floor-width intervals") {
    const auto& f = fixture();
    auto k = f.knowledge;
    k.targets.setConstant(0.5);
    const auto im = build_individual_model(k, f.world.splits.calibration, f.world.entity, 0.1, f.hp, 3);
    Instance x = Instance::Zero(2);
    CHECK(testing::predict_at(im.p_theta_k(), x) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(im.interval.dispersion(x) == conformal::kDispersionFloor);
    CHECK(im.width(x) == doctest::Approx(2 * conformal::kDispersionFloor * im.interval.d_alpha));
}

TEST_CASE("d_alpha is monotone in alpha") {
    const auto& f = fixture();
    const auto a = build_individual_model(f.knowledge, f.world.splits.calibration, f.world.entity, 0.1, f.hp, 6);
    const auto b = build_individual_model(f.knowledge, f.world.splits.calibration, f.world.entity, 0.2, f.hp, 6);
    CHECK(a.interval.d_alpha >= b.interval.d_alpha);
}

TEST_CASE("l_info by hand") {
    IndividualModel im{conformal::IntervalModel{constant(0.5), constant(0.1), 0.2, 0.1}, {}, 0, 0.1, "k"};
    Instance x = Instance::Zero(2);
    CHECK(l_info(im, x) == doctest::Approx(25.0));
    IndividualModel flat{conformal::IntervalModel{constant(0.5), constant(0.1), 0.0, 0.1}, {}, 0, 0.1, "k"};
    CHECK(l_info(flat, x, 1e-6) == doctest::Approx(1e6));
}

TEST_CASE("property: l_info decreases as the interval widens") {
    Rng rng(3);
    Instance x = Instance::Zero(2);
    for (int i = 0; i < 200; ++i) {
        const double r1 = rng.uniform(0.01, 1), r2 = r1 + rng.uniform(0.001, 1);
        IndividualModel a{conformal::IntervalModel{constant(0.5), constant(r1), 0.3, 0.1}, {}, 0, 0.1, "k"};
        IndividualModel b{conformal::IntervalModel{constant(0.5), constant(r2), 0.3, 0.1}, {}, 0, 0.1, "k"};
        CHECK(l_info(b, x) < l_info(a, x));
    }
}

TEST_CASE("property: generated counterfactuals honour their invariants") {
    const auto& f = fixture();
    const auto& test = f.world.splits.test;
    for (double lambda : {0.0, 1.0, 1000.0}) {
        for (std::size_t q = 0; q < 15; ++q) {
            CpicfConfig cfg;
            cfg.lambda = lambda;
            cfg.ga.seed = derive_seed(99, q);
            const auto x = test.row(q);
            const auto cf = generate(x, f.ctx(), cfg);
            CHECK(cf.query_label == gbt::classify(f.world.entity, x));
            CHECK(cf.label_prime == gbt::classify(f.world.entity, cf.result));
            CHECK(cf.valid == (cf.label_prime != cf.query_label));
            CHECK(cf.l_info == l_info(f.im, cf.result));
            CHECK(cf.l_dist == gower::distance(f.gower_ctx, x, cf.result));
            CHECK(cf.objective == cf.l_info + lambda * cf.l_dist);
            CHECK(f.space.contains(cf.result));
            CHECK(cf.evaluations == 50);
        }
    }
}

TEST_CASE("unconstrained mode yields valid random counterfactuals") {
    const auto& f = fixture();
    CpicfConfig cfg;
    cfg.mode = ObjectiveMode::unconstrained;
    int valid = 0;
    for (std::size_t q = 0; q < 20; ++q) {
        cfg.ga.seed = q;
        valid += generate(f.world.splits.test.row(q), f.ctx(), cfg).valid;
    }
    CHECK(valid >= 19);
}

TEST_CASE("an entity with one class everywhere cannot be flipped") {
    const auto& f = fixture();
    const auto zero = gbt::GbtModel::constant(-5.0, gbt::Loss::logistic(), 2, f.world.entity.fingerprint());
    const GenerationContext ctx{zero, f.im, f.gower_ctx, f.space};
    for (auto mode : {ObjectiveMode::cpicf, ObjectiveMode::unconstrained}) {
        CpicfConfig cfg;
        cfg.mode = mode;
        const auto cf = generate(f.world.splits.test.row(0), ctx, cfg);
        CHECK_FALSE(cf.valid);
    }
}

TEST_CASE("batches are sized, tagged and deterministic") {
    const auto& f = fixture();
    std::vector<Instance> queries;
    for (std::size_t q = 0; q < 5; ++q) queries.push_back(f.world.splits.test.row(q));
    CpicfConfig cfg;
    CHECK(generate_batch(queries, 0, f.ctx(), cfg, 1).empty());
    const auto a = generate_batch(queries, 4, f.ctx(), cfg, 1);
    REQUIRE(a.size() == 20);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].provenance.query_index == i / 4);
        CHECK(a[i].provenance.repeat == i % 4);
        CHECK(a[i].provenance.seed == derive_seed(1, i / 4, i % 4));
        CHECK(a[i].provenance.lambda == cfg.lambda);
    }
    const auto b = generate_batch(queries, 4, f.ctx(), cfg, 1, 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].result == b[i].result);
}

TEST_CASE("JSON lines carry decomposed losses") {
    const auto& f = fixture();
    CpicfConfig cfg;
    const auto cf = generate(f.world.splits.test.row(1), f.ctx(), cfg);
    const auto doc = to_json(cf, f.world.splits.train.schema());
    CHECK(doc.at("l_info").get<double>() == cf.l_info);
    CHECK(doc.at("l_dist").get<double>() == cf.l_dist);
    CHECK(doc.at("provenance").at("mode") == "cpicf");
    CHECK(doc.at("result").contains("x1"));
}

TEST_CASE("config validation") {
    CpicfConfig cfg;
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg.lambda = 1;
    cfg.alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

}
