// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only N` runs one.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "cpicf/conformal.hpp"
#include "cpicf/counterfactual.hpp"
#include "cpicf/eval.hpp"
#include "cpicf/experiment.hpp"
#include "cpicf/gower.hpp"
#include "cpicf/metrics.hpp"
#include "cpicf/rng.hpp"
#include "cpicf/search.hpp"

using namespace cpicf;
namespace fs = std::filesystem;
namespace cf = cpicf::counterfactual;
namespace ex = cpicf::experiment;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// 1. calibrate_quantile against a brute-force scan with an exact integer ceiling.
Outcome quantile_exactness() {
    Rng rng(1);
    std::size_t cases = 0, mismatches = 0;
    for (int percent : {5, 10, 20, 50}) {
        for (std::size_t n = 1; n <= 50; ++n) {
            const std::size_t k = ((100 - static_cast<std::size_t>(percent)) * (n + 1) + 99) / 100;
            for (int rep = 0; rep < 10; ++rep) {
                std::vector<double> s(n);
                for (auto& v : s) v = rep % 2 ? rng.uniform() : static_cast<double>(rng.below(6));
                double oracle = std::numeric_limits<double>::infinity();
                for (double q : s) {
                    std::size_t c = 0;
                    for (double t : s) c += t <= q;
                    if (c >= k && q < oracle) oracle = q;
                }
                const double got = conformal::calibrate_quantile(conformal::CalibrationScores(s), percent / 100.0);
                ++cases;
                mismatches += !(got == oracle);
            }
        }
    }
    return {mismatches == 0, std::to_string(cases) + " cases, " + std::to_string(mismatches) + " mismatches"};
}

// 2. LWCP marginal coverage over redrawn calibration and test sets.
Outcome coverage_guarantee() {
    Rng rng(2);
    auto draw = [&](int n, FeatureMatrix& x, Eigen::VectorXd& y) {
        x.resize(n, 1);
        y.resize(n);
        for (int i = 0; i < n; ++i) {
            x(i, 0) = rng.uniform(-3, 3);
            y(i) = std::sin(x(i, 0)) + (0.1 + 0.3 * std::abs(x(i, 0))) * rng.normal();
        }
    };
    FeatureMatrix fx, rx, cx, tx;
    Eigen::VectorXd fy, ry, cy, ty;
    draw(2000, fx, fy);
    draw(2000, rx, ry);
    gbt::Hyperparams hp;
    hp.n_estimators = 60;
    hp.max_depth = 3;
    auto mu = gbt::fit(fx, fy, gbt::Loss::squared(), hp, 1);
    const Eigen::VectorXd res = (ry - mu.predict(rx)).cwiseAbs();
    auto rho = gbt::fit(rx, res, gbt::Loss::squared(), hp, 2);

    const double alpha = 0.1;
    const std::size_t n_cal = 2000;
    double total = 0.0;
    const int redraws = 200;
    for (int r = 0; r < redraws; ++r) {
        draw(static_cast<int>(n_cal), cx, cy);
        draw(1000, tx, ty);
        const auto im = conformal::calibrate_lwcp(mu, rho, cx, cy, alpha);
        std::size_t hit = 0;
        for (Eigen::Index i = 0; i < tx.rows(); ++i)
            hit += conformal::lwcp_interval(im, tx.row(i).transpose()).contains(ty(i));
        total += static_cast<double>(hit) / static_cast<double>(tx.rows());
    }
    const double mean = total / redraws;
    const double lo = 1 - alpha - 0.02, hi = 1 - alpha + 1.0 / (n_cal + 1) + 0.02;
    return {mean >= lo && mean <= hi, "mean coverage " + fmt(mean, 5) + " in [" + fmt(lo, 5) + ", " + fmt(hi, 5) + "]"};
}

// 3. Gower metric laws.
Outcome gower_laws() {
    using tabular::FeatureSpec;
    const tabular::FeatureSchema mixed({FeatureSpec::continuous("a", -2, 3), FeatureSpec::continuous("b", 0, 0.1),
                                        FeatureSpec::categorical("c", {"p", "q", "r"}),
                                        FeatureSpec::categorical("d", {"s", "t", "u", "v", "w", "x"})});
    const tabular::FeatureSchema cont({FeatureSpec::continuous("a", -2, 3), FeatureSpec::continuous("b", 0, 0.1),
                                       FeatureSpec::continuous("c", 10, 20)});
    const gower::GowerContext gm(mixed), gc(cont);
    Rng rng(3);
    auto sample = [&](const tabular::FeatureSchema& s) {
        Instance x(static_cast<Eigen::Index>(s.size()));
        for (std::size_t j = 0; j < s.size(); ++j)
            x(static_cast<Eigen::Index>(j)) = s[j].is_continuous() ? rng.uniform(s[j].lo(), s[j].hi())
                                                                   : static_cast<double>(rng.below(s[j].cardinality()));
        return x;
    };
    std::size_t failures = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto x = sample(mixed), y = sample(mixed);
        const double d = gower::distance(gm, x, y);
        failures += d != gower::distance(gm, y, x);
        failures += gower::distance(gm, x, x) != 0.0;
        double cblock = std::abs(x(0) - y(0)) / 5 + std::abs(x(1) - y(1)) / 0.1;
        double kblock = (x(2) != y(2) ? 1.0 / 3 : 0.0) + (x(3) != y(3) ? 1.0 / 6 : 0.0);
        failures += cblock / 2 > 1.0;
        failures += kblock / 2 > 1.0 / 3;
        failures += d < 0;

        const auto u = sample(cont), v = sample(cont);
        double l1 = 0.0;
        for (Eigen::Index j = 0; j < 3; ++j) l1 += std::abs(u(j) - v(j)) / cont[static_cast<std::size_t>(j)].range();
        failures += gower::distance(gc, u, v) != l1 / 3;
    }
    return {failures == 0, "10000 pairs, " + std::to_string(failures) + " violations"};
}

// 4. GA on (x - 3)^2 over [0, 10] against a grid oracle.
Outcome ga_sanity() {
    const search::SearchSpace space({search::Domain{0, 10, 0}});
    auto f = [](const Instance& x) { return (x(0) - 3) * (x(0) - 3); };
    double oracle = 0, best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100000; ++i) {
        Instance x(1);
        x << i * 1e-4;
        if (f(x) < best) {
            best = f(x);
            oracle = x(0);
        }
    }
    int hits = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        search::GaConfig cfg;
        cfg.evaluations = 1000;
        cfg.seed = derive_seed(4, s);
        Instance anchor(1);
        anchor << 8.0;
        const auto r = search::minimize(f, [](const Instance&) { return true; }, space, cfg, anchor);
        hits += std::abs(r.best.instance(0) - oracle) <= 0.1;
    }
    return {hits >= 18, std::to_string(hits) + "/20 seeds within 0.1 of x*=" + fmt(oracle)};
}

struct DeskWorld {
    ex::ExperimentConfig cfg;
    eval::Scenario scenario;
    cf::IndividualKnowledge knowledge;
    cf::IndividualModel im;
};

DeskWorld desk_world() {
    auto cfg = ex::load_config("desk", std::nullopt);
    auto sc = ex::build_scenario(cfg, ex::main_data_seed(cfg));
    auto k = cf::sample_knowledge(sc.splits.train, cfg.individual.k_size, sc.entity, derive_seed(cfg.seed, "knowledge"));
    auto im = cf::build_individual_model(k, sc.splits.calibration, sc.entity, 0.1, cfg.individual.hp,
                                         derive_seed(cfg.seed, "individual"));
    return {std::move(cfg), std::move(sc), std::move(k), std::move(im)};
}

std::vector<cf::Counterfactual> desk_batch(const DeskWorld& w, double lambda, std::size_t n_queries) {
    const auto& train = w.scenario.splits.train;
    const auto& test = w.scenario.splits.test;
    std::vector<Instance> queries;
    for (std::size_t i = 0; i < n_queries; ++i) queries.push_back(test.row(i));
    const gower::GowerContext g(train.schema());
    const auto space = search::SearchSpace::from_schema(train.schema());
    cf::CpicfConfig cc;
    cc.lambda = lambda;
    cc.alpha = 0.1;
    cc.ga = w.cfg.cpicf.ga;
    return cf::generate_batch(queries, 1, {w.scenario.entity, w.im, g, space}, cc, derive_seed(w.cfg.seed, "ga"));
}

// 5. Validity of 100 CPICFs at lambda = 1000.
Outcome cpicf_validity() {
    const auto w = desk_world();
    const auto cfs = desk_batch(w, 1000.0, 100);
    std::size_t valid = 0;
    for (const auto& c : cfs)
        valid += c.valid && gbt::classify(w.scenario.entity, c.result) != gbt::classify(w.scenario.entity, c.query);
    return {valid >= 95, std::to_string(valid) + "/100 flip the entity class"};
}

// 6. Mean Gower distance shrinks from lambda = 0 to lambda = 1e5.
Outcome lambda_proximity() {
    const auto w = desk_world();
    auto mean_dist = [&](double lambda) {
        double s = 0;
        std::size_t n = 0;
        for (const auto& c : desk_batch(w, lambda, 50))
            if (c.valid) {
                s += c.l_dist;
                ++n;
            }
        return s / static_cast<double>(n);
    };
    const double d0 = mean_dist(0.0), d5 = mean_dist(1e5);
    return {d5 < d0, "mean gower at lambda=1e5 " + fmt(d5) + " vs lambda=0 " + fmt(d0)};
}

// 7. Fraction of negative Delta at side 0.5.
Outcome delta_direction() {
    auto cfg = ex::load_config("desk", std::nullopt);
    cfg.delta.n_queries = 50;
    cfg.delta.n_realizations = 3;
    cfg.delta.alpha = 0.1;
    cfg.individual.k_size = 100;
    const auto report =
        eval::delta_experiment(cfg.delta_config(1), [&](std::uint64_t s) { return ex::build_scenario(cfg, s); });
    const double base = report.cell("unconstrained", 0.5).fraction_negative;
    bool pass = false;
    std::string detail;
    for (const auto& setting : cfg.delta.lambdas) {
        const auto& cell = report.cell(setting.label(), 0.5);
        detail += setting.label() + "=" + fmt(cell.fraction_negative, 3) + " ";
        const double l = setting.lambda.value_or(-1);
        if ((l == 1 || l == 10 || l == 100) && cell.fraction_negative > 0.5 && cell.fraction_negative > base) pass = true;
    }
    return {pass, "fraction_negative at side 0.5: " + detail};
}

// 8. Median test AP gain from one CPICF per sample point.
Outcome augmentation_direction() {
    auto cfg = ex::load_config("desk", std::nullopt);
    cfg.augment.sample_points = {50};
    cfg.augment.aug_per_sample = {0, 1};
    cfg.augment.lambda = 1000.0;
    cfg.augment.replicates = 3;
    const auto sc = ex::build_scenario(cfg, ex::main_data_seed(cfg));
    const auto report = eval::augmentation_experiment(cfg.augment_config(1), sc);
    const double a0 = report.row(50, 0).average_precision.median;
    const double a1 = report.row(50, 1).average_precision.median;
    return {a1 - a0 >= 0.02, "median AP " + fmt(a0) + " -> " + fmt(a1) + " (gain " + fmt(a1 - a0) + ")"};
}

// 9. Entity classifier on the paper-scale hypercube.
Outcome entity_quality() {
    const auto cfg = ex::load_config("paper", std::nullopt);
    const auto sc = ex::build_scenario(cfg, ex::main_data_seed(cfg));
    const auto& test = sc.splits.test;
    const Eigen::VectorXd p = sc.entity.predict(test.features());
    const std::vector<double> scores(p.data(), p.data() + p.size());
    const std::vector<int> labels(test.labels().data(), test.labels().data() + test.labels().size());
    const auto m = eval::compute_metrics(scores, labels);
    return {m.average_precision >= 0.85 && m.roc_auc >= 0.95,
            "test AP " + fmt(m.average_precision) + ", ROC AUC " + fmt(m.roc_auc) + " on " +
                std::to_string(test.rows()) + " rows"};
}

// 10. LWCP width structure on the desk width map.
Outcome width_structure() {
    const auto cfg = ex::load_config("desk", std::nullopt);
    const auto sc = ex::build_scenario(cfg, ex::main_data_seed(cfg));
    const auto s = ex::summarize_width_map(ex::width_map(cfg, sc), cfg.conformal.half_plane_threshold);
    const bool band = s.band_mean > s.off_band_mean;
    const bool half = s.half_plane_ablated > s.half_plane_full;
    return {band && half, "band " + fmt(s.band_mean) + " > off-band " + fmt(s.off_band_mean) + "; x2>1 ablated " +
                              fmt(s.half_plane_ablated) + " > full " + fmt(s.half_plane_full)};
}

// 11. Appending the opposite label never grows a full prediction set.
Outcome set_shrinkage() {
    Rng rng(11);
    int sets = 0, violations = 0, points = 0;
    while (sets < 100) {
        const std::size_t n = 5 + rng.below(46);
        const double alpha = std::array{0.05, 0.1, 0.2, 0.25}[rng.below(4)];
        if (conformal::quantile_index(n + 1, alpha) != conformal::quantile_index(n, alpha)) continue;
        std::vector<double> p(n), s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform();
            y[i] = static_cast<int>(rng.below(2));
            s[i] = conformal::classification_score(p[i], y[i]);
        }
        const double q = conformal::calibrate_quantile(conformal::CalibrationScores(s), alpha);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            const auto before = conformal::prediction_set(p[i], q);
            if (before.size() != 2) continue;
            any = true;
            auto t = s;
            t.push_back(conformal::classification_score(p[i], 1 - y[i]));
            const double q2 = conformal::calibrate_quantile(conformal::CalibrationScores(t), alpha);
            violations += conformal::prediction_set(p[i], q2).size() > before.size();
            ++points;
        }
        sets += any;
    }
    return {violations == 0, "100 sets, " + std::to_string(points) + " full-set points, " +
                                 std::to_string(violations) + " violations"};
}

int run(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 12. Byte-identical artifacts from two runs of every subcommand.
Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / ("cpicf_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const std::vector<std::string> subs{"gen-data", "train", "width-map", "cpicf", "delta", "augment"};
    for (const char* run_dir : {"a", "b"})
        for (const auto& sub : subs)
            if (run(std::string(CPICF_BIN) + " --profile desk --out " + (root / run_dir).string() + " " + sub) != 0) {
                fs::remove_all(root);
                return {false, sub + " exited non-zero"};
            }
    std::size_t files = 0, differ = 0;
    std::string first;
    for (const auto& e : fs::directory_iterator(root / "a")) {
        const auto name = e.path().filename().string();
        const auto other = root / "b" / name;
        ++files;
        bool same = fs::exists(other);
        if (same && name.ends_with(".manifest.json")) {
            auto a = json::parse(slurp(e.path())), b = json::parse(slurp(other));
            a.erase("wall_clock_seconds");
            b.erase("wall_clock_seconds");
            same = a == b;
        } else if (same) {
            same = slurp(e.path()) == slurp(other);
        }
        if (!same) {
            ++differ;
            if (first.empty()) first = name;
        }
    }
    const auto count_b = static_cast<std::size_t>(std::distance(fs::directory_iterator(root / "b"), {}));
    fs::remove_all(root);
    return {differ == 0 && count_b == files && files > 0,
            std::to_string(files) + " artifacts, " + std::to_string(differ) + " differ" +
                (first.empty() ? "" : " (first: " + first + ")") + "; manifest timings excluded"};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> check;
};

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);

    const std::vector<Criterion> criteria{
        {1, "conformal quantile exactness", 1, quantile_exactness},
        {2, "LWCP coverage guarantee", 120, coverage_guarantee},
        {3, "Gower metric laws", 10, gower_laws},
        {4, "GA solver sanity", 30, ga_sanity},
        {5, "CPICF validity", 300, cpicf_validity},
        {6, "lambda-proximity direction", 600, lambda_proximity},
        {7, "delta-experiment direction", 1800, delta_direction},
        {8, "augmentation direction", 1800, augmentation_direction},
        {9, "entity-model quality gate", 600, entity_quality},
        {10, "width-map structure", 600, width_structure},
        {11, "set-shrinkage property", 10, set_shrinkage},
        {12, "CLI determinism", 1800, determinism},
    };

    bool all = true;
    for (const auto& c : criteria) {
        if (only && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.budget_seconds;
        const bool pass = o.pass && in_time;
        all = all && pass;
        std::printf("%s %2d %s: %s (%.2fs of %.0fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    c.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
