#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "cpicf/errors.hpp"
#include "cpicf/tabular.hpp"
#include "support.hpp"

using namespace cpicf;
using namespace cpicf::tabular;

namespace {

LabeledDataset letters(const std::vector<std::string>& values, const std::vector<int>& labels,
                       std::vector<std::string> categories) {
    FeatureSchema schema({FeatureSpec::categorical("c", categories)});
    FeatureMatrix x(static_cast<Eigen::Index>(values.size()), 1);
    Labels y(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        x(static_cast<Eigen::Index>(i), 0) = schema[0].category_index(values[i]);
        y(static_cast<Eigen::Index>(i)) = labels[i];
    }
    return {schema, x, y};
}

bool bitwise_equal(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

} // namespace

TEST_SUITE("tabular") {

TEST_CASE("hypercube at paper size has a binomial minority count") {
    HypercubeParams p;
    p.n = 30000;
    p.class_sep = 1.0;
    p.seed = 7;
    const auto d = generate_hypercube(p);
    CHECK(d.rows() == 30000);
    const double sigma = std::sqrt(30000 * 0.1 * 0.9);
    CHECK(std::abs(static_cast<double>(d.count(1)) - 3000.0) <= 3 * sigma);
}

TEST_CASE("hypercube minimal size and schema") {
    HypercubeParams p;
    p.n = 2;
    p.class_sep = 1.0;
    p.minority_fraction = 0.5;
    p.seed = 0;
    const auto d = generate_hypercube(p);
    CHECK(d.rows() == 2);
    REQUIRE(d.schema().size() == 2);
    CHECK(d.schema().n_continuous() == 2);
}

TEST_CASE("hypercube is deterministic and has observed ranges") {
    HypercubeParams p;
    p.n = 500;
    p.seed = 11;
    const auto a = generate_hypercube(p);
    const auto b = generate_hypercube(p);
    CHECK(bitwise_equal(a.features(), b.features()));
    CHECK(a.labels() == b.labels());
    for (std::size_t j = 0; j < 2; ++j) {
        const auto col = a.features().col(static_cast<Eigen::Index>(j));
        CHECK(a.schema()[j].lo() == col.minCoeff());
        CHECK(a.schema()[j].hi() == col.maxCoeff());
        CHECK(a.schema()[j].range() > 0);
    }
}

TEST_CASE("hypercube class centres sit on alternating vertices") {
    HypercubeParams p;
    p.n = 20000;
    p.class_sep = 3.0;
    p.minority_fraction = 0.5;
    p.seed = 5;
    const auto d = generate_hypercube(p);
    // XOR layout: each quadrant is dominated by one class, diagonal quadrants agree.
    std::array<std::array<double, 2>, 4> counts{};
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const auto x = d.row(i);
        const int q = (x(0) > 0 ? 1 : 0) + (x(1) > 0 ? 2 : 0);
        counts[static_cast<std::size_t>(q)][static_cast<std::size_t>(d.label(i))] += 1;
    }
    auto majority = [&](int q) { return counts[static_cast<std::size_t>(q)][1] > counts[static_cast<std::size_t>(q)][0]; };
    CHECK(majority(0) == majority(3));
    CHECK(majority(1) == majority(2));
    CHECK(majority(0) != majority(1));
}

TEST_CASE("hypercube rejects bad parameters") {
    HypercubeParams p;
    p.minority_fraction = 1.0;
    CHECK_THROWS_AS(generate_hypercube(p), InvalidArgument);
    p.minority_fraction = 0.1;
    p.n_features = 1;
    CHECK_THROWS_AS(generate_hypercube(p), InvalidArgument);
    p.n_features = 2;
    p.class_sep = 0.0;
    CHECK_THROWS_AS(generate_hypercube(p), InvalidArgument);
}

TEST_CASE("property: hypercube minority fraction averages to its target over 50 seeds") {
    double total = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        HypercubeParams p;
        p.n = 10000;
        p.seed = s;
        total += static_cast<double>(generate_hypercube(p).count(1)) / 10000.0;
    }
    CHECK(std::abs(total / 50 - 0.1) <= 0.01);
}

TEST_CASE("split sizes follow floor and remainder") {
    HypercubeParams p;
    p.n = 100;
    p.seed = 1;
    const auto d100 = generate_hypercube(p);
    auto s = split(d100, {0.6, 0.2, 0.2}, 1);
    CHECK(s.train.rows() == 60);
    CHECK(s.calibration.rows() == 20);
    CHECK(s.test.rows() == 20);

    p.n = 5;
    s = split(generate_hypercube(p), {0.6, 0.2, 0.2}, 1);
    CHECK(s.train.rows() == 3);
    CHECK(s.calibration.rows() == 1);
    CHECK(s.test.rows() == 1);

    const auto other = split(d100, {0.6, 0.2, 0.2}, 2);
    CHECK(other.train.rows() == 60);
    CHECK(other.train_rows != split(d100, {0.6, 0.2, 0.2}, 1).train_rows);
}

TEST_CASE("split rejects fractions that do not sum to one") {
    HypercubeParams p;
    p.n = 50;
    const auto d = generate_hypercube(p);
    CHECK_THROWS_AS(split(d, {0.6, 0.2, 0.3}, 0), InvalidArgument);
    CHECK_THROWS_AS(split(d, {0.8, 0.2, 0.0}, 0), InvalidArgument);
}

TEST_CASE("property: split is a partition for random fraction triples") {
    Rng rng(99);
    HypercubeParams p;
    p.n = 257;
    const auto d = generate_hypercube(p);
    for (int trial = 0; trial < 100; ++trial) {
        const double a = rng.uniform(0.05, 0.9);
        const double b = rng.uniform(0.01, 1.0 - a - 0.01);
        const double c = 1.0 - a - b;
        if (c <= 0) continue;
        const auto s = split(d, {a, b, c}, rng());
        std::vector<std::size_t> all;
        for (const auto* rows : {&s.train_rows, &s.calibration_rows, &s.test_rows}) {
            CHECK(std::is_sorted(rows->begin(), rows->end()));
            all.insert(all.end(), rows->begin(), rows->end());
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(d.rows());
        std::iota(expect.begin(), expect.end(), std::size_t{0});
        REQUIRE(all == expect);
        CHECK(s.calibration.rows() == static_cast<std::size_t>(std::floor(b * 257)));
        CHECK(s.test.rows() == static_cast<std::size_t>(std::floor(c * 257)));
        CHECK(s.train.schema() == d.schema());
    }
}

TEST_CASE("undersampling balances to the minority count") {
    std::vector<std::string> v(100, "a");
    std::vector<int> y(100, 0);
    for (int i = 90; i < 100; ++i) {
        y[static_cast<std::size_t>(i)] = 1;
        v[static_cast<std::size_t>(i)] = "b";
    }
    const auto d = letters(v, y, {"a", "b"});
    const auto u = undersample_majority(d, 4);
    CHECK(u.count(0) == 10);
    CHECK(u.count(1) == 10);
    for (std::size_t i = 0; i < u.rows(); ++i)
        if (u.label(i) == 1) CHECK(u.features()(static_cast<Eigen::Index>(i), 0) == 1.0);
    const auto again = undersample_majority(d, 4);
    CHECK(again.features() == u.features());

    const auto balanced = undersample_majority(u, 9);
    CHECK(balanced.count(0) == 10);
    CHECK(balanced.count(1) == 10);

    CHECK_THROWS_AS(undersample_majority(letters({"a", "a"}, {0, 0}, {"a"}), 1), InvalidArgument);
}

TEST_CASE("target encoding with zero smoothing gives category label means") {
    const auto d = letters({"a", "b", "a"}, {1, 0, 1}, {"a", "b"});
    const auto e = encode(d, EncodingPolicy::all(d.schema(), Encoding::target, 0.0));
    REQUIRE(e.schema().size() == 1);
    CHECK(e.schema()[0].is_continuous());
    CHECK(e.features()(0, 0) == 1.0);
    CHECK(e.features()(1, 0) == 0.0);
    CHECK(e.features()(2, 0) == 1.0);
}

TEST_CASE("target encoding smoothing pulls towards the global mean") {
    const auto d = letters({"a", "b", "a", "b"}, {1, 0, 1, 1}, {"a", "b"});
    const auto e = encode(d, EncodingPolicy::all(d.schema(), Encoding::target, 10.0));
    // (2*1 + 10*0.75) / 12 and (2*0.5 + 10*0.75) / 12
    CHECK(e.features()(0, 0) == doctest::Approx(9.5 / 12));
    CHECK(e.features()(1, 0) == doctest::Approx(8.5 / 12));
}

TEST_CASE("one-hot expands to indicator columns") {
    const auto d = letters({"a", "b", "c", "b"}, {0, 1, 0, 1}, {"a", "b", "c"});
    const auto e = encode(d, EncodingPolicy::all(d.schema(), Encoding::one_hot));
    REQUIRE(e.schema().size() == 3);
    for (std::size_t i = 0; i < e.rows(); ++i) CHECK(e.features().row(static_cast<Eigen::Index>(i)).sum() == 1.0);

    const auto constant = letters({"a", "a"}, {0, 1}, {"a"});
    const auto ce = encode(constant, EncodingPolicy::all(constant.schema(), Encoding::one_hot));
    REQUIRE(ce.schema().size() == 1);
    CHECK(ce.features().col(0).minCoeff() == 1.0);
}

TEST_CASE("property: one-hot output width is m plus the category counts") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = rng.below(3);
        const std::size_t k = 1 + rng.below(3);
        std::vector<FeatureSpec> f;
        for (std::size_t j = 0; j < m; ++j) f.push_back(FeatureSpec::continuous("x" + std::to_string(j), 0, 1));
        std::size_t total = 0;
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<std::string> cats;
            const std::size_t c = 1 + rng.below(5);
            for (std::size_t i = 0; i < c; ++i) cats.push_back(std::to_string(i));
            total += c;
            f.push_back(FeatureSpec::categorical("c" + std::to_string(j), cats));
        }
        FeatureSchema schema(f);
        FeatureMatrix x = FeatureMatrix::Zero(4, static_cast<Eigen::Index>(schema.size()));
        Labels y(4);
        y << 0, 1, 0, 1;
        const auto e = encode(LabeledDataset(schema, x, y), EncodingPolicy::all(schema, Encoding::one_hot));
        CHECK(e.schema().size() == m + total);
    }
}

TEST_CASE("unseen categories are reported") {
    const auto train = letters({"a", "b"}, {1, 0}, {"a", "b"});
    const auto enc = Encoder::fit(train, EncodingPolicy::all(train.schema(), Encoding::target, 0.0));
    const auto other = letters({"z", "a"}, {0, 0}, {"a", "z"});
    TransformReport report;
    const auto out = enc.transform(other, &report);
    REQUIRE(report.unseen.size() == 1);
    CHECK(report.unseen[0].row == 0);
    CHECK(report.unseen[0].category == "z");
    CHECK(out.features()(0, 0) == 0.5); // global mean
}

TEST_CASE("load_csv reads well-formed files and names bad rows and columns") {
    testing::TempDir dir;
    const auto schema = testing::box_schema(2, 0, 10);
    testing::write_text(dir / "ok.csv", "x2,label,x1\n1,0,2\n3,1,4\n5,0,6\n");
    const auto d = load_csv(dir / "ok.csv", schema, "label");
    CHECK(d.rows() == 3);
    CHECK(d.features()(1, 0) == 4.0);
    CHECK(d.features()(1, 1) == 3.0);
    CHECK(d.label(1) == 1);

    testing::write_text(dir / "label.csv", "x1,x2,label\n1,1,0\n1,1,1\n1,1,0\n1,1,1\n1,1,2\n");
    try {
        load_csv(dir / "label.csv", schema, "label");
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    }

    testing::write_text(dir / "parse.csv", "x1,x2,label\n1,abc,0\n");
    try {
        load_csv(dir / "parse.csv", schema, "label");
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("x2") != std::string::npos);
    }

    testing::write_text(dir / "missing.csv", "x1,label\n1,0\n");
    CHECK_THROWS_AS(load_csv(dir / "missing.csv", schema, "label"), DataError);
}

TEST_CASE("property: write_csv then load_csv is bitwise lossless") {
    testing::TempDir dir;
    Rng rng(17);
    std::vector<FeatureSpec> f{FeatureSpec::continuous("a", -1e6, 1e6), FeatureSpec::continuous("b", -1, 1),
                               FeatureSpec::categorical("c", {"x", "y,z", "w\"q"})};
    FeatureSchema schema(f);
    FeatureMatrix x(200, 3);
    Labels y(200);
    for (Eigen::Index i = 0; i < 200; ++i) {
        x(i, 0) = rng.uniform(-1e6, 1e6);
        x(i, 1) = rng.normal() * 1e-3;
        x(i, 1) = std::clamp(x(i, 1), -1.0, 1.0);
        x(i, 2) = static_cast<double>(rng.below(3));
        y(i) = static_cast<int>(rng.below(2));
    }
    const LabeledDataset d(schema, x, y);
    write_csv(d, dir / "d.csv");
    const auto back = load_csv(dir / "d.csv", schema, "label");
    CHECK(bitwise_equal(back.features(), d.features()));
    CHECK(back.labels() == d.labels());
}

TEST_CASE("schema JSON round trip and continuous-first ordering") {
    std::vector<FeatureSpec> f{FeatureSpec::categorical("c", {"p", "q"}), FeatureSpec::continuous("x", 0, 2)};
    CHECK_THROWS_AS(FeatureSchema{f}, InvalidArgument);
    const auto s = FeatureSchema::continuous_first(f);
    CHECK(s[0].name == "x");
    CHECK(FeatureSchema::from_json(s.to_json()) == s);
}

TEST_CASE("csv records honour quotes") {
    const auto r = parse_csv_record("a,\"b,c\",\"d\"\"e\"");
    REQUIRE(r.size() == 3);
    CHECK(r[1] == "b,c");
    CHECK(r[2] == "d\"e");
}

}
