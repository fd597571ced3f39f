#include <doctest.h>

#include <cmath>

#include "cpicf/gower.hpp"
#include "cpicf/rng.hpp"
#include "support.hpp"

using namespace cpicf;
using namespace cpicf::tabular;
using cpicf::gower::GowerContext;
using cpicf::gower::distance;

namespace {

FeatureSchema mixed() {
    return FeatureSchema({FeatureSpec::continuous("a", 0, 10), FeatureSpec::continuous("b", -1, 1),
                          FeatureSpec::categorical("c", {"p", "q"}),
                          FeatureSpec::categorical("d", {"r", "s", "t", "u", "v"})});
}

Instance random_instance(const FeatureSchema& s, Rng& rng) {
    Instance x(static_cast<Eigen::Index>(s.size()));
    for (std::size_t j = 0; j < s.size(); ++j)
        x(static_cast<Eigen::Index>(j)) = s[j].is_continuous() ? rng.uniform(s[j].lo(), s[j].hi())
                                                               : static_cast<double>(rng.below(s[j].cardinality()));
    return x;
}

} // namespace

TEST_SUITE("gower") {

TEST_CASE("hand-evaluated distances") {
    const GowerContext unit(testing::box_schema(2, 0, 1));
    Instance a(2), b(2);
    a << 0.0, 0.0;
    b << 0.5, 0.25;
    CHECK(distance(unit, a, b) == 0.375);
    CHECK(distance(unit, a, a) == 0.0);

    const GowerContext cat(FeatureSchema({FeatureSpec::categorical("c", {"w", "x", "y", "z"})}));
    Instance u(1), v(1);
    u << 0;
    v << 3;
    CHECK(distance(cat, u, v) == 0.25);
}

TEST_CASE("zero-range features and out-of-range values") {
    const GowerContext ctx(FeatureSchema({FeatureSpec::continuous("k", 2, 2), FeatureSpec::continuous("x", 0, 1)}));
    Instance a(2), b(2);
    a << 2, 0;
    b << 2, 3;
    CHECK(distance(ctx, a, b) == 1.5); // (0 + 3) / 2, not clamped
    b << 2.5, 0;
    CHECK(distance(ctx, a, b) == 0.5);
}

TEST_CASE("width mismatch throws") {
    const GowerContext ctx(testing::box_schema(2));
    CHECK_THROWS_AS(distance(ctx, Instance::Zero(2), Instance::Zero(3)), InvalidArgument);
}

TEST_CASE("property: metric laws over 10^4 random pairs") {
    const auto schema = mixed();
    const GowerContext ctx(schema);
    Rng rng(41);
    for (int i = 0; i < 10000; ++i) {
        const auto x = random_instance(schema, rng);
        const auto y = random_instance(schema, rng);
        const double d = distance(ctx, x, y);
        CHECK(d == distance(ctx, y, x));
        CHECK(d >= 0.0);
        CHECK(distance(ctx, x, x) == 0.0);
        // continuous block <= 1 inside the box, categorical block <= max 1/|S_j|
        CHECK(d <= 1.0 + 0.5);
    }
}

TEST_CASE("property: all-continuous distance is range-scaled mean L1") {
    const auto schema = FeatureSchema({FeatureSpec::continuous("a", 0, 4), FeatureSpec::continuous("b", -2, 0),
                                       FeatureSpec::continuous("c", 0, 0.5)});
    const GowerContext ctx(schema);
    Rng rng(42);
    for (int i = 0; i < 10000; ++i) {
        const auto x = random_instance(schema, rng);
        const auto y = random_instance(schema, rng);
        const double l1 = std::abs(x(0) - y(0)) / 4 + std::abs(x(1) - y(1)) / 2 + std::abs(x(2) - y(2)) / 0.5;
        CHECK(distance(ctx, x, y) == doctest::Approx(l1 / 3).epsilon(1e-14));
        CHECK(distance(ctx, x, y) <= 1.0);
    }
}

TEST_CASE("property: larger categories are cheaper to change") {
    const auto schema = mixed();
    const GowerContext ctx(schema);
    Rng rng(43);
    for (int i = 0; i < 1000; ++i) {
        const auto x = random_instance(schema, rng);
        auto flip_c = x, flip_d = x;
        flip_c(2) = 1 - x(2);
        flip_d(3) = std::fmod(x(3) + 1, 5);
        CHECK(distance(ctx, x, flip_d) < distance(ctx, x, flip_c));
        CHECK(distance(ctx, x, flip_c) == doctest::Approx(0.5 / 2));
        CHECK(distance(ctx, x, flip_d) == doctest::Approx(0.2 / 2));
    }
}

TEST_CASE("empty blocks contribute nothing") {
    const GowerContext cats(FeatureSchema({FeatureSpec::categorical("c", {"a", "b"}), FeatureSpec::categorical("d", {"a", "b"})}));
    Instance x(2), y(2);
    x << 0, 0;
    y << 1, 1;
    CHECK(distance(cats, x, y) == 0.5);
    CHECK(cats.n_continuous() == 0);
}

}
