#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "cpicf/errors.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::gower {

// Ranges R_j and cardinalities |S_j| frozen from a training schema.
class GowerContext {
public:
    explicit GowerContext(const tabular::FeatureSchema& schema)
        : m_(schema.n_continuous()), p_(schema.size()) {
        ranges_.reserve(m_);
        cardinalities_.reserve(p_ - m_);
        for (std::size_t j = 0; j < p_; ++j) {
            if (schema[j].is_continuous())
                ranges_.push_back(schema[j].range());
            else
                cardinalities_.push_back(static_cast<double>(schema[j].cardinality()));
        }
    }

    std::size_t n_continuous() const noexcept { return m_; }
    std::size_t size() const noexcept { return p_; }
    double range(std::size_t j) const { return ranges_.at(j); }
    double cardinality(std::size_t j) const { return cardinalities_.at(j - m_); }

private:
    std::size_t m_;
    std::size_t p_;
    std::vector<double> ranges_;
    std::vector<double> cardinalities_;
};

/// Weighted Gower distance
///   (1/m) sum_{j<m} |a_j - b_j| / R_j  +  (1/(p-m)) sum_{j>=m} [a_j != b_j] / |S_j|
/// with an empty block contributing 0. A zero-range feature contributes 0 when
/// equal and 1 otherwise; out-of-range values are not clamped.
template <typename DerivedA, typename DerivedB>
double distance(const GowerContext& ctx, const Eigen::MatrixBase<DerivedA>& a,
                const Eigen::MatrixBase<DerivedB>& b) {
    if (static_cast<std::size_t>(a.size()) != ctx.size() || static_cast<std::size_t>(b.size()) != ctx.size())
        throw InvalidArgument("gower distance: instance width does not match the schema");
    const std::size_t m = ctx.n_continuous();
    const std::size_t p = ctx.size();
    double continuous = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        const double diff = std::abs(static_cast<double>(a(k)) - static_cast<double>(b(k)));
        const double r = ctx.range(j);
        continuous += r > 0 ? diff / r : (diff == 0 ? 0.0 : 1.0);
    }
    double categorical = 0.0;
    for (std::size_t j = m; j < p; ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        if (a(k) != b(k)) categorical += 1.0 / ctx.cardinality(j);
    }
    double total = 0.0;
    if (m > 0) total += continuous / static_cast<double>(m);
    if (p > m) total += categorical / static_cast<double>(p - m);
    return total;
}

} // namespace cpicf::gower
