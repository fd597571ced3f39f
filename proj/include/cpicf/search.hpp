#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cpicf/rng.hpp"
#include "cpicf/tabular.hpp"

namespace cpicf::search {

struct Domain {
    double lo = 0.0;
    double hi = 0.0;
    // 0 for continuous genes, |S_j| for categorical ones.
    std::size_t categories = 0;

    bool is_categorical() const noexcept { return categories > 0; }
};

class SearchSpace {
public:
    explicit SearchSpace(std::vector<Domain> domains);
    static SearchSpace from_schema(const tabular::FeatureSchema& schema);

    std::size_t size() const noexcept { return domains_.size(); }
    const Domain& operator[](std::size_t j) const { return domains_[j]; }
    bool contains(const Eigen::Ref<const Instance>& x) const noexcept;
    Instance sample(Rng& rng) const;
    /// Nearest point of the space (continuous genes clamped to their bounds).
    Instance clamp(const Eigen::Ref<const Instance>& x) const;
    /// True when every gene has a single admissible value.
    bool zero_volume() const noexcept;

private:
    std::vector<Domain> domains_;
};

struct GaConfig {
    std::size_t population = 20;
    // Total objective evaluations, initial population included.
    std::size_t evaluations = 50;
    // When set, the budget is population * (1 + generations) instead.
    std::optional<std::size_t> generations;
    std::uint64_t seed = 0;
    // Per-gene mutation probability; non-positive means 1/p.
    double mutation_rate = -1.0;
    double crossover_rate = 0.9;
    // Gaussian step for continuous genes, as a fraction of the gene's range.
    double sigma_fraction = 0.1;

    std::size_t budget() const noexcept;
    void validate() const;
};

struct EvaluatedCandidate {
    Instance instance;
    double objective = 0.0;
    bool feasible = false;
};

struct SearchResult {
    EvaluatedCandidate best;
    std::size_t evaluations = 0;
    // Best feasible objective after each generation (initial population first);
    // +infinity until something feasible is seen.
    std::vector<double> best_feasible_by_generation;
};

using Objective = std::function<double(const Instance&)>;
using Feasibility = std::function<bool(const Instance&)>;

/// Strict weak order used everywhere in the search: feasible before
/// infeasible, then lower objective, then lexicographically smaller genome.
bool better(const EvaluatedCandidate& a, const EvaluatedCandidate& b);

/// Each gene mutates with probability `rate`; at least one gene changes when
/// `force_one` is set and the space allows it. Results stay inside the space.
Instance mutate(const Instance& genome, const SearchSpace& space, double rate, double sigma_fraction,
                Rng& rng, bool force_one = false);

/// Generational (mu + lambda) GA with binary tournaments under constrained
/// domination, uniform crossover and per-gene mutation. The anchor seeds the
/// initial population. Stops after cfg.budget() objective evaluations.
SearchResult minimize(const Objective& objective, const Feasibility& feasible, const SearchSpace& space,
                      const GaConfig& cfg, const Instance& anchor);

} // namespace cpicf::search
