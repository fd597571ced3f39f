#include "cpicf/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpicf/errors.hpp"

namespace cpicf::search {

namespace {

constexpr double kNoFeasible = std::numeric_limits<double>::infinity();

double effective_rate(double rate, std::size_t genes) {
    return rate > 0 ? rate : 1.0 / static_cast<double>(std::max<std::size_t>(genes, 1));
}

bool degenerate(const Domain& d) { return d.is_categorical() ? d.categories < 2 : !(d.hi > d.lo); }

void mutate_gene(Instance& x, std::size_t j, const Domain& d, double sigma_fraction, Rng& rng,
                 bool must_change) {
    const auto k = static_cast<Eigen::Index>(j);
    if (d.is_categorical()) {
        if (must_change && d.categories > 1) {
            // Uniform over the other categories.
            auto c = static_cast<std::size_t>(rng.below(d.categories - 1));
            if (c >= static_cast<std::size_t>(x(k))) ++c;
            x(k) = static_cast<double>(c);
        } else {
            x(k) = static_cast<double>(rng.below(d.categories));
        }
        return;
    }
    const double sigma = sigma_fraction * (d.hi - d.lo);
    x(k) = std::clamp(x(k) + rng.normal(0.0, sigma), d.lo, d.hi);
}

bool lexicographically_less(const Instance& a, const Instance& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

} // namespace

SearchSpace::SearchSpace(std::vector<Domain> domains) : domains_(std::move(domains)) {
    if (domains_.empty()) throw InvalidArgument("search space has no dimensions");
    for (const auto& d : domains_)
        if (!d.is_categorical() && !(d.lo <= d.hi && std::isfinite(d.lo) && std::isfinite(d.hi)))
            throw InvalidArgument("search space bounds must be finite with lo <= hi");
}

SearchSpace SearchSpace::from_schema(const tabular::FeatureSchema& schema) {
    std::vector<Domain> domains;
    for (const auto& f : schema.features()) {
        if (f.is_continuous())
            domains.push_back({f.lo(), f.hi(), 0});
        else
            domains.push_back({0.0, static_cast<double>(f.cardinality() - 1), f.cardinality()});
    }
    return SearchSpace(std::move(domains));
}

bool SearchSpace::contains(const Eigen::Ref<const Instance>& x) const noexcept {
    if (static_cast<std::size_t>(x.size()) != domains_.size()) return false;
    for (std::size_t j = 0; j < domains_.size(); ++j) {
        const double v = x(static_cast<Eigen::Index>(j));
        const auto& d = domains_[j];
        if (d.is_categorical()) {
            if (v != std::floor(v) || v < 0 || v >= static_cast<double>(d.categories)) return false;
        } else if (!(v >= d.lo && v <= d.hi)) {
            return false;
        }
    }
    return true;
}

Instance SearchSpace::sample(Rng& rng) const {
    Instance x(static_cast<Eigen::Index>(domains_.size()));
    for (std::size_t j = 0; j < domains_.size(); ++j) {
        const auto& d = domains_[j];
        x(static_cast<Eigen::Index>(j)) = d.is_categorical() ? static_cast<double>(rng.below(d.categories))
                                                             : rng.uniform(d.lo, d.hi);
    }
    return x;
}

Instance SearchSpace::clamp(const Eigen::Ref<const Instance>& x) const {
    if (static_cast<std::size_t>(x.size()) != domains_.size())
        throw InvalidArgument("instance width does not match the search space");
    Instance out = x;
    for (std::size_t j = 0; j < domains_.size(); ++j) {
        const auto& d = domains_[j];
        const auto k = static_cast<Eigen::Index>(j);
        if (d.is_categorical())
            out(k) = std::clamp(std::round(out(k)), 0.0, static_cast<double>(d.categories - 1));
        else
            out(k) = std::clamp(out(k), d.lo, d.hi);
    }
    return out;
}

bool SearchSpace::zero_volume() const noexcept {
    return std::all_of(domains_.begin(), domains_.end(), degenerate);
}

std::size_t GaConfig::budget() const noexcept {
    return generations ? population * (1 + *generations) : evaluations;
}

void GaConfig::validate() const {
    if (population < 2) throw InvalidArgument("GA population must be >= 2");
    if (budget() < population) throw InvalidArgument("GA evaluations must be >= population");
    if (!(crossover_rate >= 0 && crossover_rate <= 1)) throw InvalidArgument("crossover_rate must lie in [0,1]");
    if (!(mutation_rate <= 1)) throw InvalidArgument("mutation_rate must be <= 1");
    if (!(sigma_fraction >= 0)) throw InvalidArgument("sigma_fraction must be >= 0");
}

bool better(const EvaluatedCandidate& a, const EvaluatedCandidate& b) {
    if (a.feasible != b.feasible) return a.feasible;
    if (a.objective != b.objective) return a.objective < b.objective;
    return lexicographically_less(a.instance, b.instance);
}

Instance mutate(const Instance& genome, const SearchSpace& space, double rate, double sigma_fraction, Rng& rng,
                bool force_one) {
    Instance x = genome;
    const double r = effective_rate(rate, space.size());
    bool changed = false;
    for (std::size_t j = 0; j < space.size(); ++j) {
        if (!rng.bernoulli(r)) continue;
        mutate_gene(x, j, space[j], sigma_fraction, rng, false);
        changed = changed || x(static_cast<Eigen::Index>(j)) != genome(static_cast<Eigen::Index>(j));
    }
    if (force_one && !changed && !space.zero_volume()) {
        std::vector<std::size_t> movable;
        for (std::size_t j = 0; j < space.size(); ++j)
            if (!degenerate(space[j])) movable.push_back(j);
        const auto j = movable[static_cast<std::size_t>(rng.below(movable.size()))];
        mutate_gene(x, j, space[j], sigma_fraction, rng, true);
    }
    return x;
}

SearchResult minimize(const Objective& objective, const Feasibility& feasible, const SearchSpace& space,
                      const GaConfig& cfg, const Instance& anchor) {
    cfg.validate();
    if (!space.contains(anchor)) throw InvalidArgument("GA anchor lies outside the search space");

    Rng rng(cfg.seed);
    const std::size_t budget = cfg.budget();
    SearchResult result;

    auto evaluate = [&](Instance x) {
        EvaluatedCandidate c{std::move(x), 0.0, false};
        c.objective = objective(c.instance);
        if (std::isnan(c.objective)) throw InvalidArgument("objective returned NaN");
        c.feasible = feasible(c.instance);
        ++result.evaluations;
        return c;
    };
    auto best_feasible = [](const std::vector<EvaluatedCandidate>& pop) {
        return !pop.empty() && pop.front().feasible ? pop.front().objective : kNoFeasible;
    };
    // Selection only ranks infeasible candidates by violation count, which is
    // binary here, so they tie and keep their pool order.
    auto dominates = [](const EvaluatedCandidate& a, const EvaluatedCandidate& b) {
        if (a.feasible != b.feasible) return a.feasible;
        return a.feasible && better(a, b);
    };
    auto survive = [&](std::vector<EvaluatedCandidate>& pool) {
        std::stable_sort(pool.begin(), pool.end(), dominates);
        // Distinct genomes first; duplicates only fill leftover slots.
        std::vector<EvaluatedCandidate> unique, repeats;
        for (auto& c : pool) {
            const bool seen = std::any_of(unique.begin(), unique.end(),
                                          [&](const EvaluatedCandidate& u) { return u.instance == c.instance; });
            (seen ? repeats : unique).push_back(std::move(c));
        }
        for (auto& c : repeats) unique.push_back(std::move(c));
        if (unique.size() > cfg.population) unique.resize(cfg.population);
        pool = std::move(unique);
    };

    std::vector<EvaluatedCandidate> population;
    population.reserve(cfg.population);
    population.push_back(evaluate(anchor));
    while (population.size() < cfg.population) population.push_back(evaluate(space.sample(rng)));
    survive(population);
    result.best_feasible_by_generation.push_back(best_feasible(population));

    auto tournament = [&]() -> const EvaluatedCandidate& {
        const auto& a = population[static_cast<std::size_t>(rng.below(population.size()))];
        const auto& b = population[static_cast<std::size_t>(rng.below(population.size()))];
        return dominates(b, a) ? b : a;
    };

    while (result.evaluations < budget) {
        const std::size_t n_offspring = std::min(cfg.population, budget - result.evaluations);
        std::vector<Instance> children;
        while (children.size() < n_offspring) {
            Instance c1 = tournament().instance;
            Instance c2 = tournament().instance;
            if (rng.bernoulli(cfg.crossover_rate))
                for (Eigen::Index j = 0; j < c1.size(); ++j)
                    if (rng.bernoulli(0.5)) std::swap(c1(j), c2(j));
            children.push_back(mutate(c1, space, cfg.mutation_rate, cfg.sigma_fraction, rng));
            if (children.size() < n_offspring)
                children.push_back(mutate(c2, space, cfg.mutation_rate, cfg.sigma_fraction, rng));
        }
        std::vector<EvaluatedCandidate> pool;
        for (auto& child : children) pool.push_back(evaluate(std::move(child)));
        for (auto& c : population) pool.push_back(std::move(c));
        survive(pool);
        population = std::move(pool);
        result.best_feasible_by_generation.push_back(best_feasible(population));
    }

    result.best = *std::min_element(population.begin(), population.end(), better);
    return result;
}

} // namespace cpicf::search
