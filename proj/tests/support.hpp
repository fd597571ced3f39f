#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include "cpicf/gbt.hpp"
#include "cpicf/rng.hpp"
#include "cpicf/tabular.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cpicf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Single-point prediction without the matrix overload.
inline double predict_at(const cpicf::gbt::GbtModel& m, const Eigen::VectorXd& x) {
    return m.predict(Eigen::Ref<const Eigen::VectorXd>(x));
}

inline cpicf::tabular::FeatureSchema box_schema(std::size_t p, double lo = -1.0, double hi = 1.0) {
    std::vector<cpicf::tabular::FeatureSpec> f;
    for (std::size_t j = 0; j < p; ++j)
        f.push_back(cpicf::tabular::FeatureSpec::continuous("x" + std::to_string(j + 1), lo, hi));
    return cpicf::tabular::FeatureSchema(std::move(f));
}

// Small XOR hypercube with its three splits and an entity classifier.
struct SmallWorld {
    cpicf::tabular::DatasetSplits splits;
    cpicf::gbt::GbtModel entity;
};

inline SmallWorld small_world(std::uint64_t seed = 3, std::size_t n = 1500) {
    cpicf::tabular::HypercubeParams hp;
    hp.n = n;
    hp.class_sep = 2.0;
    hp.minority_fraction = 0.3;
    hp.seed = seed;
    auto data = cpicf::tabular::generate_hypercube(hp);
    auto splits = cpicf::tabular::split(data, {}, cpicf::derive_seed(seed, "split"));
    cpicf::gbt::Hyperparams ehp;
    ehp.n_estimators = 40;
    ehp.max_depth = 4;
    auto entity = cpicf::gbt::fit_classifier(splits.train, ehp, cpicf::derive_seed(seed, "entity"));
    return {std::move(splits), std::move(entity)};
}

} // namespace testing
