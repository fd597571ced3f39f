// Experiment driver: gen-data, train, width-map, cpicf, delta, augment.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cpicf/errors.hpp"
#include "cpicf/experiment.hpp"

namespace ex = cpicf::experiment;

int main(int argc, char** argv) {
    CLI::App app{"Conformal prediction interval counterfactuals: experiment driver"};
    app.require_subcommand(1, 1);

    std::string config_path;
    ex::RunOptions opts;
    std::size_t query_row = 0;

    app.add_option("--config", config_path, "JSON config merged over the profile");
    app.add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
    app.add_flag("--overwrite", opts.overwrite, "Replace existing output files");
    app.add_option("--profile", opts.profile, "Base profile")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    app.add_option("--threads", opts.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "Write the dataset, schema and split indices");
    auto* train = app.add_subcommand("train", "Train the entity classifier and report test metrics");
    auto* width = app.add_subcommand("width-map", "Interval widths and set sizes over a 2-D grid");
    auto* cpicf = app.add_subcommand("cpicf", "Generate counterfactuals for test queries");
    auto* query_opt = cpicf->add_option("--query", query_row, "Test-split row to explain");
    auto* delta = app.add_subcommand("delta", "Local prediction-improvement experiment");
    auto* augment = app.add_subcommand("augment", "Data-augmentation benchmark");
    for (auto* sub : {gen, train, width, cpicf, delta, augment}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ex::kExitConfig;
    }
    if (*query_opt) opts.query_row = query_row;

    try {
        const auto cfg = ex::load_config(
            opts.profile, config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path));
        if (gen->parsed()) return ex::cmd_gen_data(cfg, opts);
        if (train->parsed()) return ex::cmd_train(cfg, opts);
        if (width->parsed()) return ex::cmd_width_map(cfg, opts);
        if (cpicf->parsed()) return ex::cmd_cpicf(cfg, opts);
        if (delta->parsed()) return ex::cmd_delta(cfg, opts);
        if (augment->parsed()) return ex::cmd_augment(cfg, opts);
    } catch (const cpicf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ex::kExitConfig;
    } catch (const cpicf::InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ex::kExitConfig;
    } catch (const cpicf::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return ex::kExitData;
    } catch (const cpicf::UndefinedMetric& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return ex::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return ex::kExitConfig;
}
