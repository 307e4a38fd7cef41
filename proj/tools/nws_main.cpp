#include "nws/error.hpp"
#include "nws/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <functional>
#include <iostream>

namespace {

using Stage = std::function<nws::StageSummary(const nws::PipelineConfig&)>;

int run(int argc, char** argv) {
    CLI::App app{"Neural weight space laboratory: train model populations and meta-classify their weights"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    const std::vector<std::pair<std::string, Stage>> stages = {
        {"sample-train", nws::stage_sample_train}, {"featurize", nws::stage_featurize}, {"meta-train", nws::stage_meta_train},
        {"meta-eval", nws::stage_meta_eval},       {"map", nws::stage_map},             {"regress", nws::stage_regress},
        {"report", nws::stage_report},
    };
    const std::vector<std::string> help = {
        "Sample hyper-parameters and train a model population",
        "Compute statistical feature tables from snapshots",
        "Train meta-classifiers (linear/rbf/logistic SVM, DMC)",
        "Evaluate trained meta-classifiers on held-out runs",
        "Compute DMC performance maps and heatmaps",
        "Accuracy regression, combination tables and PCA",
        "Summarize the population and meta results as CSV",
    };
    std::vector<CLI::App*> subs;
    auto add_common = [&](CLI::App* s) {
        s->add_option("-c,--config", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
        s->add_option("-s,--set", overrides, "Override a config entry, key=value (repeatable)");
    };
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto* s = app.add_subcommand(stages[i].first, help[i]);
        add_common(s);
        subs.push_back(s);
    }
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
    add_common(pipeline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        app.exit(e, std::cerr, std::cerr);
        return 2;
    }

    nws::PipelineConfig cfg;
    try {
        auto rc = config_path.empty() ? nws::RunConfig() : nws::RunConfig::load(config_path);
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw nws::ConfigError(fmt::format("--set expects key=value, got '{}'", o));
            rc.set(o.substr(0, eq), o.substr(eq + 1));
        }
        cfg = nws::pipeline_config(rc);
    } catch (const nws::ConfigError& e) {
        fmt::print(stderr, "nws: config error: {}\n", e.what());
        return 2;
    } catch (const nws::Error& e) {
        fmt::print(stderr, "nws: {}\n", e.what());
        return 1;
    }

    std::vector<const Stage*> todo;
    for (std::size_t i = 0; i < stages.size(); ++i)
        if (subs[i]->parsed() || pipeline->parsed()) todo.push_back(&stages[i].second);
    try {
        for (const auto* stage : todo)
            for (const auto& line : (*stage)(cfg)) fmt::print("{}\n", line);
    } catch (const nws::ConfigError& e) {
        fmt::print(stderr, "nws: config error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "nws: {}\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
