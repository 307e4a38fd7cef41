#pragma once

#include "nws/dmc.hpp"
#include "nws/features.hpp"
#include "nws/svm.hpp"
#include "nws/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nws {

// Flat `key = value` settings; `#` starts a comment. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig();  // all defaults
    static RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = ".");
    static RunConfig load(const std::filesystem::path& path);

    // `key=value`, validated like a file entry.
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& str(const std::string& key) const;
    double number(const std::string& key) const;
    long long integer(const std::string& key) const;
    bool boolean(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;
    std::filesystem::path path(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }

    static bool known_key(const std::string& key);

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_ = ".";
};

struct PipelineConfig {
    std::filesystem::path out = "out";
    std::size_t threads = 1;
    bool verbose = false;
    PopulationConfig population;
    bool filter = true;
    ConvergenceThresholds thresholds;
    FeaturizeConfig features;
    std::vector<Field> targets = {Field::initialization};
    std::vector<std::string> classifiers = {"linear"};
    int meta_snapshot = 20;
    double test_fraction = 0.2;
    std::vector<std::uint64_t> meta_seeds = {1};
    SvmConfig svm;
    DmcKind dmc_scope = DmcKind::local;
    std::size_t dmc_subset_size = 5000;
    Domain dmc_domain = Domain::all;
    DmcTrainConfig dmc;
    std::size_t dmc_repeats = 1;
    GroupMask dmc_mask;
    std::size_t map_n_pos = 10;
    double map_min = 0.0;
    double map_max = 1.0;
    std::vector<std::pair<Field, Field>> combos;
    std::size_t pca_k = 10;
    int pca_snapshot = 20;
    Domain pca_domain = Domain::conv_only;

    std::filesystem::path manifest() const { return out / "manifest.jsonl"; }
    std::filesystem::path feature_csv() const;
};

PipelineConfig pipeline_config(const RunConfig& rc);

// Each stage writes under cfg.out and returns one summary line per artifact.
using StageSummary = std::vector<std::string>;
StageSummary stage_sample_train(const PipelineConfig& cfg);
StageSummary stage_featurize(const PipelineConfig& cfg);
StageSummary stage_meta_train(const PipelineConfig& cfg);
StageSummary stage_meta_eval(const PipelineConfig& cfg);
StageSummary stage_map(const PipelineConfig& cfg);
StageSummary stage_regress(const PipelineConfig& cfg);
StageSummary stage_report(const PipelineConfig& cfg);

// Run-level split shared by the feature classifiers: runs are grouped by
// class, downsampled to the smallest class when balancing, and a
// round(fraction * K) share of each class goes to the test side.
struct RunSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};
RunSplit split_runs(const std::map<std::string, int>& run_class, std::size_t classes, double test_fraction, std::uint64_t seed,
                    bool balance = true);

// Feature-classifier experiment on one snapshot position of a feature table.
struct SvmExperiment {
    SvmModel model;
    RunSplit split;
    double train_accuracy = 0;
    double test_accuracy = 0;
    std::size_t test_rows = 0;
};
SvmExperiment run_svm_experiment(const FeatureTable& table, Field target, int snapshot, const SvmConfig& svm, double test_fraction,
                                 std::uint64_t seed);

// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace nws
