#pragma once

#include "nws/data.hpp"
#include "nws/hp_space.hpp"
#include "nws/run_record.hpp"
#include "nws/store.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

namespace nws {

struct EarlyStopConfig {
    int min_epochs = 20;
    int overfit_run = 5;        // consecutive decreases
    int noisy_total = 30;       // cumulative decreases against the smoothed curve
    int stationary_run = 30;    // consecutive near-equal evaluations
    double stationary_tol = 1e-8;
    double alpha = 0.5;
};

struct EarlyStopState {
    int t = 0;
    double last = 0;
    double smoothed = 0;
    int consecutive_decrease = 0;
    int decrease_vs_smoothed = 0;
    int consecutive_stationary = 0;
};

// Feeds the validation accuracy of epoch t = state.t + 1; returns a stop
// reason once any criterion fires at or after min_epochs.
std::optional<StopReason> early_stop_update(EarlyStopState& state, double v, const EarlyStopConfig& cfg = {});

// round(i * T / 20) for i = 1..20; requires T >= 20.
std::vector<int> select_snapshots(int epochs, int count = 20);

// Learning rate after `epoch` completed epochs.
double decayed_lr(double lr0, int epoch, double factor = 0.96);

struct TrainCaps {
    int max_epochs = 200;
    bool batchnorm = true;
    bool eval_test_every_epoch = true;
    // Use only the first n training images (0 = all).
    std::size_t train_limit = 0;
    std::size_t eval_chunk = 256;
    EarlyStopConfig early_stop;
    AugmentConfig augment;
    // Run directory for snapshots and metrics; empty keeps everything in memory.
    std::filesystem::path run_dir;
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    RunRecord record;
    GroupIndex index;
    // The 20 retained weight vectors when no run directory is given.
    std::vector<std::vector<float>> snapshots;
    std::vector<float> final_weights;
};

TrainResult train(const HyperParams& hp, const Dataset& ds, std::uint64_t seed, const TrainCaps& caps = {},
                  const std::string& id = "r000000");

struct PopulationConfig {
    std::size_t runs = 10;
    std::size_t first_run = 0;
    std::uint64_t seed = 1;
    SamplingMode mode = SamplingMode::fixed_arch;
    HyperParamSchema schema;
    TrainCaps caps;
    std::filesystem::path root = "zoo";
    std::filesystem::path data_root = "data";
    SyntheticConfig synthetic;
    std::size_t threads = 1;
    bool verbose = false;
};

// Draws hyper-parameters and trains runs [first_run, first_run + runs) in
// parallel, skipping runs that already have a record. Writes
// root/runs/<id>/ and root/manifest.jsonl; returns the new records.
std::vector<RunRecord> run_population(const PopulationConfig& cfg);

// (hp, seed) of run `index` in a population; independent of thread count.
std::pair<HyperParams, std::uint64_t> population_draw(const PopulationConfig& cfg, std::size_t index);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& epochs);

}  // namespace nws
