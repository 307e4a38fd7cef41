#pragma once

#include "nws/arch.hpp"
#include "nws/hp_space.hpp"
#include "nws/network.hpp"
#include "nws/run_record.hpp"
#include "nws/store.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nws {

struct DmcVector {
    std::string run_id;
    int snapshot = 0;  // 1..20
    int target = 0;    // index into DmcCorpus::classes
    std::filesystem::path file;
};

struct CorpusConfig {
    Field target = Field::initialization;
    DmcKind scope = DmcKind::local;
    Domain domain = Domain::all;
    // Snapshot positions to use; empty selects the last 4 (global) or last 2 (local).
    std::vector<int> snapshots;
    std::size_t subset_size = 5000;  // local only
    double test_fraction = 0.2;
    bool balance = true;
    std::uint64_t seed = 0;
    // Class order; empty uses the present labels in schema order.
    std::vector<std::string> classes;
};

struct DmcCorpus {
    DmcKind scope = DmcKind::local;
    Field target = Field::initialization;
    Domain domain = Domain::all;
    std::size_t input_len = 0;  // S for local, domain length for global
    std::vector<std::string> classes;
    std::vector<DmcVector> train;
    std::vector<DmcVector> test;
    std::size_t skipped = 0;  // vectors whose domain is shorter than S
};

std::vector<int> default_snapshots(DmcKind scope);
DmcCorpus build_corpus(const std::filesystem::path& root, const std::vector<RunRecord>& records, const CorpusConfig& cfg);

// Removes batchnorm and/or bias groups; offsets and conv_end are recomputed.
struct GroupMask {
    bool bn = false;
    bool bias = false;
    bool empty() const { return !bn && !bias; }
};
GroupMask parse_group_mask(std::string_view s);  // "", "bn", "bias", "bn+bias"
std::string to_string(GroupMask m);
WeightVector strip_groups(const WeightVector& wv, GroupMask mask);

struct DmcTrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr0 = 1e-3;
    double decay = 0.95;
    std::size_t decays = 50;
    std::uint64_t seed = 0;
    // Re-estimate batchnorm running statistics on the training corpus after
    // the last epoch.
    bool recalibrate_bn = true;
    bool verbose = false;
};

// Rate in force after `completed` epochs of an `epochs`-epoch budget;
// decays are spread evenly, so dmc_lr(cfg, cfg.epochs) = lr0 * decay^decays.
double dmc_lr(const DmcTrainConfig& cfg, std::size_t completed);

struct DmcEpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    double loss = 0;
    double train_acc = 0;
};

struct DmcModel {
    DmcKind scope = DmcKind::local;
    Field target = Field::initialization;
    Domain domain = Domain::all;
    std::size_t input_len = 0;
    std::vector<std::string> classes;
    ArchSpec spec;
    Network<float> net;
    DmcTrainConfig config;
    std::vector<DmcEpochLog> curve;
};

DmcModel make_dmc(DmcKind scope, Field target, Domain domain, std::size_t input_len,
                  const std::vector<std::string>& classes, std::uint64_t seed);
DmcModel train_dmc(const DmcCorpus& corpus, const DmcTrainConfig& cfg);

struct EvalConfig {
    std::size_t repeats = 1;  // local: random starts per vector, majority vote
    GroupMask mask;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct EvalResult {
    double accuracy = 0;
    std::size_t count = 0;
    std::size_t skipped = 0;
    std::vector<int> predictions;  // per evaluated vector, -1 when skipped
};

EvalResult evaluate(const DmcModel& model, const std::vector<DmcVector>& vectors, const EvalConfig& cfg = {});

struct PerformanceMap {
    std::size_t n_pos = 0;
    std::vector<std::vector<double>> accuracy;    // [snapshot j-1][position bin]
    std::vector<std::vector<std::size_t>> count;  // same shape
};

std::vector<std::size_t> map_starts(std::size_t domain_len, std::size_t subset_size, std::size_t n_pos);
PerformanceMap performance_map(const DmcModel& model, const std::vector<DmcVector>& vectors, std::size_t n_pos,
                               GroupMask mask = {}, std::size_t threads = 1);

void write_map_csv(const std::filesystem::path& path, const PerformanceMap& m);
void write_map_counts_csv(const std::filesystem::path& path, const PerformanceMap& m);
PerformanceMap read_map_csv(const std::filesystem::path& path);

void save_dmc(const std::filesystem::path& path, const DmcModel& m);
DmcModel load_dmc(const std::filesystem::path& path);

}  // namespace nws
