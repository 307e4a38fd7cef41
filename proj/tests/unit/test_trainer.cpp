#include "nws/error.hpp"
#include "nws/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace nws;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("nws_test_trainer_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Straight simulation of the three stopping rules, written from the rule text.
std::pair<int, std::string> oracle_stop(const std::vector<double>& v) {
    int dec_run = 0, dec_total = 0, flat_run = 0;
    double smooth = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) {
        const int t = static_cast<int>(i) + 1;
        dec_run = v[i] < v[i - 1] ? dec_run + 1 : 0;
        dec_total += v[i] < smooth;
        flat_run = std::abs(v[i] - v[i - 1]) < 1e-8 ? flat_run + 1 : 0;
        smooth = 0.5 * v[i] + 0.5 * smooth;
        if (t >= 20) {
            if (dec_run >= 5) return {t, "overfit"};
            if (dec_total >= 30) return {t, "noisy-decline"};
            if (flat_run >= 30) return {t, "stationary"};
        }
    }
    return {0, ""};
}

std::pair<int, std::string> replay(const std::vector<double>& v) {
    EarlyStopState s;
    for (double x : v)
        if (auto r = early_stop_update(s, x)) return {s.t, std::string(to_string(*r))};
    return {0, ""};
}

HyperParams smoke_hp() {
    HyperParams hp;
    hp.dataset = "synthetic";
    hp.learning_rate = 2e-3;
    hp.batch_size = 32;
    hp.optimizer = OptimizerKind::adam;
    hp.activation = Activation::relu;
    hp.initialization = InitScheme::glorot_normal;
    hp.arch = {3, 3, 3, 16, 64};
    hp.mode = SamplingMode::fixed_arch;
    return hp;
}

Dataset smoke_data() { return make_synthetic({.train_size = 220, .test_size = 60, .num_classes = 4, .noise = 0.05, .seed = 3}); }

}  // namespace

TEST(LearningRate, DecayClosedForm) {
    EXPECT_NEAR(decayed_lr(0.001, 10), 6.64833e-4, 1e-9);
    EXPECT_DOUBLE_EQ(decayed_lr(0.001, 0), 0.001);
}

TEST(EarlyStop, IncreasingNeverStops) {
    EarlyStopState s;
    for (int t = 1; t <= 1000; ++t) EXPECT_FALSE(early_stop_update(s, t / 1000.0).has_value());
}

TEST(EarlyStop, RiseThenFallIsOverfit) {
    std::vector<double> v;
    for (int t = 1; t <= 25; ++t) v.push_back(0.5 + 0.01 * t);
    for (int t = 1; t <= 20; ++t) v.push_back(0.75 - 0.01 * t);
    auto [t, r] = replay(v);
    EXPECT_EQ(t, 30);
    EXPECT_EQ(r, "overfit");
}

TEST(EarlyStop, ConstantIsStationaryAt31) {
    auto [t, r] = replay(std::vector<double>(100, 0.6));
    EXPECT_EQ(t, 31);
    EXPECT_EQ(r, "stationary");
}

TEST(EarlyStop, NoFireBeforeMinimum) {
    // five decreases inside the first 20 epochs do not stop; they carry over
    std::vector<double> v{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};
    for (int t = 8; t <= 20; ++t) v.push_back(0.3 + 0.01 * t);
    auto [t, r] = replay(v);
    EXPECT_EQ(t, 0);
}

TEST(EarlyStop, NoisyDecline) {
    // sawtooth: every other step dips below the smoothed value but never five in a row
    std::vector<double> v;
    for (int t = 0; t < 200; ++t) v.push_back(t % 2 ? 0.5 : 0.6);
    auto [t, r] = replay(v);
    EXPECT_EQ(r, "noisy-decline");
    EXPECT_EQ(std::make_pair(t, r), oracle_stop(v));
}

TEST(EarlyStop, MatchesOracleOnRandomSequences) {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> v;
        double x = rng.uniform();
        const int levels = 1 + static_cast<int>(rng.below(20));
        for (int t = 0; t < 150; ++t) {
            if (rng.uniform() < 0.7) x = std::floor(rng.uniform() * levels) / levels;
            v.push_back(x);
        }
        EXPECT_EQ(replay(v), oracle_stop(v)) << trial;
    }
}

TEST(Snapshots, Schedules) {
    std::vector<int> ident(20);
    std::iota(ident.begin(), ident.end(), 1);
    EXPECT_EQ(select_snapshots(20), ident);
    auto s40 = select_snapshots(40);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(s40[i], 2 * (i + 1));
    auto s23 = select_snapshots(23);
    EXPECT_EQ(s23.back(), 23);
    for (std::size_t i = 1; i < 20; ++i) EXPECT_LT(s23[i - 1], s23[i]);
    for (int T = 20; T <= 400; ++T) {
        auto s = select_snapshots(T);
        ASSERT_EQ(s.size(), 20u);
        EXPECT_EQ(s.back(), T);
        for (int i = 1; i <= 20; ++i) EXPECT_EQ(s[i - 1], static_cast<int>(std::floor(i * T / 20.0 + 0.5)));
    }
    EXPECT_THROW(select_snapshots(19), Error);
}

TEST(Train, RejectsMismatchedDataset) {
    auto hp = smoke_hp();
    hp.dataset = "mnist";
    EXPECT_THROW(train(hp, smoke_data(), 1), ConfigError);
    TrainCaps caps;
    caps.max_epochs = 10;
    EXPECT_THROW(train(smoke_hp(), smoke_data(), 1, caps), ConfigError);
}

TEST(Train, SmokeLearnsSeparableBlobs) {
    TrainCaps caps;
    caps.max_epochs = 20;
    auto res = train(smoke_hp(), smoke_data(), 5, caps);
    const auto& r = res.record;
    ASSERT_TRUE(r.ok()) << r.failure;
    EXPECT_EQ(r.final_epoch(), 20);
    EXPECT_GT(r.epochs.back().train_acc, 0.95);
    EXPECT_EQ(res.snapshots.size(), 20u);
    EXPECT_EQ(res.snapshots.back(), res.final_weights);
    EXPECT_EQ(res.final_weights.size(), count_weights(build_cnn(smoke_hp().arch, 4)).total);
    for (std::size_t e = 0; e < r.epochs.size(); ++e) {
        EXPECT_EQ(r.epochs[e].epoch, static_cast<int>(e) + 1);
        EXPECT_NEAR(r.epochs[e].lr, decayed_lr(2e-3, static_cast<int>(e)), 1e-15);
    }
}

TEST(Train, DeterministicWeights) {
    TrainCaps caps;
    caps.max_epochs = 20;
    auto hp = smoke_hp();
    hp.augmentation = true;
    hp.optimizer = OptimizerKind::momentum;
    hp.learning_rate = 1e-3;
    auto ds = smoke_data();
    ds.train_images.resize(100 * kImageSize);
    ds.train_labels.resize(100);
    auto a = train(hp, ds, 9, caps);
    auto b = train(hp, ds, 9, caps);
    EXPECT_EQ(a.final_weights, b.final_weights);
    EXPECT_EQ(a.record.epochs, b.record.epochs);
    auto c = train(hp, ds, 10, caps);
    EXPECT_NE(a.final_weights, c.final_weights);
}

TEST(Train, ImbalancedDataTrainsOnBalancedEpochs) {
    auto ds = smoke_data();
    // drop most of class 0
    Dataset skew = ds;
    skew.train_images.clear();
    skew.train_labels.clear();
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < ds.train_size(); ++i) {
        if (ds.train_labels[i] == 0 && ++zeros > 20) continue;
        skew.train_labels.push_back(ds.train_labels[i]);
        auto img = ds.train_image(i);
        skew.train_images.insert(skew.train_images.end(), img.begin(), img.end());
    }
    TrainCaps caps;
    caps.max_epochs = 20;
    auto res = train(smoke_hp(), skew, 2, caps);
    ASSERT_TRUE(res.record.ok());
    EXPECT_GT(res.record.epochs.back().valid_acc, 0.5);
}

TEST(Train, WritesRunDirectory) {
    auto dir = scratch("rundir");
    TrainCaps caps;
    caps.max_epochs = 20;
    caps.run_dir = dir / "runs" / "r000003";
    auto ds = smoke_data();
    ds.train_images.resize(60 * kImageSize);
    ds.train_labels.resize(60);
    auto res = train(smoke_hp(), ds, 4, caps, "r000003");
    ASSERT_TRUE(res.record.ok());
    EXPECT_TRUE(res.snapshots.empty());
    EXPECT_FALSE(fs::exists(caps.run_dir / "epochs"));
    ASSERT_EQ(res.record.snapshot_files.size(), 20u);
    auto last = read_snapshot(caps.run_dir / "snap_20.nws");
    EXPECT_EQ(last.weights.theta, res.final_weights);
    EXPECT_EQ(last.meta["epoch"], 20);
    EXPECT_EQ(last.arch_hash, res.record.arch_hash);
    auto back = read_run_record(caps.run_dir);
    EXPECT_EQ(to_json(back).dump(), to_json(res.record).dump());
    std::ifstream csv(caps.run_dir / "metrics.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "epoch,lr,train_acc,valid_acc,test_acc,loss");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    EXPECT_EQ(rows, 20);
}

TEST(Train, ReplayReproducesStop) {
    TrainCaps caps;
    caps.max_epochs = 60;
    auto ds = smoke_data();
    ds.train_images.resize(60 * kImageSize);
    ds.train_labels.resize(60);
    auto res = train(smoke_hp(), ds, 6, caps);
    std::vector<double> v;
    for (const auto& e : res.record.epochs) v.push_back(e.valid_acc);
    auto [t, reason] = replay(v);
    if (res.record.stop_reason == StopReason::epoch_cap) {
        EXPECT_EQ(t, 0);
        EXPECT_EQ(res.record.final_epoch(), 60);
    } else {
        EXPECT_EQ(t, res.record.final_epoch());
        EXPECT_EQ(reason, to_string(res.record.stop_reason));
    }
}

TEST(Train, ConstantInitSigmoidWithoutBatchnormIsAnOutcome) {
    auto hp = smoke_hp();
    hp.activation = Activation::sigmoid;
    hp.initialization = InitScheme::constant;
    TrainCaps caps;
    caps.max_epochs = 20;
    caps.batchnorm = false;
    auto ds = smoke_data();
    ds.train_images.resize(60 * kImageSize);
    ds.train_labels.resize(60);
    EXPECT_NO_THROW(train(hp, ds, 1, caps));
}

TEST(Population, DrawsAreIndependentOfThreads) {
    auto dir = scratch("pop");
    PopulationConfig cfg;
    cfg.runs = 3;
    cfg.root = dir / "a";
    cfg.schema.dataset_override = "synthetic";
    cfg.synthetic = {.train_size = 60, .test_size = 20, .num_classes = 4, .noise = 0.05, .seed = 3};
    cfg.schema.restrict(Field::batch_size, {"32"});
    cfg.caps.max_epochs = 20;
    auto a = run_population(cfg);
    ASSERT_EQ(a.size(), 3u);
    EXPECT_EQ(read_manifest(cfg.root / "manifest.jsonl").size(), 3u);
    for (const auto& r : a) EXPECT_EQ(r.hp.arch, kFixedArch);

    cfg.root = dir / "b";
    cfg.threads = 2;
    auto b = run_population(cfg);
    ASSERT_EQ(b.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(to_json(a[i]).dump(), to_json(b[i]).dump());
    // resuming skips completed runs
    EXPECT_TRUE(run_population(cfg).empty());
    cfg.runs = 4;
    EXPECT_EQ(run_population(cfg).size(), 1u);
    EXPECT_EQ(read_manifest(cfg.root / "manifest.jsonl").size(), 4u);
}
