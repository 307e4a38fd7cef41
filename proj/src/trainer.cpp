#include "nws/trainer.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace nws {

namespace fs = std::filesystem;

std::optional<StopReason> early_stop_update(EarlyStopState& s, double v, const EarlyStopConfig& cfg) {
    ++s.t;
    if (s.t == 1) {
        s.last = v;
        s.smoothed = v;
    } else {
        s.consecutive_decrease = v < s.last ? s.consecutive_decrease + 1 : 0;
        if (v < s.smoothed) ++s.decrease_vs_smoothed;
        s.consecutive_stationary = std::abs(v - s.last) < cfg.stationary_tol ? s.consecutive_stationary + 1 : 0;
        s.smoothed = cfg.alpha * v + (1.0 - cfg.alpha) * s.smoothed;
        s.last = v;
    }
    if (s.t < cfg.min_epochs) return std::nullopt;
    if (s.consecutive_decrease >= cfg.overfit_run) return StopReason::overfit;
    if (s.decrease_vs_smoothed >= cfg.noisy_total) return StopReason::noisy_decline;
    if (s.consecutive_stationary >= cfg.stationary_run) return StopReason::stationary;
    return std::nullopt;
}

std::vector<int> select_snapshots(int epochs, int count) {
    if (count <= 0) throw Error("select_snapshots: count must be positive");
    if (epochs < count) throw Error(fmt::format("select_snapshots: need at least {} epochs, got {}", count, epochs));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    const auto T = static_cast<long long>(epochs), n = static_cast<long long>(count);
    // round-half-up of i * T / n in integer arithmetic
    for (long long i = 1; i <= n; ++i) out.push_back(static_cast<int>((2 * i * T + n) / (2 * n)));
    return out;
}

double decayed_lr(double lr0, int epoch, double factor) { return lr0 * std::pow(factor, epoch); }

void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& epochs) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << "epoch,lr,train_acc,valid_acc,test_acc,loss\n";
    for (const auto& e : epochs)
        out << fmt::format("{},{:.9g},{:.6f},{:.6f},{:.6f},{:.9g}\n", e.epoch, e.lr, e.train_acc, e.valid_acc, e.test_acc, e.loss);
}

namespace {

Tensor<float> gather(std::span<const float> images, std::span<const std::size_t> idx) {
    Tensor<float> t({idx.size(), kImageSide, kImageSide, kImageChannels});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(idx[i] * kImageSize), kImageSize,
                    t.data.begin() + static_cast<std::ptrdiff_t>(i * kImageSize));
    return t;
}

double accuracy(Network<float>& net, std::span<const float> images, std::span<const int> labels,
                std::span<const std::size_t> idx, std::size_t chunk) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
        const auto pred = argmax_rows(net.forward(gather(images, part), Mode::infer));
        for (std::size_t i = 0; i < part.size(); ++i) correct += pred[i] == labels[part[i]];
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

// Batch boundaries; a trailing single-sample batch is merged into the previous
// one because batchnorm needs at least two samples in train mode.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += size) out.emplace_back(s, std::min(n, s + size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

fs::path snapshot_scratch(const fs::path& run_dir, int epoch) { return run_dir / "epochs" / fmt::format("e_{}.nws", epoch); }

}  // namespace

TrainResult train(const HyperParams& hp, const Dataset& ds, std::uint64_t seed, const TrainCaps& caps, const std::string& id) {
    const auto t0 = std::chrono::steady_clock::now();
    if (hp.dataset != ds.name)
        throw ConfigError(fmt::format("hyper-parameters name dataset '{}' but '{}' was loaded", hp.dataset, ds.name));
    if (caps.max_epochs < 20) throw ConfigError(fmt::format("epoch cap {} is below the 20 retained snapshots", caps.max_epochs));
    if (hp.batch_size < 2) throw ConfigError("batch size must be at least 2");
    for (int l : ds.train_labels)
        if (l < 0 || static_cast<std::size_t>(l) >= ds.num_classes)
            throw ConfigError(fmt::format("label {} outside the {} classes of '{}'", l, ds.num_classes, ds.name));
    for (int l : ds.test_labels)
        if (l < 0 || static_cast<std::size_t>(l) >= ds.num_classes)
            throw ConfigError(fmt::format("test label {} outside the {} classes of '{}'", l, ds.num_classes, ds.name));
    if (ds.train_images.size() != ds.train_size() * kImageSize || ds.test_images.size() != ds.test_size() * kImageSize)
        throw ConfigError(fmt::format("dataset '{}': image and label counts disagree", ds.name));

    TrainResult result;
    RunRecord& rec = result.record;
    rec.id = id;
    rec.hp = hp;
    rec.seed = seed;

    const Rng root(seed);
    const auto spec = build_cnn(hp.arch, static_cast<int>(ds.num_classes), CnnOptions{hp.activation, caps.batchnorm, true});
    auto net = instantiate<float>(spec, hp.initialization, root.substream("init"), root.substream("dropout"));
    result.index = group_index(net.layers());
    rec.arch_hash = spec.hash();
    rec.weight_count = result.index.total();
    rec.conv_end = result.index.conv_end;

    const std::size_t n_train = caps.train_limit > 0 ? std::min(caps.train_limit, ds.train_size()) : ds.train_size();
    Rng split_rng = root.substream("split");
    const auto split = split_validation(n_train, split_rng);
    std::vector<int> pool_labels;
    pool_labels.reserve(split.train.size());
    for (auto i : split.train) pool_labels.push_back(ds.train_labels[i]);
    const bool rebalance = is_imbalanced(pool_labels, ds.num_classes);
    const auto test_idx = iota_indices(ds.test_size());

    Rng order_rng = root.substream("order");
    Rng augment_rng = root.substream("augment");
    OptimizerState<float> opt(hp.optimizer);
    EarlyStopState stop;
    std::vector<std::vector<float>> memory_snaps;
    const bool to_disk = !caps.run_dir.empty();
    if (to_disk) fs::create_directories(caps.run_dir / "epochs");

    auto export_epoch = [&](int epoch) {
        auto wv = vectorize(net.layers());
        if (to_disk) {
            Snapshot s;
            s.arch_hash = rec.arch_hash;
            s.weights = std::move(wv);
            s.meta = Json{{"run", id}, {"epoch", epoch}};
            write_snapshot(snapshot_scratch(caps.run_dir, epoch), s);
        } else {
            memory_snaps.push_back(std::move(wv.theta));
        }
    };

    AugmentConfig aug = caps.augment;
    aug.enabled = hp.augmentation;
    std::optional<StopReason> reason;
    try {
        for (int epoch = 1; epoch <= caps.max_epochs && !reason; ++epoch) {
            const double lr = decayed_lr(hp.learning_rate, epoch - 1);
            std::vector<std::size_t> order;
            if (rebalance) {
                for (auto k : balanced_epoch_indices(pool_labels, ds.num_classes, order_rng)) order.push_back(split.train[k]);
            } else {
                order = split.train;
                order_rng.shuffle(order.begin(), order.end());
            }
            double loss_sum = 0;
            std::size_t correct = 0;
            for (auto [b, e] : batches(order.size(), static_cast<std::size_t>(hp.batch_size))) {
                const std::span<const std::size_t> part(order.data() + b, e - b);
                auto x = gather(ds.train_images, part);
                if (aug.enabled)
                    for (std::size_t i = 0; i < part.size(); ++i) {
                        auto img = augment(ds.train_image(part[i]), aug, augment_rng);
                        std::copy(img.begin(), img.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * kImageSize));
                    }
                std::vector<int> y;
                y.reserve(part.size());
                for (auto i : part) y.push_back(ds.train_labels[i]);
                auto [loss, ok] = net.train_step(x, y, opt, lr);
                if (!std::isfinite(loss)) throw NumericError(fmt::format("non-finite loss in epoch {}", epoch));
                loss_sum += static_cast<double>(loss) * static_cast<double>(part.size());
                correct += ok;
            }
            EpochMetrics m;
            m.epoch = epoch;
            m.lr = lr;
            m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
            m.loss = loss_sum / static_cast<double>(order.size());
            m.valid_acc = accuracy(net, ds.train_images, ds.train_labels, split.validation, caps.eval_chunk);
            if (caps.eval_test_every_epoch || epoch == caps.max_epochs)
                m.test_acc = accuracy(net, ds.test_images, ds.test_labels, test_idx, caps.eval_chunk);
            rec.epochs.push_back(m);
            export_epoch(epoch);
            reason = early_stop_update(stop, m.valid_acc, caps.early_stop);
            if (!reason && epoch == caps.max_epochs) reason = StopReason::epoch_cap;
            if (caps.on_epoch) caps.on_epoch(m);
        }
        if (!caps.eval_test_every_epoch && rec.epochs.back().epoch != caps.max_epochs)
            rec.epochs.back().test_acc = accuracy(net, ds.test_images, ds.test_labels, test_idx, caps.eval_chunk);
        rec.stop_reason = *reason;
    } catch (const NumericError& e) {
        rec.status = "failed";
        rec.failure = e.what();
        rec.stop_reason = StopReason::numeric_failure;
    }

    if (rec.ok()) {
        rec.snapshot_epochs = select_snapshots(rec.final_epoch());
        for (std::size_t k = 0; k < rec.snapshot_epochs.size(); ++k) {
            const int e = rec.snapshot_epochs[k];
            if (to_disk) {
                const auto name = fmt::format("snap_{}.nws", k + 1);
                fs::copy_file(snapshot_scratch(caps.run_dir, e), caps.run_dir / name, fs::copy_options::overwrite_existing);
                rec.snapshot_files.push_back(name);
            } else {
                result.snapshots.push_back(memory_snaps[static_cast<std::size_t>(e - 1)]);
            }
        }
    }
    result.final_weights = vectorize(net.layers()).theta;
    if (to_disk) {
        fs::remove_all(caps.run_dir / "epochs");
        write_metrics_csv(caps.run_dir / "metrics.csv", rec.epochs);
    }
    rec.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (to_disk) write_run_record(caps.run_dir, rec);
    return result;
}

std::pair<HyperParams, std::uint64_t> population_draw(const PopulationConfig& cfg, std::size_t index) {
    const Rng root(cfg.seed);
    Rng hp_rng = root.substream("hp", index);
    auto hp = sample(cfg.schema, hp_rng, cfg.mode);
    const std::uint64_t seed = root.substream("run", index).next_u64();
    return {hp, seed};
}

std::vector<RunRecord> run_population(const PopulationConfig& cfg) {
    const auto runs_dir = cfg.root / "runs";
    const auto manifest = cfg.root / "manifest.jsonl";
    fs::create_directories(runs_dir);

    std::mutex data_mutex;
    std::map<std::string, std::shared_ptr<const Dataset>> cache;
    auto dataset = [&](const std::string& name) {
        std::lock_guard lock(data_mutex);
        auto& slot = cache[name];
        if (!slot) slot = std::make_shared<const Dataset>(load_dataset(name, cfg.data_root / name, cfg.synthetic));
        return slot;
    };

    std::mutex out_mutex;
    std::vector<RunRecord> done;
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= cfg.runs) return;
            const std::size_t index = cfg.first_run + k;
            const auto id = run_id(index);
            const auto run_dir = runs_dir / id;
            if (fs::exists(run_dir / "record.json")) continue;
            try {
                auto [hp, seed] = population_draw(cfg, index);
                TrainCaps caps = cfg.caps;
                caps.run_dir = run_dir;
                auto ds = dataset(hp.dataset);
                auto result = train(hp, *ds, seed, caps, id);
                append_manifest(manifest, result.record);
                std::lock_guard lock(out_mutex);
                if (cfg.verbose)
                    fmt::print(stderr, "{} {} epochs={} stop={} test_acc={:.4f} ({:.1f}s)\n", id, result.record.status,
                               result.record.final_epoch(), to_string(result.record.stop_reason),
                               result.record.final_test_accuracy(), result.record.duration_seconds);
                done.push_back(std::move(result.record));
            } catch (...) {
                std::lock_guard lock(out_mutex);
                if (!first_error) first_error = std::current_exception();
                next = cfg.runs;
                return;
            }
        }
    };
    const std::size_t nthreads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.runs));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);
    rebuild_manifest(cfg.root, manifest);
    std::sort(done.begin(), done.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return done;
}

}  // namespace nws
