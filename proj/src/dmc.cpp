#include "nws/dmc.hpp"

#include "nws/csv.hpp"
#include "nws/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace nws {

std::vector<int> default_snapshots(DmcKind scope) {
    return scope == DmcKind::global ? std::vector<int>{17, 18, 19, 20} : std::vector<int>{19, 20};
}

namespace {

std::vector<std::string> ordered_classes(Field f, const std::set<std::string>& present) {
    std::vector<std::string> out;
    for (const auto& l : field_labels(f))
        if (present.count(l)) out.push_back(l);
    for (const auto& l : present)
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
}

// Domain slice of a snapshot after group masking.
std::vector<float> load_domain(const std::filesystem::path& file, Domain domain, GroupMask mask) {
    auto wv = read_snapshot(file).weights;
    if (!mask.empty()) wv = strip_groups(wv, mask);
    const auto r = domain_range(wv.index, domain);
    if (r.size() == 0) throw Error(fmt::format("'{}': group mask {} empties the {} domain", file.string(), to_string(mask), to_string(domain)));
    return {wv.theta.begin() + static_cast<std::ptrdiff_t>(r.begin), wv.theta.begin() + static_cast<std::ptrdiff_t>(r.end)};
}

std::size_t domain_length(const std::filesystem::path& file, Domain domain) {
    return domain_range(read_snapshot_header(file).index, domain).size();
}

}  // namespace

DmcCorpus build_corpus(const std::filesystem::path& root, const std::vector<RunRecord>& records, const CorpusConfig& cfg) {
    if (cfg.test_fraction < 0 || cfg.test_fraction >= 1) throw ConfigError("test_fraction must be in [0, 1)");
    const auto snaps = cfg.snapshots.empty() ? default_snapshots(cfg.scope) : cfg.snapshots;
    for (int j : snaps)
        if (j < 1 || j > 20) throw ConfigError(fmt::format("snapshot position {} outside 1..20", j));
    if (cfg.scope == DmcKind::local && cfg.subset_size == 0) throw ConfigError("subset_size must be positive");

    std::vector<const RunRecord*> runs;
    std::set<std::string> present;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        if (r.snapshot_files.size() != 20)
            throw FormatError(fmt::format("run {} has {} snapshots, expected 20", r.id, r.snapshot_files.size()));
        runs.push_back(&r);
        present.insert(category_label(r.hp, cfg.target));
    }
    DmcCorpus c;
    c.scope = cfg.scope;
    c.target = cfg.target;
    c.domain = cfg.domain;
    if (cfg.classes.empty()) {
        c.classes = ordered_classes(cfg.target, present);
    } else {
        c.classes = cfg.classes;
        for (const auto& l : c.classes)
            if (!present.count(l)) throw Error(fmt::format("{}: class '{}' is absent from the records", field_name(cfg.target), l));
    }
    if (c.classes.size() < 2) throw Error(fmt::format("{}: need at least 2 classes, found {}", field_name(cfg.target), c.classes.size()));
    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < c.classes.size(); ++i) class_index[c.classes[i]] = static_cast<int>(i);

    // split by run, stratified by class
    const Rng rng(cfg.seed);
    std::vector<std::vector<const RunRecord*>> by_class(c.classes.size());
    for (const auto* r : runs) {
        auto it = class_index.find(category_label(r->hp, cfg.target));
        if (it != class_index.end()) by_class[static_cast<std::size_t>(it->second)].push_back(r);
    }
    std::set<std::string> test_runs;
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto& v = by_class[k];
        std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->id < b->id; });
        Rng split = rng.substream("split", k);
        split.shuffle(v.begin(), v.end());
        std::size_t n_test = 0;
        if (cfg.test_fraction > 0 && v.size() >= 2)
            n_test = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(v.size()))), 1, v.size() - 1);
        for (std::size_t i = 0; i < n_test; ++i) test_runs.insert(v[i]->id);
    }

    std::size_t global_len = 0;
    for (const auto& group : by_class)
        for (const auto* r : group) {
            const int target = class_index.at(category_label(r->hp, cfg.target));
            for (int j : snaps) {
                const auto file = root / "runs" / r->id / r->snapshot_files[static_cast<std::size_t>(j - 1)];
                const std::size_t len = domain_length(file, cfg.domain);
                if (cfg.scope == DmcKind::local) {
                    if (len < cfg.subset_size) {
                        ++c.skipped;
                        continue;
                    }
                } else if (global_len == 0) {
                    global_len = len;
                } else if (len != global_len) {
                    throw ConfigError(fmt::format("global scope needs equal-length vectors: run {} has {} weights in domain, others {}", r->id,
                                                  len, global_len));
                }
                (test_runs.count(r->id) ? c.test : c.train).push_back({r->id, j, target, file});
            }
        }
    c.input_len = cfg.scope == DmcKind::local ? cfg.subset_size : global_len;

    auto order = [](const DmcVector& a, const DmcVector& b) { return std::tie(a.run_id, a.snapshot) < std::tie(b.run_id, b.snapshot); };
    // balance by whole runs so every kept run contributes all its snapshots
    auto balance = [&](std::vector<DmcVector>& split, std::uint64_t tag) {
        std::sort(split.begin(), split.end(), order);
        if (!cfg.balance || split.empty()) return;
        std::vector<std::vector<std::string>> per(c.classes.size());
        for (const auto& v : split) {
            auto& p = per[static_cast<std::size_t>(v.target)];
            if (p.empty() || p.back() != v.run_id) p.push_back(v.run_id);
        }
        std::size_t K = split.size();
        for (const auto& p : per) K = std::min(K, p.size());
        std::set<std::string> keep;
        for (std::size_t k = 0; k < per.size(); ++k) {
            Rng b = rng.substream("balance", tag * 1000 + k);
            b.shuffle(per[k].begin(), per[k].end());
            keep.insert(per[k].begin(), per[k].begin() + static_cast<std::ptrdiff_t>(K));
        }
        std::erase_if(split, [&](const DmcVector& v) { return !keep.count(v.run_id); });
    };
    balance(c.train, 0);
    balance(c.test, 1);
    return c;
}

GroupMask parse_group_mask(std::string_view s) {
    GroupMask m;
    if (s.empty() || s == "none") return m;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto next = std::min(s.find('+', pos), s.size());
        const auto part = s.substr(pos, next - pos);
        if (part == "bn")
            m.bn = true;
        else if (part == "bias")
            m.bias = true;
        else
            throw ConfigError(fmt::format("unknown group mask '{}' (bn, bias, bn+bias)", s));
        pos = next + 1;
    }
    return m;
}

std::string to_string(GroupMask m) {
    if (m.bn && m.bias) return "bn+bias";
    if (m.bn) return "bn";
    if (m.bias) return "bias";
    return "none";
}

WeightVector strip_groups(const WeightVector& wv, GroupMask mask) {
    auto dropped = [&](GroupKind k) { return (mask.bias && k == GroupKind::bias) || (mask.bn && k != GroupKind::mult && k != GroupKind::bias); };
    WeightVector out;
    for (const auto& g : wv.index.groups) {
        if (dropped(g.kind)) continue;
        auto rec = g;
        rec.offset = out.theta.size();
        out.theta.insert(out.theta.end(), wv.theta.begin() + static_cast<std::ptrdiff_t>(g.offset),
                         wv.theta.begin() + static_cast<std::ptrdiff_t>(g.offset + g.length));
        if (g.offset < wv.index.conv_end) out.index.conv_end = out.theta.size();
        out.index.groups.push_back(rec);
    }
    return out;
}

double dmc_lr(const DmcTrainConfig& cfg, std::size_t completed) {
    if (cfg.epochs == 0) throw ConfigError("dmc epochs must be positive");
    const std::size_t k = std::min(completed, cfg.epochs) * cfg.decays / cfg.epochs;
    return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(k));
}

DmcModel make_dmc(DmcKind scope, Field target, Domain domain, std::size_t input_len, const std::vector<std::string>& classes,
                  std::uint64_t seed) {
    DmcModel m;
    m.scope = scope;
    m.target = target;
    m.domain = domain;
    m.input_len = input_len;
    m.classes = classes;
    m.spec = build_dmc(scope, input_len, classes.size());
    const Rng rng(seed);
    m.net = instantiate<float>(m.spec, InitScheme::glorot_normal, rng.substream("dmc-init"), rng.substream("dmc-dropout"));
    m.config.seed = seed;
    return m;
}

DmcModel train_dmc(const DmcCorpus& corpus, const DmcTrainConfig& cfg) {
    if (corpus.train.empty()) throw Error("dmc: empty training corpus");
    if (cfg.batch_size < 2) throw ConfigError("dmc batch_size must be at least 2");
    std::vector<std::size_t> counts(corpus.classes.size(), 0);
    for (const auto& v : corpus.train) ++counts.at(static_cast<std::size_t>(v.target));
    if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end())
        throw Error("dmc: training corpus is not class-balanced");

    DmcModel m = make_dmc(corpus.scope, corpus.target, corpus.domain, corpus.input_len, corpus.classes, cfg.seed);
    m.config = cfg;
    const std::size_t S = corpus.input_len;

    std::vector<std::vector<float>> data;
    data.reserve(corpus.train.size());
    for (const auto& v : corpus.train) {
        data.push_back(load_domain(v.file, corpus.domain, {}));
        if (data.back().size() < S)
            throw ShapeError(fmt::format("{} snapshot {}: domain holds {} weights, model input is {}", v.run_id, v.snapshot, data.back().size(), S));
        if (corpus.scope == DmcKind::global && data.back().size() != S)
            throw ShapeError(fmt::format("{} snapshot {}: global input length {} != {}", v.run_id, v.snapshot, data.back().size(), S));
    }

    const Rng rng(cfg.seed);
    Rng order_rng = rng.substream("dmc-order");
    Rng subset_rng = rng.substream("dmc-subset");
    OptimizerState<float> opt(OptimizerKind::adam);
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const double lr = dmc_lr(cfg, e - 1);
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < n;) {
            std::size_t end = std::min(n, b + cfg.batch_size);
            if (n - end == 1) end = n;  // no batch of one sample
            Tensor<float> x({end - b, S, 1});
            std::vector<int> y;
            for (std::size_t i = b; i < end; ++i) {
                const auto& src = data[order[i]];
                const std::size_t a = src.size() > S ? subset_rng.below(src.size() - S + 1) : 0;
                std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(a), S, x.data.begin() + static_cast<std::ptrdiff_t>((i - b) * S));
                y.push_back(corpus.train[order[i]].target);
            }
            auto [loss, ok] = m.net.train_step(x, y, opt, lr);
            if (!std::isfinite(loss)) throw NumericError(fmt::format("dmc: non-finite loss in epoch {}", e));
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - b);
            correct += ok;
            b = end;
        }
        m.curve.push_back({e, lr, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)});
        if (cfg.verbose) fmt::print(stderr, "dmc epoch {}/{} lr {:.3g} loss {:.4f} acc {:.3f}\n", e, cfg.epochs, lr, m.curve.back().loss, m.curve.back().train_acc);
    }
    if (cfg.recalibrate_bn) {
        // One train-mode sweep with momentum (b-1)/b leaves every running
        // statistic at the average of its batch statistics.
        std::vector<double> saved;
        for (auto& l : m.net.layers())
            if (l.kind == LayerKind::batchnorm) saved.push_back(l.hyper.bn_momentum);
        std::size_t batch_no = 0;
        for (std::size_t b = 0; b < n;) {
            std::size_t end = std::min(n, b + cfg.batch_size);
            if (n - end == 1) end = n;
            ++batch_no;
            for (auto& l : m.net.layers())
                if (l.kind == LayerKind::batchnorm) l.hyper.bn_momentum = static_cast<double>(batch_no - 1) / static_cast<double>(batch_no);
            Tensor<float> x({end - b, S, 1});
            for (std::size_t i = b; i < end; ++i) {
                const auto& src = data[i];
                const std::size_t a = src.size() > S ? subset_rng.below(src.size() - S + 1) : 0;
                std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(a), S, x.data.begin() + static_cast<std::ptrdiff_t>((i - b) * S));
            }
            m.net.forward(x, Mode::train);
            b = end;
        }
        std::size_t k = 0;
        for (auto& l : m.net.layers())
            if (l.kind == LayerKind::batchnorm) l.hyper.bn_momentum = saved[k++];
    }
    return m;
}

namespace {

// Runs f(i, net) for every vector index with one network copy per worker;
// results must be written to per-index slots so the order is irrelevant.
template <typename F>
void for_each_vector(const DmcModel& model, std::size_t count, std::size_t threads, F&& f) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        auto net = model.net;
        for (std::size_t i = 0; i < count; ++i) f(i, net);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            auto net = model.net;
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    f(i, net);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    pool.clear();
    if (err) std::rethrow_exception(err);
}

std::vector<int> predict_windows(Network<float>& net, const std::vector<float>& src, const std::vector<std::size_t>& starts, std::size_t S) {
    Tensor<float> x({starts.size(), S, 1});
    for (std::size_t r = 0; r < starts.size(); ++r)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(starts[r]), S, x.data.begin() + static_cast<std::ptrdiff_t>(r * S));
    return net.predict(x);
}

}  // namespace

EvalResult evaluate(const DmcModel& model, const std::vector<DmcVector>& vectors, const EvalConfig& cfg) {
    if (cfg.repeats == 0) throw ConfigError("repeats must be positive");
    const std::size_t S = model.input_len, C = model.classes.size();
    EvalResult res;
    res.predictions.assign(vectors.size(), -1);
    const Rng root(cfg.seed);
    for_each_vector(model, vectors.size(), cfg.threads, [&](std::size_t i, Network<float>& net) {
        const auto& v = vectors[i];
        const auto src = load_domain(v.file, model.domain, cfg.mask);
        if (model.scope == DmcKind::global && src.size() != S)
            throw ShapeError(fmt::format("{} snapshot {}: global input length {} != {}", v.run_id, v.snapshot, src.size(), S));
        if (src.size() < S) return;
        std::vector<std::size_t> starts;
        if (model.scope == DmcKind::global) {
            starts = {0};
        } else {
            Rng r = root.substream(v.run_id, static_cast<std::uint64_t>(v.snapshot));
            for (std::size_t k = 0; k < cfg.repeats; ++k) starts.push_back(r.below(src.size() - S + 1));
        }
        std::vector<std::size_t> votes(C, 0);
        for (int p : predict_windows(net, src, starts, S)) ++votes[static_cast<std::size_t>(p)];
        res.predictions[i] = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    });
    std::size_t ok = 0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (res.predictions[i] < 0) {
            ++res.skipped;
            continue;
        }
        ++res.count;
        ok += res.predictions[i] == vectors[i].target;
    }
    res.accuracy = res.count ? static_cast<double>(ok) / static_cast<double>(res.count) : 0.0;
    return res;
}

std::vector<std::size_t> map_starts(std::size_t domain_len, std::size_t subset_size, std::size_t n_pos) {
    if (n_pos == 0) throw ConfigError("n_pos must be positive");
    if (domain_len < subset_size) throw ShapeError(fmt::format("domain length {} is shorter than subset size {}", domain_len, subset_size));
    std::vector<std::size_t> out(n_pos, 0);
    if (n_pos == 1) return out;
    for (std::size_t k = 0; k < n_pos; ++k) out[k] = k * (domain_len - subset_size) / (n_pos - 1);
    return out;
}

PerformanceMap performance_map(const DmcModel& model, const std::vector<DmcVector>& vectors, std::size_t n_pos, GroupMask mask,
                               std::size_t threads) {
    if (model.scope != DmcKind::local) throw ConfigError("performance maps need a local DMC");
    std::set<int> seen;
    for (const auto& v : vectors) seen.insert(v.snapshot);
    for (int j = 1; j <= 20; ++j)
        if (!seen.count(j)) throw Error(fmt::format("performance map corpus lacks snapshot {}", j));
    const std::size_t S = model.input_len;
    std::vector<std::vector<int>> hits(vectors.size());
    for_each_vector(model, vectors.size(), threads, [&](std::size_t i, Network<float>& net) {
        const auto src = load_domain(vectors[i].file, model.domain, mask);
        if (src.size() < S)
            throw ShapeError(fmt::format("{} snapshot {}: domain holds {} weights, subset size is {}", vectors[i].run_id, vectors[i].snapshot,
                                         src.size(), S));
        const auto pred = predict_windows(net, src, map_starts(src.size(), S, n_pos), S);
        hits[i].resize(n_pos);
        for (std::size_t k = 0; k < n_pos; ++k) hits[i][k] = pred[k] == vectors[i].target;
    });
    PerformanceMap m;
    m.n_pos = n_pos;
    m.accuracy.assign(20, std::vector<double>(n_pos, 0.0));
    m.count.assign(20, std::vector<std::size_t>(n_pos, 0));
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        const auto j = static_cast<std::size_t>(vectors[i].snapshot - 1);
        for (std::size_t k = 0; k < n_pos; ++k) {
            m.accuracy[j][k] += hits[i][k];
            ++m.count[j][k];
        }
    }
    for (std::size_t j = 0; j < 20; ++j)
        for (std::size_t k = 0; k < n_pos; ++k) m.accuracy[j][k] /= static_cast<double>(m.count[j][k]);
    return m;
}

namespace {

CsvRow map_header(std::size_t n_pos) {
    CsvRow h{"snapshot"};
    for (std::size_t k = 0; k < n_pos; ++k) h.push_back(fmt::format("pos{}", k));
    return h;
}

}  // namespace

void write_map_csv(const std::filesystem::path& path, const PerformanceMap& m) {
    std::vector<CsvRow> rows;
    for (std::size_t j = 0; j < m.accuracy.size(); ++j) {
        CsvRow r{std::to_string(j + 1)};
        for (double a : m.accuracy[j]) r.push_back(format_double(a));
        rows.push_back(std::move(r));
    }
    write_csv(path, map_header(m.n_pos), rows);
}

void write_map_counts_csv(const std::filesystem::path& path, const PerformanceMap& m) {
    std::vector<CsvRow> rows;
    for (std::size_t j = 0; j < m.count.size(); ++j) {
        CsvRow r{std::to_string(j + 1)};
        for (auto c : m.count[j]) r.push_back(std::to_string(c));
        rows.push_back(std::move(r));
    }
    write_csv(path, map_header(m.n_pos), rows);
}

PerformanceMap read_map_csv(const std::filesystem::path& path) {
    const auto t = read_csv(path);
    if (t.header.size() < 2 || t.header[0] != "snapshot") throw FormatError(fmt::format("'{}': not a performance map", path.string()));
    PerformanceMap m;
    m.n_pos = t.header.size() - 1;
    for (const auto& r : t.rows) {
        std::vector<double> row;
        for (std::size_t k = 1; k < r.size(); ++k) row.push_back(parse_double(r[k]));
        m.accuracy.push_back(std::move(row));
        m.count.emplace_back(m.n_pos, 0);
    }
    return m;
}

void save_dmc(const std::filesystem::path& path, const DmcModel& m) {
    Snapshot s;
    s.arch_hash = m.spec.hash();
    s.weights = vectorize(m.net.layers());
    Json meta;
    meta["type"] = "dmc";
    meta["scope"] = to_string(m.scope);
    meta["target"] = field_name(m.target);
    meta["domain"] = to_string(m.domain);
    meta["input_len"] = m.input_len;
    meta["classes"] = m.classes;
    meta["epochs"] = m.config.epochs;
    meta["batch_size"] = m.config.batch_size;
    meta["lr0"] = m.config.lr0;
    meta["decay"] = m.config.decay;
    meta["decays"] = m.config.decays;
    meta["seed"] = m.config.seed;
    meta["recalibrate_bn"] = m.config.recalibrate_bn;
    Json curve = Json::array();
    for (const auto& c : m.curve) curve.push_back({c.epoch, c.lr, c.loss, c.train_acc});
    meta["curve"] = curve;
    s.meta = meta;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_snapshot(path, s);
}

DmcModel load_dmc(const std::filesystem::path& path) {
    const auto s = read_snapshot(path);
    const auto& meta = s.meta;
    if (!meta.contains("type") || meta["type"] != "dmc") throw FormatError(fmt::format("'{}' is not a DMC model file", path.string()));
    try {
        const auto scope = meta.at("scope").get<std::string>() == "global" ? DmcKind::global : DmcKind::local;
        DmcModel m = make_dmc(scope, parse_field(meta.at("target").get<std::string>()), parse_domain(meta.at("domain").get<std::string>()),
                              meta.at("input_len").get<std::size_t>(), meta.at("classes").get<std::vector<std::string>>(),
                              meta.at("seed").get<std::uint64_t>());
        if (m.spec.hash() != s.arch_hash) throw FormatError(fmt::format("'{}': architecture hash mismatch", path.string()));
        devectorize(s.weights.theta, m.net.layers());
        m.config.epochs = meta.at("epochs").get<std::size_t>();
        m.config.batch_size = meta.at("batch_size").get<std::size_t>();
        m.config.lr0 = meta.at("lr0").get<double>();
        m.config.decay = meta.at("decay").get<double>();
        m.config.decays = meta.at("decays").get<std::size_t>();
        m.config.recalibrate_bn = meta.at("recalibrate_bn").get<bool>();
        for (const auto& c : meta.at("curve")) m.curve.push_back({c[0].get<std::size_t>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>()});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': bad DMC metadata: {}", path.string(), e.what()));
    }
}

}  // namespace nws
