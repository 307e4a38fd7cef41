#include "nws/pipeline.hpp"

#include "nws/analysis.hpp"
#include "nws/csv.hpp"
#include "nws/error.hpp"
#include "nws/heatmap.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace nws {

namespace {

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"out", "out"},
        {"data_root", "data"},
        {"seed", "1"},
        {"threads", "0"},
        {"verbose", "false"},
        {"runs", "20"},
        {"first_run", "0"},
        {"mode", "fixed-arch"},
        {"dataset", "synthetic"},
        {"lr_min", "0.0002"},
        {"lr_max", "0.005"},
        {"log_uniform_lr", "false"},
        {"max_epochs", "200"},
        {"train_limit", "0"},
        {"batchnorm", "true"},
        {"synthetic.train_size", "1000"},
        {"synthetic.test_size", "200"},
        {"synthetic.classes", "10"},
        {"synthetic.noise", "0.05"},
        {"synthetic.seed", "7"},
        {"filter_converged", "true"},
        {"features.kind", "subset"},
        {"features.snapshots", "1,20"},
        {"features.subset_size", "5000"},
        {"features.subsets", "10"},
        {"features.domain", "all"},
        {"meta.targets", "initialization"},
        {"meta.classifiers", "linear"},
        {"meta.snapshot", "20"},
        {"meta.test_fraction", "0.2"},
        {"meta.seeds", "1"},
        {"svm.lambda", "0.01"},
        {"svm.epochs", "200"},
        {"svm.C", "1"},
        {"svm.gamma", "0"},
        {"dmc.scope", "local"},
        {"dmc.subset_size", "5000"},
        {"dmc.domain", "all"},
        {"dmc.epochs", "100"},
        {"dmc.batch_size", "64"},
        {"dmc.lr", "0.001"},
        {"dmc.recalibrate_bn", "true"},
        {"dmc.repeats", "1"},
        {"dmc.mask", "none"},
        {"map.n_pos", "10"},
        {"map.min", "0"},
        {"map.max", "1"},
        {"regress.combos", "batch_size:optimizer,activation:initialization"},
        {"pca.k", "10"},
        {"pca.snapshot", "20"},
        {"pca.domain", "conv-only"},
    };
    return d;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

bool RunConfig::known_key(const std::string& key) {
    if (defaults().count(key)) return true;
    if (key.rfind("restrict.", 0) == 0) {
        try {
            parse_field(key.substr(9));
            return true;
        } catch (const ConfigError&) {
            return false;
        }
    }
    if (key.rfind("threshold.", 0) == 0) {
        const auto ds = key.substr(10);
        const auto& l = field_labels(Field::dataset);
        return ds == "synthetic" || std::find(l.begin(), l.end(), ds) != l.end();
    }
    return false;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_key(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
    values_[key] = value;
}

RunConfig RunConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
    RunConfig rc;
    rc.base_ = base_dir;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected 'key = value', got '{}'", no, t));
        const auto key = trim(std::string_view(t).substr(0, eq));
        const auto value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError(fmt::format("config line {}: empty key", no));
        if (!seen.insert(key).second) throw ConfigError(fmt::format("config line {}: duplicate key '{}'", no, key));
        if (!known_key(key)) throw ConfigError(fmt::format("config line {}: unknown key '{}'", no, key));
        rc.values_[key] = value;
    }
    return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

const std::string& RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(fmt::format("missing config key '{}'", key));
    return it->second;
}

double RunConfig::number(const std::string& key) const {
    const auto& s = str(key);
    try {
        const double v = parse_double(s);
        if (!std::isfinite(v)) throw ConfigError("");
        return v;
    } catch (const Error&) {
        throw ConfigError(fmt::format("config key '{}': '{}' is not a number", key, s));
    }
}

long long RunConfig::integer(const std::string& key) const {
    const auto& s = str(key);
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("config key '{}': '{}' is not an integer", key, s));
    return v;
}

bool RunConfig::boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, s));
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    for (std::string part; std::getline(ss, part, ',');) {
        auto t = trim(part);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
    std::filesystem::path p = str(key);
    if (p.is_relative()) p = base_ / p;
    return std::filesystem::weakly_canonical(std::filesystem::absolute(p));
}

namespace {

std::size_t non_negative(const RunConfig& rc, const std::string& key) {
    const auto v = rc.integer(key);
    if (v < 0) throw ConfigError(fmt::format("config key '{}' must be non-negative", key));
    return static_cast<std::size_t>(v);
}

std::size_t positive(const RunConfig& rc, const std::string& key) {
    const auto v = non_negative(rc, key);
    if (v == 0) throw ConfigError(fmt::format("config key '{}' must be positive", key));
    return v;
}

std::vector<int> snapshot_list(const RunConfig& rc, const std::string& key) {
    std::vector<int> out;
    for (const auto& s : rc.list(key)) {
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || v < 1 || v > 20)
            throw ConfigError(fmt::format("config key '{}': '{}' is not a snapshot position in 1..20", key, s));
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(fmt::format("config key '{}' is empty", key));
    return out;
}

int snapshot_value(const RunConfig& rc, const std::string& key) {
    const auto v = rc.integer(key);
    if (v < 1 || v > 20) throw ConfigError(fmt::format("config key '{}' must be in 1..20", key));
    return static_cast<int>(v);
}

}  // namespace

std::filesystem::path PipelineConfig::feature_csv() const { return out / "features" / fmt::format("{}.csv", to_string(features.kind)); }

PipelineConfig pipeline_config(const RunConfig& rc) {
    PipelineConfig c;
    c.out = rc.path("out");
    const auto threads = non_negative(rc, "threads");
    c.threads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    c.verbose = rc.boolean("verbose");
    const auto seed = static_cast<std::uint64_t>(rc.integer("seed"));

    auto& p = c.population;
    p.runs = non_negative(rc, "runs");
    p.first_run = non_negative(rc, "first_run");
    p.seed = seed;
    p.mode = parse_sampling_mode(rc.str("mode"));
    p.root = c.out;
    p.data_root = rc.path("data_root");
    p.threads = c.threads;
    p.verbose = c.verbose;
    p.schema.lr_min = rc.number("lr_min");
    p.schema.lr_max = rc.number("lr_max");
    if (!(p.schema.lr_min > 0 && p.schema.lr_min <= p.schema.lr_max)) throw ConfigError("need 0 < lr_min <= lr_max");
    p.schema.log_uniform_lr = rc.boolean("log_uniform_lr");
    if (const auto& ds = rc.str("dataset"); ds != "any") p.schema.dataset_override = ds;
    for (const auto& [key, value] : rc.values())
        if (key.rfind("restrict.", 0) == 0) p.schema.restrict(parse_field(key.substr(9)), rc.list(key));
    const auto max_epochs = rc.integer("max_epochs");
    if (max_epochs < 20) throw ConfigError("max_epochs must be at least 20 (20 snapshots per run)");
    p.caps.max_epochs = static_cast<int>(max_epochs);
    p.caps.train_limit = non_negative(rc, "train_limit");
    p.caps.batchnorm = rc.boolean("batchnorm");
    p.synthetic.train_size = positive(rc, "synthetic.train_size");
    p.synthetic.test_size = positive(rc, "synthetic.test_size");
    p.synthetic.num_classes = positive(rc, "synthetic.classes");
    p.synthetic.noise = rc.number("synthetic.noise");
    p.synthetic.seed = static_cast<std::uint64_t>(rc.integer("synthetic.seed"));

    c.filter = rc.boolean("filter_converged");
    c.thresholds = ConvergenceThresholds{};
    for (const auto& [key, value] : rc.values())
        if (key.rfind("threshold.", 0) == 0) c.thresholds.by_dataset[key.substr(10)] = rc.number(key);

    c.features.kind = parse_feature_kind(rc.str("features.kind"));
    c.features.snapshots = snapshot_list(rc, "features.snapshots");
    c.features.subset_size = positive(rc, "features.subset_size");
    c.features.subsets_per_vector = positive(rc, "features.subsets");
    c.features.domain = parse_domain(rc.str("features.domain"));
    c.features.seed = seed;

    c.targets.clear();
    for (const auto& t : rc.list("meta.targets")) c.targets.push_back(parse_field(t));
    if (c.targets.empty()) throw ConfigError("meta.targets is empty");
    c.classifiers = rc.list("meta.classifiers");
    for (const auto& k : c.classifiers)
        if (k != "dmc") parse_svm_kind(k);
    c.meta_snapshot = snapshot_value(rc, "meta.snapshot");
    c.test_fraction = rc.number("meta.test_fraction");
    if (!(c.test_fraction > 0 && c.test_fraction < 1)) throw ConfigError("meta.test_fraction must be in (0, 1)");
    c.meta_seeds.clear();
    for (const auto& s : rc.list("meta.seeds")) {
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(fmt::format("meta.seeds: '{}' is not a seed", s));
        c.meta_seeds.push_back(v);
    }
    if (c.meta_seeds.empty()) throw ConfigError("meta.seeds is empty");
    c.svm.lambda = rc.number("svm.lambda");
    c.svm.epochs = static_cast<int>(positive(rc, "svm.epochs"));
    c.svm.C = rc.number("svm.C");
    c.svm.gamma = rc.number("svm.gamma");
    c.svm.threads = c.threads;

    const auto& scope = rc.str("dmc.scope");
    if (scope != "local" && scope != "global") throw ConfigError(fmt::format("dmc.scope: unknown scope '{}' (local, global)", scope));
    c.dmc_scope = scope == "global" ? DmcKind::global : DmcKind::local;
    c.dmc_subset_size = positive(rc, "dmc.subset_size");
    c.dmc_domain = parse_domain(rc.str("dmc.domain"));
    c.dmc.epochs = positive(rc, "dmc.epochs");
    c.dmc.batch_size = positive(rc, "dmc.batch_size");
    c.dmc.lr0 = rc.number("dmc.lr");
    c.dmc.recalibrate_bn = rc.boolean("dmc.recalibrate_bn");
    c.dmc.verbose = c.verbose;
    c.dmc_repeats = positive(rc, "dmc.repeats");
    c.dmc_mask = parse_group_mask(rc.str("dmc.mask"));

    c.map_n_pos = positive(rc, "map.n_pos");
    c.map_min = rc.number("map.min");
    c.map_max = rc.number("map.max");
    if (!(c.map_max > c.map_min)) throw ConfigError("map.max must exceed map.min");

    for (const auto& s : rc.list("regress.combos")) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw ConfigError(fmt::format("regress.combos: '{}' is not 'field:field'", s));
        c.combos.emplace_back(parse_field(s.substr(0, colon)), parse_field(s.substr(colon + 1)));
    }
    c.pca_k = positive(rc, "pca.k");
    c.pca_snapshot = snapshot_value(rc, "pca.snapshot");
    c.pca_domain = parse_domain(rc.str("pca.domain"));
    return c;
}

// ---- shared helpers ----

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

RunSplit split_runs(const std::map<std::string, int>& run_class, std::size_t classes, double test_fraction, std::uint64_t seed, bool balance) {
    std::vector<std::vector<std::string>> per(classes);
    for (const auto& [run, c] : run_class) per.at(static_cast<std::size_t>(c)).push_back(run);
    std::size_t K = std::numeric_limits<std::size_t>::max();
    for (const auto& p : per) K = std::min(K, p.size());
    const Rng rng(seed);
    RunSplit s;
    for (std::size_t k = 0; k < classes; ++k) {
        auto& runs = per[k];
        Rng r = rng.substream("run-split", k);
        r.shuffle(runs.begin(), runs.end());
        const std::size_t use = balance ? K : runs.size();
        std::size_t n_test = 0;
        if (use >= 2)
            n_test = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(use))), 1, use - 1);
        s.test.insert(s.test.end(), runs.begin(), runs.begin() + static_cast<std::ptrdiff_t>(n_test));
        s.train.insert(s.train.end(), runs.begin() + static_cast<std::ptrdiff_t>(n_test), runs.begin() + static_cast<std::ptrdiff_t>(use));
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

namespace {

struct SvmData {
    std::vector<std::string> classes;
    RunSplit split;
    Matrix X_train, X_test;
    std::vector<int> y_train, y_test;
};

SvmData svm_data(const FeatureTable& table, Field target, int snapshot, double test_fraction, std::uint64_t seed) {
    std::set<std::string> present;
    for (const auto& r : table.rows)
        if (r.snapshot == snapshot) present.insert(r.labels.at(static_cast<std::size_t>(target)));
    if (present.empty()) throw Error(fmt::format("feature table has no rows at snapshot {}", snapshot));
    SvmData d;
    for (const auto& l : field_labels(target))
        if (present.count(l)) d.classes.push_back(l);
    for (const auto& l : present)
        if (std::find(d.classes.begin(), d.classes.end(), l) == d.classes.end()) d.classes.push_back(l);
    if (d.classes.size() < 2) throw Error(fmt::format("{}: only one class present ({})", field_name(target), d.classes.front()));
    std::map<std::string, int> run_class;
    for (const auto& r : table.rows)
        if (r.snapshot == snapshot) {
            const auto cls = static_cast<int>(std::find(d.classes.begin(), d.classes.end(), r.labels[static_cast<std::size_t>(target)]) - d.classes.begin());
            run_class[r.run_id] = cls;
        }
    d.split = split_runs(run_class, d.classes.size(), test_fraction, seed);
    const std::set<std::string> train(d.split.train.begin(), d.split.train.end()), test(d.split.test.begin(), d.split.test.end());
    for (const auto& r : table.rows) {
        if (r.snapshot != snapshot) continue;
        const int cls = run_class.at(r.run_id);
        if (train.count(r.run_id)) {
            d.X_train.push_back(r.values);
            d.y_train.push_back(cls);
        } else if (test.count(r.run_id)) {
            d.X_test.push_back(r.values);
            d.y_test.push_back(cls);
        }
    }
    if (d.X_test.empty()) throw Error(fmt::format("{}: too few runs per class for a test split", field_name(target)));
    return d;
}

}  // namespace

SvmExperiment run_svm_experiment(const FeatureTable& table, Field target, int snapshot, const SvmConfig& svm, double test_fraction,
                                 std::uint64_t seed) {
    auto d = svm_data(table, target, snapshot, test_fraction, seed);
    SvmExperiment e;
    e.model = fit_svm(d.X_train, d.y_train, d.classes, svm);
    e.model.schema = table.schema;
    e.split = d.split;
    e.train_accuracy = accuracy(predict(e.model, d.X_train), d.y_train);
    e.test_accuracy = accuracy(predict(e.model, d.X_test), d.y_test);
    e.test_rows = d.X_test.size();
    return e;
}

namespace {

std::vector<RunRecord> usable_records(const PipelineConfig& cfg) {
    if (!std::filesystem::exists(cfg.manifest())) throw IoError(fmt::format("missing manifest '{}' (run sample-train first)", cfg.manifest().string()));
    const auto all = read_manifest(cfg.manifest());
    if (all.empty()) throw Error(fmt::format("manifest '{}' is empty", cfg.manifest().string()));
    if (!cfg.filter) {
        std::vector<RunRecord> ok;
        for (const auto& r : all)
            if (r.ok()) ok.push_back(r);
        return ok;
    }
    auto t = cfg.thresholds;
    // the synthetic dataset has no published threshold; keep every finished run
    if (!t.by_dataset.count("synthetic")) t.by_dataset["synthetic"] = 0.0;
    return filter_converged(all, t);
}

std::string model_stem(Field target, const std::string& clf, std::uint64_t seed) {
    return fmt::format("{}_{}_s{}", field_name(target), clf, seed);
}

CorpusConfig corpus_config(const PipelineConfig& cfg, Field target, std::uint64_t seed) {
    CorpusConfig cc;
    cc.target = target;
    cc.scope = cfg.dmc_scope;
    cc.domain = cfg.dmc_domain;
    cc.subset_size = cfg.dmc_subset_size;
    cc.test_fraction = cfg.test_fraction;
    cc.seed = seed;
    return cc;
}

void require_file(const std::filesystem::path& p, std::string_view what) {
    if (!std::filesystem::exists(p)) throw IoError(fmt::format("missing {} '{}'", what, p.string()));
}

}  // namespace

StageSummary stage_sample_train(const PipelineConfig& cfg) {
    std::filesystem::create_directories(cfg.out);
    const auto fresh = run_population(cfg.population);
    const auto all = read_manifest(cfg.manifest());
    const auto ok = std::count_if(all.begin(), all.end(), [](const RunRecord& r) { return r.ok(); });
    return {fmt::format("manifest: {} ({} runs, {} ok, {} trained now)", cfg.manifest().string(), all.size(), ok, fresh.size())};
}

StageSummary stage_featurize(const PipelineConfig& cfg) {
    const auto records = usable_records(cfg);
    std::size_t skipped = 0;
    const auto table = featurize(cfg.out, records, cfg.features, &skipped);
    write_feature_csv(cfg.feature_csv(), table);
    return {fmt::format("features: {} ({} rows x {} features, {} runs, {} vectors skipped)", cfg.feature_csv().string(), table.rows.size(),
                        table.schema.size(), records.size(), skipped)};
}

StageSummary stage_meta_train(const PipelineConfig& cfg) {
    StageSummary out;
    const auto dir = cfg.out / "meta";
    std::filesystem::create_directories(dir);
    std::optional<FeatureTable> table;
    std::vector<RunRecord> records;
    for (const auto& clf : cfg.classifiers) {
        for (Field target : cfg.targets)
            for (std::uint64_t seed : cfg.meta_seeds) {
                const auto stem = model_stem(target, clf, seed);
                if (clf == "dmc") {
                    if (records.empty()) records = usable_records(cfg);
                    const auto corpus = build_corpus(cfg.out, records, corpus_config(cfg, target, seed));
                    auto tc = cfg.dmc;
                    tc.seed = seed;
                    const auto m = train_dmc(corpus, tc);
                    save_dmc(dir / (stem + ".nws"), m);
                    out.push_back(fmt::format("model: {} (dmc, {} training vectors, final train acc {:.3f})", (dir / (stem + ".nws")).string(),
                                              corpus.train.size(), m.curve.back().train_acc));
                    continue;
                }
                if (!table) {
                    require_file(cfg.feature_csv(), "feature table");
                    table = read_feature_csv(cfg.feature_csv());
                }
                auto svm = cfg.svm;
                svm.kind = parse_svm_kind(clf);
                const auto e = run_svm_experiment(*table, target, cfg.meta_snapshot, svm, cfg.test_fraction, seed);
                save_svm(dir / (stem + ".svm"), e.model);
                out.push_back(fmt::format("model: {} ({}, {} training runs, train acc {:.3f})", (dir / (stem + ".svm")).string(), clf,
                                          e.split.train.size(), e.train_accuracy));
                if (svm.kind != SvmKind::rbf) {
                    const auto imp = feature_importance(e.model);
                    std::vector<CsvRow> rows;
                    for (std::size_t f = 0; f < imp.size(); ++f) rows.push_back({e.model.schema.at(f), format_double(imp[f])});
                    write_csv(dir / (stem + "_importance.csv"), {"feature", "importance"}, rows);
                    out.push_back(fmt::format("importance: {}", (dir / (stem + "_importance.csv")).string()));
                }
            }
    }
    return out;
}

StageSummary stage_meta_eval(const PipelineConfig& cfg) {
    const auto dir = cfg.out / "meta";
    std::vector<CsvRow> rows;
    std::optional<FeatureTable> table;
    std::vector<RunRecord> records;
    for (const auto& clf : cfg.classifiers)
        for (Field target : cfg.targets)
            for (std::uint64_t seed : cfg.meta_seeds) {
                const auto stem = model_stem(target, clf, seed);
                double acc = 0;
                std::size_t n = 0, classes = 0;
                if (clf == "dmc") {
                    const auto path = dir / (stem + ".nws");
                    require_file(path, "model file");
                    const auto m = load_dmc(path);
                    if (records.empty()) records = usable_records(cfg);
                    const auto corpus = build_corpus(cfg.out, records, corpus_config(cfg, target, seed));
                    EvalConfig ec;
                    ec.repeats = cfg.dmc_repeats;
                    ec.mask = cfg.dmc_mask;
                    ec.seed = seed;
                    ec.threads = cfg.threads;
                    const auto r = evaluate(m, corpus.test, ec);
                    acc = r.accuracy;
                    n = r.count;
                    classes = m.classes.size();
                } else {
                    const auto path = dir / (stem + ".svm");
                    require_file(path, "model file");
                    const auto m = load_svm(path);
                    if (!table) {
                        require_file(cfg.feature_csv(), "feature table");
                        table = read_feature_csv(cfg.feature_csv());
                    }
                    const auto d = svm_data(*table, target, cfg.meta_snapshot, cfg.test_fraction, seed);
                    if (d.classes != m.classes) throw Error(fmt::format("'{}': class list does not match the feature table", path.string()));
                    acc = accuracy(predict(m, d.X_test), d.y_test);
                    n = d.X_test.size();
                    classes = m.classes.size();
                }
                rows.push_back({field_name(target).data(), clf, std::to_string(seed), format_double(acc), std::to_string(n),
                                format_double(1.0 / static_cast<double>(classes))});
            }
    const auto path = dir / "eval.csv";
    write_csv(path, {"target", "classifier", "seed", "accuracy", "n_test", "chance"}, rows);
    StageSummary out;
    for (const auto& r : rows) out.push_back(fmt::format("{} {} seed {}: accuracy {} on {} test samples (chance {})", r[0], r[1], r[2], r[3], r[4], r[5]));
    out.push_back(fmt::format("evaluation: {}", path.string()));
    return out;
}

StageSummary stage_map(const PipelineConfig& cfg) {
    if (std::find(cfg.classifiers.begin(), cfg.classifiers.end(), "dmc") == cfg.classifiers.end())
        throw ConfigError("map needs 'dmc' in meta.classifiers");
    if (cfg.dmc_scope != DmcKind::local) throw ConfigError("map needs dmc.scope = local");
    const auto records = usable_records(cfg);
    StageSummary out;
    for (Field target : cfg.targets)
        for (std::uint64_t seed : cfg.meta_seeds) {
            const auto stem = model_stem(target, "dmc", seed);
            const auto model_path = cfg.out / "meta" / (stem + ".nws");
            require_file(model_path, "model file");
            const auto m = load_dmc(model_path);
            auto cc = corpus_config(cfg, target, seed);
            cc.snapshots.clear();
            for (int j = 1; j <= 20; ++j) cc.snapshots.push_back(j);
            const auto corpus = build_corpus(cfg.out, records, cc);
            const auto map = performance_map(m, corpus.test, cfg.map_n_pos, cfg.dmc_mask, cfg.threads);
            const auto base = cfg.out / "maps" / stem;
            std::filesystem::create_directories(base.parent_path());
            write_map_csv(base.string() + ".csv", map);
            write_map_counts_csv(base.string() + "_counts.csv", map);
            write_heatmap(base.string() + ".ppm", map.accuracy, cfg.map_min, cfg.map_max);
            out.push_back(fmt::format("map: {}.csv ({} snapshots x {} positions, {} test vectors)", base.string(), map.accuracy.size(), map.n_pos,
                                      corpus.test.size()));
            out.push_back(fmt::format("heatmap: {}.ppm", base.string()));
        }
    return out;
}

StageSummary stage_regress(const PipelineConfig& cfg) {
    const auto records = usable_records(cfg);
    const auto dir = cfg.out / "analysis";
    std::filesystem::create_directories(dir);
    StageSummary out;
    std::set<std::string> datasets;
    for (const auto& r : records) datasets.insert(r.hp.dataset);
    std::vector<RegressionModel> models;
    for (const auto& ds : datasets) {
        RegressionModel m;
        try {
            m = fit_accuracy_regression(records, ds);
        } catch (const Error& e) {
            out.push_back(fmt::format("regression: skipped dataset {} ({})", ds, e.what()));
            continue;
        }
        const auto path = dir / fmt::format("regression_{}.csv", ds);
        write_regression_csv(path, m);
        out.push_back(fmt::format("regression: {} (n {}, rank {}, residual {:.4f} vs baseline {:.4f})", path.string(), m.fit.n, m.fit.rank,
                                  m.fit.residual_error, m.fit.baseline_error));
        models.push_back(m);
    }
    if (models.size() >= 2) {
        const auto corr = coeff_correlation(models);
        CsvRow header{"dataset"};
        for (const auto& m : models) header.push_back(m.dataset);
        std::vector<CsvRow> rows;
        for (std::size_t i = 0; i < models.size(); ++i) {
            CsvRow r{models[i].dataset};
            for (double v : corr[i]) r.push_back(format_double(v));
            rows.push_back(std::move(r));
        }
        write_csv(dir / "coefficient_correlation.csv", header, rows);
        out.push_back(fmt::format("correlation: {}", (dir / "coefficient_correlation.csv").string()));
    }
    for (const auto& [a, b] : cfg.combos) {
        const auto path = dir / fmt::format("combo_{}_{}.csv", field_name(a), field_name(b));
        write_combo_csv(path, combo_table(records, a, b));
        out.push_back(fmt::format("combo: {}", path.string()));
    }
    const auto X = load_weight_matrix(cfg.out, records, cfg.pca_snapshot, cfg.pca_domain);
    const std::size_t k = std::min(cfg.pca_k, std::min(X.size() - 1, X.front().size()));
    const auto p = pca(X, k, {.seed = cfg.population.seed});
    std::vector<CsvRow> var_rows;
    for (std::size_t i = 0; i < k; ++i)
        var_rows.push_back({std::to_string(i + 1), format_double(p.variances[i]), format_double(p.variances[i] / p.total_variance)});
    write_csv(dir / "pca_variance.csv", {"component", "variance", "ratio"}, var_rows);
    const auto proj = pca_project(p, X);
    CsvRow header{"run_id"};
    for (auto f : kAllFields) header.emplace_back(field_name(f));
    for (std::size_t i = 0; i < k; ++i) header.push_back(fmt::format("pc{}", i + 1));
    std::vector<CsvRow> rows;
    std::size_t i = 0;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        CsvRow row{r.id};
        for (auto f : kAllFields) row.push_back(category_label(r.hp, f));
        for (double v : proj[i]) row.push_back(format_double(v));
        rows.push_back(std::move(row));
        ++i;
    }
    write_csv(dir / "pca_projection.csv", header, rows);
    out.push_back(fmt::format("pca: {} ({} components over {} weights)", (dir / "pca_projection.csv").string(), k, X.front().size()));
    return out;
}

namespace {

std::vector<CsvRow> histogram(const std::vector<double>& values, std::size_t bins) {
    std::vector<CsvRow> rows;
    if (values.empty()) return rows;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) bins = 1;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        auto b = hi == lo ? 0 : static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        ++counts[std::min(b, bins - 1)];
    }
    for (std::size_t b = 0; b < bins; ++b) {
        const double a = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
        const double z = b + 1 == bins ? hi : lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins);
        rows.push_back({format_double(a), format_double(z), std::to_string(counts[b])});
    }
    return rows;
}

}  // namespace

StageSummary stage_report(const PipelineConfig& cfg) {
    if (!std::filesystem::exists(cfg.manifest())) throw IoError(fmt::format("missing manifest '{}'", cfg.manifest().string()));
    const auto records = read_manifest(cfg.manifest());
    if (records.empty()) throw Error(fmt::format("manifest '{}' is empty", cfg.manifest().string()));
    const auto dir = cfg.out / "report";
    std::filesystem::create_directories(dir);
    StageSummary out;

    std::vector<CsvRow> acc_rows, curve_rows;
    std::vector<double> sizes, durations;
    for (const auto& r : records) {
        acc_rows.push_back({r.id, r.hp.dataset, r.status, format_double(r.final_test_accuracy()), std::to_string(r.epochs.size()),
                            std::string(to_string(r.stop_reason)), std::to_string(r.weight_count)});
        for (const auto& e : r.epochs)
            curve_rows.push_back({r.id, std::to_string(e.epoch), format_double(e.lr), format_double(e.train_acc), format_double(e.valid_acc),
                                  format_double(e.test_acc), format_double(e.loss)});
        sizes.push_back(static_cast<double>(r.weight_count));
        const auto timing = cfg.out / "runs" / r.id / "timing.json";
        if (std::filesystem::exists(timing)) {
            std::ifstream in(timing);
            const auto j = Json::parse(in, nullptr, false);
            if (!j.is_discarded() && j.contains("duration_seconds")) durations.push_back(j["duration_seconds"].get<double>());
        }
    }
    write_csv(dir / "accuracy.csv", {"run_id", "dataset", "status", "final_test_accuracy", "epochs", "stop_reason", "weight_count"}, acc_rows);
    out.push_back(fmt::format("accuracy distribution: {} ({} runs)", (dir / "accuracy.csv").string(), acc_rows.size()));
    write_csv(dir / "curves.csv", {"run_id", "epoch", "lr", "train_acc", "valid_acc", "test_acc", "loss"}, curve_rows);
    out.push_back(fmt::format("training curves: {}", (dir / "curves.csv").string()));
    write_csv(dir / "model_size_histogram.csv", {"bin_low", "bin_high", "count"}, histogram(sizes, 10));
    out.push_back(fmt::format("model sizes: {}", (dir / "model_size_histogram.csv").string()));
    write_csv(dir / "duration_histogram.csv", {"bin_low", "bin_high", "count"}, histogram(durations, 10));
    out.push_back(fmt::format("durations: {}", (dir / "duration_histogram.csv").string()));

    const auto eval = cfg.out / "meta" / "eval.csv";
    if (std::filesystem::exists(eval)) {
        const auto t = read_csv(eval);
        std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
        for (const auto& r : t.rows) groups[{r[0], r[1]}].push_back(parse_double(r[3]));
        std::vector<CsvRow> rows;
        for (const auto& [key, accs] : groups) {
            const auto [m, s] = mean_std(accs);
            rows.push_back({key.first, key.second, std::to_string(accs.size()), format_double(m), format_double(s)});
        }
        write_csv(dir / "meta_accuracy.csv", {"target", "classifier", "seeds", "mean_accuracy", "std_population"}, rows);
        out.push_back(fmt::format("meta accuracy: {}", (dir / "meta_accuracy.csv").string()));
    }
    return out;
}

}  // namespace nws
