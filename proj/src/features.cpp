#include "nws/features.hpp"

#include "nws/csv.hpp"
#include "nws/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace nws {

const std::array<std::string_view, 8>& stat_names() {
    static const std::array<std::string_view, 8> names = {"mean", "var", "skew", "p1", "p25", "p50", "p75", "p99"};
    return names;
}

namespace {

constexpr std::array<double, 5> kPercentiles = {0.01, 0.25, 0.50, 0.75, 0.99};

// Moments by the corrected two-pass scheme: a compensated mean, then centred
// sums with the residual sum of deviations folded back in. Percentiles by
// successive partial selection on the (reordered) input.
void describe(std::vector<double>& v, double* out) {
    const std::size_t n = v.size();
    const double nn = static_cast<double>(n);
    double sum = 0, comp = 0;
    for (double x : v) {
        const double y = x - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    double mean = sum / nn;
    double d1 = 0;
    for (double x : v) d1 += x - mean;
    mean += d1 / nn;
    double m2 = 0, m3 = 0, r = 0;
    for (double x : v) {
        const double d = x - mean;
        r += d;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 -= r * r / nn;
    const double var = std::max(m2 / nn, 0.0);
    out[0] = mean;
    out[1] = var;
    out[2] = var > 0 ? (m3 / nn) / (var * std::sqrt(var)) : 0.0;

    auto lo = v.begin();
    for (std::size_t q = 0; q < kPercentiles.size(); ++q) {
        const double rank = kPercentiles[q] * static_cast<double>(n - 1);
        const auto k = static_cast<std::size_t>(std::floor(rank));
        const double frac = rank - static_cast<double>(k);
        auto kth = v.begin() + static_cast<std::ptrdiff_t>(k);
        if (kth >= lo) {
            std::nth_element(lo, kth, v.end());
            lo = kth;
        }
        double value = *kth;
        if (frac > 0 && k + 1 < n) {
            const double next = *std::min_element(kth + 1, v.end());
            value += frac * (next - value);
        }
        out[3 + q] = value;
    }
}

template <typename T>
Stats16 stats16_impl(std::span<const T> values) {
    if (values.size() < 2) throw Error(fmt::format("stats16 needs at least 2 values, got {}", values.size()));
    Stats16 s{};
    std::vector<double> v(values.begin(), values.end());
    std::vector<double> d(v.size() - 1);
    for (std::size_t i = 0; i + 1 < v.size(); ++i) d[i] = v[i + 1] - v[i];
    describe(v, s.data());
    describe(d, s.data() + 8);
    return s;
}

bool layer_has_bn(const GroupIndex& gi, std::size_t layer) {
    return std::any_of(gi.groups.begin(), gi.groups.end(),
                       [&](const GroupRecord& g) { return g.layer == layer && g.kind == GroupKind::bn_beta; });
}

}  // namespace

Stats16 stats16(std::span<const double> values) { return stats16_impl(values); }
Stats16 stats16(std::span<const float> values) { return stats16_impl(values); }

std::vector<std::string> subset_schema() {
    std::vector<std::string> out;
    for (auto n : stat_names()) out.emplace_back(n);
    for (auto n : stat_names()) out.push_back(fmt::format("d{}", n));
    return out;
}

std::vector<std::string> layerwise_schema(const GroupIndex& gi) {
    std::vector<std::string> out;
    for (const auto& g : gi.groups) {
        if (!layer_has_bn(gi, g.layer)) continue;
        for (const auto& n : subset_schema()) out.push_back(fmt::format("L{}.{}.{}", g.layer, to_string(g.kind), n));
    }
    return out;
}

FeatureVector layerwise_features(std::span<const float> theta, const GroupIndex& gi) {
    if (theta.size() != gi.total())
        throw ShapeError(fmt::format("weight vector has {} values, group index covers {}", theta.size(), gi.total()));
    FeatureVector fv;
    fv.schema = layerwise_schema(gi);
    for (const auto& g : gi.groups) {
        if (!layer_has_bn(gi, g.layer)) continue;
        if (g.length < 2)
            throw Error(fmt::format("group L{}.{} has {} element(s); statistics need 2", g.layer, to_string(g.kind), g.length));
        const auto s = stats16(theta.subspan(g.offset, g.length));
        fv.values.insert(fv.values.end(), s.begin(), s.end());
    }
    return fv;
}

Stats16 subset_features(std::span<const float> theta, const GroupIndex& gi, const SubsetSpec& spec) {
    const auto sub = extract_subset(theta, gi, spec);
    return stats16(std::span<const float>(sub));
}

std::vector<std::size_t> random_starts(const GroupIndex& gi, Domain d, std::size_t size, std::size_t count, Rng& rng) {
    const auto r = domain_range(gi, d);
    if (size == 0 || size > r.size())
        throw ConfigError(fmt::format("subset size {} exceeds {} domain of length {}", size, to_string(d), r.size()));
    std::vector<std::size_t> out(count);
    for (auto& a : out) a = static_cast<std::size_t>(rng.below(r.size() - size + 1));
    return out;
}

std::string_view to_string(FeatureKind k) { return k == FeatureKind::layerwise ? "layerwise" : "subset"; }

FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "layerwise") return FeatureKind::layerwise;
    if (s == "subset") return FeatureKind::subset;
    throw ConfigError(fmt::format("unknown feature kind '{}' (layerwise, subset)", s));
}

std::vector<std::vector<double>> FeatureTable::matrix() const {
    std::vector<std::vector<double>> m;
    m.reserve(rows.size());
    for (const auto& r : rows) m.push_back(r.values);
    return m;
}

std::vector<std::string> FeatureTable::labels(Field f) const {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.labels.at(static_cast<std::size_t>(f)));
    return out;
}

FeatureTable featurize(const std::filesystem::path& root, const std::vector<RunRecord>& records,
                       const FeaturizeConfig& cfg, std::size_t* skipped) {
    for (int j : cfg.snapshots)
        if (j < 1 || j > 20) throw ConfigError(fmt::format("snapshot position {} outside 1..20", j));
    if (cfg.kind == FeatureKind::subset && cfg.subsets_per_vector == 0)
        throw ConfigError("subsets_per_vector must be positive");
    FeatureTable t;
    t.schema = cfg.kind == FeatureKind::subset ? subset_schema() : std::vector<std::string>{};
    std::size_t skip = 0;
    const Rng root_rng(cfg.seed);
    for (const auto& rec : records) {
        if (!rec.ok()) continue;
        if (rec.snapshot_files.size() != 20)
            throw FormatError(fmt::format("run {} has {} snapshots, expected 20", rec.id, rec.snapshot_files.size()));
        std::vector<std::string> labels;
        for (auto f : kAllFields) labels.push_back(category_label(rec.hp, f));
        for (int j : cfg.snapshots) {
            const auto path = root / "runs" / rec.id / rec.snapshot_files[static_cast<std::size_t>(j - 1)];
            const auto snap = read_snapshot(path);
            const auto& wv = snap.weights;
            if (cfg.kind == FeatureKind::layerwise) {
                auto fv = layerwise_features(wv.theta, wv.index);
                if (t.schema.empty()) t.schema = fv.schema;
                if (fv.schema != t.schema)
                    throw ConfigError(fmt::format("run {}: layer-wise schema differs (mixed architectures)", rec.id));
                t.rows.push_back({rec.id, j, -1, labels, std::move(fv.values)});
                continue;
            }
            if (domain_range(wv.index, cfg.domain).size() < cfg.subset_size) {
                ++skip;
                continue;
            }
            // starts depend only on (seed, run, snapshot)
            Rng rng = root_rng.substream(rec.id, static_cast<std::uint64_t>(j));
            for (auto a : random_starts(wv.index, cfg.domain, cfg.subset_size, cfg.subsets_per_vector, rng)) {
                const auto s = subset_features(wv.theta, wv.index, {a, cfg.subset_size, cfg.domain});
                t.rows.push_back({rec.id, j, static_cast<long long>(a), labels, {s.begin(), s.end()}});
            }
        }
    }
    if (skipped) *skipped = skip;
    return t;
}

void write_feature_csv(const std::filesystem::path& path, const FeatureTable& t) {
    CsvRow header{"run_id", "snapshot", "subset_start"};
    for (auto f : kAllFields) header.emplace_back(field_name(f));
    header.insert(header.end(), t.schema.begin(), t.schema.end());
    std::vector<CsvRow> rows;
    rows.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        CsvRow row{r.run_id, std::to_string(r.snapshot), std::to_string(r.subset_start)};
        row.insert(row.end(), r.labels.begin(), r.labels.end());
        for (double v : r.values) row.push_back(format_double(v));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
    const auto csv = read_csv(path);
    const std::size_t lead = 3 + kFieldCount;
    if (csv.header.size() < lead) throw FormatError(fmt::format("'{}': not a feature table", path.string()));
    for (std::size_t i = 0; i < kFieldCount; ++i)
        if (csv.header[3 + i] != field_name(kAllFields[i]))
            throw FormatError(fmt::format("'{}': expected column '{}'", path.string(), field_name(kAllFields[i])));
    FeatureTable t;
    t.schema.assign(csv.header.begin() + static_cast<std::ptrdiff_t>(lead), csv.header.end());
    for (const auto& r : csv.rows) {
        FeatureRow row;
        row.run_id = r[0];
        row.snapshot = std::stoi(r[1]);
        row.subset_start = std::stoll(r[2]);
        row.labels.assign(r.begin() + 3, r.begin() + static_cast<std::ptrdiff_t>(lead));
        for (std::size_t i = lead; i < r.size(); ++i) row.values.push_back(parse_double(r[i]));
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace nws
