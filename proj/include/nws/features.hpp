#pragma once

#include "nws/rng.hpp"
#include "nws/store.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nws {

inline constexpr std::size_t kStatCount = 16;
using Stats16 = std::array<double, kStatCount>;

// mean, var, skew, p1, p25, p50, p75, p99
const std::array<std::string_view, 8>& stat_names();

// Eight statistics of the values followed by the same eight of their first
// forward differences. Percentiles interpolate linearly at rank p·(n−1);
// variance is the population variance; skewness of a constant input is 0.
Stats16 stats16(std::span<const double> values);
Stats16 stats16(std::span<const float> values);

struct FeatureVector {
    std::vector<double> values;
    std::vector<std::string> schema;
};

// Names like "L0.mult.mean" and "L0.mult.dmean" for the first layer's filters.
std::vector<std::string> layerwise_schema(const GroupIndex& gi);
std::vector<std::string> subset_schema();

// stats16 of every group of every batchnorm-carrying layer, in layer order.
FeatureVector layerwise_features(std::span<const float> theta, const GroupIndex& gi);
Stats16 subset_features(std::span<const float> theta, const GroupIndex& gi, const SubsetSpec& spec);

// Uniform admissible subset starts (relative to the domain start).
std::vector<std::size_t> random_starts(const GroupIndex& gi, Domain d, std::size_t size, std::size_t count, Rng& rng);

enum class FeatureKind { layerwise, subset };
std::string_view to_string(FeatureKind k);
FeatureKind parse_feature_kind(std::string_view s);

struct FeaturizeConfig {
    FeatureKind kind = FeatureKind::subset;
    std::vector<int> snapshots{1, 20};  // 1-based positions among the 20 retained snapshots
    std::size_t subset_size = 5000;
    std::size_t subsets_per_vector = 10;
    Domain domain = Domain::all;
    std::uint64_t seed = 1;
};

// One row per (run, snapshot[, subset]); labels holds the category label of
// every hyper-parameter field in schema order.
struct FeatureRow {
    std::string run_id;
    int snapshot = 0;
    long long subset_start = -1;
    std::vector<std::string> labels;
    std::vector<double> values;
};

struct FeatureTable {
    std::vector<std::string> schema;
    std::vector<FeatureRow> rows;

    std::vector<std::vector<double>> matrix() const;
    // Category labels of one field, per row.
    std::vector<std::string> labels(Field f) const;
};

// Reads snapshots of ok runs under root/runs. Runs whose domain is shorter
// than the subset size are skipped and counted in `skipped`.
FeatureTable featurize(const std::filesystem::path& root, const std::vector<RunRecord>& records,
                       const FeaturizeConfig& cfg, std::size_t* skipped = nullptr);

void write_feature_csv(const std::filesystem::path& path, const FeatureTable& t);
FeatureTable read_feature_csv(const std::filesystem::path& path);

}  // namespace nws
