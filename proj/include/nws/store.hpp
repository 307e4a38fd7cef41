#pragma once

#include "nws/arch.hpp"
#include "nws/run_record.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nws {

struct WeightVector {
    std::vector<float> theta;
    GroupIndex index;
};

// Group index of an instantiated layer stack; equals group_layout() of the
// spec it was built from.
template <typename Real>
GroupIndex group_index(const std::vector<LayerState<Real>>& layers);

template <typename Real>
WeightVector vectorize(const std::vector<LayerState<Real>>& layers);

// Writes theta back into the layers; throws ShapeError on a layout mismatch.
template <typename Real>
void devectorize(std::span<const float> theta, std::vector<LayerState<Real>>& layers);

inline constexpr char kSnapshotMagic[4] = {'N', 'W', 'S', '1'};
inline constexpr std::uint16_t kSnapshotVersion = 1;

struct Snapshot {
    std::uint64_t arch_hash = 0;
    WeightVector weights;
    Json meta = Json::object();
};

// Written to a temporary sibling and renamed, so readers never see a partial file.
void write_snapshot(const std::filesystem::path& path, const Snapshot& snap);
Snapshot read_snapshot(const std::filesystem::path& path);

// Header only (no payload, no checksum check).
struct SnapshotHeader {
    std::uint64_t arch_hash = 0;
    GroupIndex index;
    Json meta;
    std::uint64_t payload_offset = 0;
};
SnapshotHeader read_snapshot_header(const std::filesystem::path& path);
// Reads count floats starting at element offset without verifying the CRC.
std::vector<float> read_snapshot_slice(const std::filesystem::path& path, std::size_t offset, std::size_t count);

enum class Domain { all, conv_only, fc_only };
std::string_view to_string(Domain d);
Domain parse_domain(std::string_view s);

struct DomainRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};
DomainRange domain_range(const GroupIndex& gi, Domain d);

// theta_[a:b] with b = a + size - 1, a relative to the domain start.
struct SubsetSpec {
    std::size_t start = 0;
    std::size_t size = 5000;
    Domain domain = Domain::all;
    std::size_t end() const { return start + size - 1; }
};

void validate(const SubsetSpec& s, const GroupIndex& gi);
std::vector<float> extract_subset(std::span<const float> theta, const GroupIndex& gi, const SubsetSpec& s);
std::vector<float> read_subset(const std::filesystem::path& snapshot, const SubsetSpec& s);

// Manifest: JSON lines ordered by run id.
void append_manifest(const std::filesystem::path& manifest, const RunRecord& r);
std::vector<RunRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::vector<RunRecord> records);
// Rebuilds from runs/<id>/record.json under root; returns the record count.
std::size_t rebuild_manifest(const std::filesystem::path& root, const std::filesystem::path& manifest);

void write_run_record(const std::filesystem::path& run_dir, const RunRecord& r);
RunRecord read_run_record(const std::filesystem::path& run_dir);

struct ConvergenceThresholds {
    std::map<std::string, double> by_dataset{
        {"mnist", 0.80}, {"cifar10", 0.25}, {"svhn", 0.50}, {"stl10", 0.25}, {"fashion_mnist", 0.50}};
};

// Keeps ok records whose final test accuracy reaches the dataset threshold.
std::vector<RunRecord> filter_converged(const std::vector<RunRecord>& records, const ConvergenceThresholds& t = {});

}  // namespace nws
