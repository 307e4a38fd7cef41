#pragma once

#include "nws/hp_space.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nws {

enum class StopReason { overfit, noisy_decline, stationary, epoch_cap, numeric_failure };

std::string_view to_string(StopReason r);
StopReason parse_stop_reason(std::string_view s);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_acc = 0;
    double valid_acc = 0;
    double test_acc = 0;
    double loss = 0;

    bool operator==(const EpochMetrics&) const = default;
};

struct RunRecord {
    std::string id;
    HyperParams hp;
    std::uint64_t seed = 0;
    std::string status = "ok";  // ok | failed
    std::string failure;        // message for failed runs
    StopReason stop_reason = StopReason::epoch_cap;
    std::vector<EpochMetrics> epochs;
    std::vector<int> snapshot_epochs;        // 20 entries for completed runs
    std::vector<std::string> snapshot_files;  // relative to the run directory
    std::uint64_t arch_hash = 0;
    std::size_t weight_count = 0;
    std::size_t conv_end = 0;
    // Kept out of the manifest so that rebuilt manifests are byte-identical.
    double duration_seconds = 0;

    bool ok() const { return status == "ok"; }
    double final_test_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().test_acc; }
    int final_epoch() const { return epochs.empty() ? 0 : epochs.back().epoch; }
};

Json to_json(const RunRecord& r);
RunRecord run_record_from_json(const Json& j);

// Zero-padded run id, e.g. run_id(7) == "r000007".
std::string run_id(std::size_t index);

}  // namespace nws
