#include "nws/run_record.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>

namespace nws {

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::overfit: return "overfit";
        case StopReason::noisy_decline: return "noisy-decline";
        case StopReason::stationary: return "stationary";
        case StopReason::epoch_cap: return "epoch-cap";
        case StopReason::numeric_failure: return "numeric-failure";
    }
    return "?";
}

StopReason parse_stop_reason(std::string_view s) {
    for (auto r : {StopReason::overfit, StopReason::noisy_decline, StopReason::stationary, StopReason::epoch_cap,
                   StopReason::numeric_failure})
        if (to_string(r) == s) return r;
    throw FormatError(fmt::format("unknown stop reason '{}'", s));
}

std::string run_id(std::size_t index) { return fmt::format("r{:06d}", index); }

Json to_json(const RunRecord& r) {
    Json j;
    j["id"] = r.id;
    j["status"] = r.status;
    if (!r.failure.empty()) j["failure"] = r.failure;
    j["seed"] = r.seed;
    j["hp"] = to_json(r.hp);
    j["stop_reason"] = to_string(r.stop_reason);
    j["arch_hash"] = fmt::format("{:016x}", r.arch_hash);
    j["weight_count"] = r.weight_count;
    j["conv_end"] = r.conv_end;
    j["snapshot_epochs"] = r.snapshot_epochs;
    j["snapshot_files"] = r.snapshot_files;
    Json epochs = Json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"lr", e.lr},
                          {"train_acc", e.train_acc},
                          {"valid_acc", e.valid_acc},
                          {"test_acc", e.test_acc},
                          {"loss", e.loss}});
    j["epochs"] = std::move(epochs);
    return j;
}

RunRecord run_record_from_json(const Json& j) {
    try {
        RunRecord r;
        r.id = j.at("id").get<std::string>();
        r.status = j.at("status").get<std::string>();
        r.failure = j.value("failure", std::string{});
        r.seed = j.at("seed").get<std::uint64_t>();
        r.hp = hyper_params_from_json(j.at("hp"));
        r.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
        r.arch_hash = std::stoull(j.at("arch_hash").get<std::string>(), nullptr, 16);
        r.weight_count = j.at("weight_count").get<std::size_t>();
        r.conv_end = j.at("conv_end").get<std::size_t>();
        r.snapshot_epochs = j.at("snapshot_epochs").get<std::vector<int>>();
        r.snapshot_files = j.at("snapshot_files").get<std::vector<std::string>>();
        for (const auto& e : j.at("epochs"))
            r.epochs.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("train_acc").get<double>(),
                                e.at("valid_acc").get<double>(), e.at("test_acc").get<double>(),
                                e.at("loss").get<double>()});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("malformed run record: {}", e.what()));
    }
}

}  // namespace nws
