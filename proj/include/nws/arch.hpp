#pragma once

#include "nws/init.hpp"
#include "nws/layer.hpp"
#include "nws/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nws {

// The five architecture hyper-parameters. conv_width is the channel count of
// the LAST conv layer, fc_width the width of the FIRST fc layer.
struct ArchParams {
    int filter_size = 5;
    int conv_depth = 3;
    int fc_depth = 3;
    int conv_width = 32;
    int fc_width = 128;

    bool operator==(const ArchParams&) const = default;
};

struct CnnOptions {
    Activation activation = Activation::relu;
    bool batchnorm = true;
    // Output layer is 2 * num_classes wide unless this is false.
    bool double_output = true;
};

struct LayerSpec {
    LayerKind kind = LayerKind::activation;
    LayerHyper hyper;
    Shape out_shape;  // per sample
};

struct ArchSpec {
    std::string family;  // "cnn", "dmc-global", "dmc-local"
    Shape input_shape;   // per sample
    std::vector<LayerSpec> layers;

    std::size_t output_width() const;
    // Human-readable layer table, embedded in run manifests.
    std::string to_text() const;
    std::uint64_t hash() const;
};

enum class GroupKind : std::uint8_t { mult = 0, bias = 1, bn_beta = 2, bn_gamma = 3, bn_mean = 4, bn_var = 5 };

std::string_view to_string(GroupKind k);

struct GroupRecord {
    std::size_t layer = 0;  // ordinal among conv/fc layers
    GroupKind kind = GroupKind::mult;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const GroupRecord&) const = default;
};

struct GroupIndex {
    std::vector<GroupRecord> groups;
    std::size_t conv_end = 0;

    std::size_t total() const { return groups.empty() ? 0 : groups.back().offset + groups.back().length; }
    bool operator==(const GroupIndex&) const = default;
};

struct WeightCounts {
    std::size_t total = 0;
    std::size_t conv_total = 0;
    std::size_t fc_total = 0;
    std::vector<GroupRecord> groups;
};

// Vectorization layout: per weight layer, mult then bias, then the
// batchnorm groups (beta, gamma, mean, var) of the batchnorm that follows it.
GroupIndex group_layout(const ArchSpec& spec);
WeightCounts count_weights(const ArchSpec& spec);

void validate(const ArchParams& p);
ArchSpec build_cnn(const ArchParams& arch, int num_classes, const CnnOptions& options = {});

enum class DmcKind { global, local };
std::string_view to_string(DmcKind k);

struct DmcSchedule {
    std::vector<std::size_t> channels;  // out channels of conv layers 1..n
    std::vector<bool> pooled;           // pool after conv layer i
    std::size_t pre_fc_length = 0;
};

DmcSchedule dmc_schedule(DmcKind kind, std::size_t input_len);
ArchSpec build_dmc(DmcKind kind, std::size_t input_len, std::size_t num_targets);

template <typename Real>
Network<Real> instantiate(const ArchSpec& spec, InitScheme scheme, Rng init_rng, Rng dropout_rng);

}  // namespace nws
