#pragma once

#include "nws/arch.hpp"
#include "nws/init.hpp"
#include "nws/optimizer.hpp"
#include "nws/rng.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace nws {

enum class SamplingMode { free, fixed_arch };

std::string_view to_string(SamplingMode m);
SamplingMode parse_sampling_mode(std::string_view s);

// Categorical hyper-parameters in schema order. dataset comes first and is
// excluded from regression design rows.
enum class Field {
    dataset,
    batch_size,
    augmentation,
    optimizer,
    activation,
    initialization,
    filter_size,
    conv_depth,
    fc_depth,
    conv_width,
    fc_width,
};

inline constexpr std::size_t kFieldCount = 11;
inline constexpr std::array<Field, kFieldCount> kAllFields = {
    Field::dataset,        Field::batch_size,  Field::augmentation, Field::optimizer,
    Field::activation,     Field::initialization, Field::filter_size, Field::conv_depth,
    Field::fc_depth,       Field::conv_width,  Field::fc_width};

std::string_view field_name(Field f);
Field parse_field(std::string_view name);
// Category labels, e.g. {"32","64","128","256"} for batch_size.
const std::vector<std::string>& field_labels(Field f);
inline std::size_t category_count(Field f) { return field_labels(f).size(); }

struct HyperParams {
    std::string dataset = "mnist";
    double learning_rate = 1e-3;
    int batch_size = 64;
    bool augmentation = false;
    OptimizerKind optimizer = OptimizerKind::adam;
    Activation activation = Activation::relu;
    InitScheme initialization = InitScheme::glorot_normal;
    ArchParams arch;
    SamplingMode mode = SamplingMode::free;

    bool operator==(const HyperParams&) const = default;
};

// Index of hp's value within field_labels(f); -1 for a dataset outside the
// five standard ones (e.g. synthetic).
int category_index(const HyperParams& hp, Field f);
void set_category(HyperParams& hp, Field f, int index);
std::string category_label(const HyperParams& hp, Field f);

struct HyperParamSchema {
    double lr_min = 0.0002;
    double lr_max = 0.005;
    bool log_uniform_lr = false;
    // Allowed category indices per field; empty means all.
    std::array<std::vector<int>, kFieldCount> allowed{};
    // Pin the dataset name (e.g. "synthetic") instead of drawing it.
    std::optional<std::string> dataset_override;

    void restrict(Field f, const std::vector<std::string>& labels);
};

inline constexpr ArchParams kFixedArch{5, 3, 3, 32, 128};

HyperParams sample(const HyperParamSchema& schema, Rng& rng, SamplingMode mode);

inline constexpr std::size_t kDesignRowLength = 34;
// [1, learning_rate, 32 one-hot indicators over the 10 non-dataset fields].
std::array<double, kDesignRowLength> encode_design_row(const HyperParams& hp);
// Column names matching encode_design_row.
std::vector<std::string> design_row_names();

using Json = nlohmann::ordered_json;

Json to_json(const HyperParams& hp);
HyperParams hyper_params_from_json(const Json& j);

}  // namespace nws
