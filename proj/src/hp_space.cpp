#include "nws/hp_space.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace nws {

std::string_view to_string(SamplingMode m) { return m == SamplingMode::free ? "free" : "fixed-arch"; }

SamplingMode parse_sampling_mode(std::string_view s) {
    if (s == "free") return SamplingMode::free;
    if (s == "fixed-arch") return SamplingMode::fixed_arch;
    throw ConfigError(fmt::format("unknown sampling mode '{}'", s));
}

std::string_view field_name(Field f) {
    switch (f) {
        case Field::dataset: return "dataset";
        case Field::batch_size: return "batch_size";
        case Field::augmentation: return "augmentation";
        case Field::optimizer: return "optimizer";
        case Field::activation: return "activation";
        case Field::initialization: return "initialization";
        case Field::filter_size: return "filter_size";
        case Field::conv_depth: return "conv_depth";
        case Field::fc_depth: return "fc_depth";
        case Field::conv_width: return "conv_width";
        case Field::fc_width: return "fc_width";
    }
    return "?";
}

Field parse_field(std::string_view name) {
    for (auto f : kAllFields)
        if (field_name(f) == name) return f;
    throw ConfigError(fmt::format("unknown hyper-parameter '{}'", name));
}

const std::vector<std::string>& field_labels(Field f) {
    static const std::array<std::vector<std::string>, kFieldCount> labels = {{
        {"mnist", "cifar10", "svhn", "stl10", "fashion_mnist"},
        {"32", "64", "128", "256"},
        {"off", "on"},
        {"adam", "rmsprop", "momentum"},
        {"relu", "elu", "sigmoid", "tanh"},
        {"constant", "random_normal", "glorot_uniform", "glorot_normal"},
        {"3", "5", "7"},
        {"3", "4", "5"},
        {"3", "4", "5"},
        {"16", "32", "48"},
        {"64", "128", "192"},
    }};
    return labels[static_cast<std::size_t>(f)];
}

namespace {

int index_of(Field f, const std::string& label) {
    const auto& l = field_labels(f);
    for (std::size_t i = 0; i < l.size(); ++i)
        if (l[i] == label) return static_cast<int>(i);
    return -1;
}

int int_label(Field f, int index) { return std::stoi(field_labels(f).at(static_cast<std::size_t>(index))); }

}  // namespace

std::string category_label(const HyperParams& hp, Field f) {
    switch (f) {
        case Field::dataset: return hp.dataset;
        case Field::batch_size: return std::to_string(hp.batch_size);
        case Field::augmentation: return hp.augmentation ? "on" : "off";
        case Field::optimizer: return std::string(to_string(hp.optimizer));
        case Field::activation: return std::string(to_string(hp.activation));
        case Field::initialization: return std::string(to_string(hp.initialization));
        case Field::filter_size: return std::to_string(hp.arch.filter_size);
        case Field::conv_depth: return std::to_string(hp.arch.conv_depth);
        case Field::fc_depth: return std::to_string(hp.arch.fc_depth);
        case Field::conv_width: return std::to_string(hp.arch.conv_width);
        case Field::fc_width: return std::to_string(hp.arch.fc_width);
    }
    return {};
}

int category_index(const HyperParams& hp, Field f) { return index_of(f, category_label(hp, f)); }

void set_category(HyperParams& hp, Field f, int index) {
    if (index < 0 || static_cast<std::size_t>(index) >= category_count(f))
        throw ConfigError(fmt::format("{}: category index {} out of range", field_name(f), index));
    const auto& label = field_labels(f)[static_cast<std::size_t>(index)];
    switch (f) {
        case Field::dataset: hp.dataset = label; break;
        case Field::batch_size: hp.batch_size = int_label(f, index); break;
        case Field::augmentation: hp.augmentation = index == 1; break;
        case Field::optimizer: hp.optimizer = parse_optimizer(label); break;
        case Field::activation: hp.activation = parse_activation(label); break;
        case Field::initialization: hp.initialization = parse_init(label); break;
        case Field::filter_size: hp.arch.filter_size = int_label(f, index); break;
        case Field::conv_depth: hp.arch.conv_depth = int_label(f, index); break;
        case Field::fc_depth: hp.arch.fc_depth = int_label(f, index); break;
        case Field::conv_width: hp.arch.conv_width = int_label(f, index); break;
        case Field::fc_width: hp.arch.fc_width = int_label(f, index); break;
    }
}

void HyperParamSchema::restrict(Field f, const std::vector<std::string>& labels) {
    auto& a = allowed[static_cast<std::size_t>(f)];
    a.clear();
    for (const auto& l : labels) {
        const int i = index_of(f, l);
        if (i < 0) throw ConfigError(fmt::format("{}: unknown category '{}'", field_name(f), l));
        a.push_back(i);
    }
}

HyperParams sample(const HyperParamSchema& schema, Rng& rng, SamplingMode mode) {
    HyperParams hp;
    hp.mode = mode;
    auto draw = [&](Field f) {
        const auto& a = schema.allowed[static_cast<std::size_t>(f)];
        if (a.empty()) return static_cast<int>(rng.below(category_count(f)));
        return a[rng.below(a.size())];
    };
    set_category(hp, Field::dataset, draw(Field::dataset));
    if (schema.log_uniform_lr)
        hp.learning_rate = std::exp(rng.uniform(std::log(schema.lr_min), std::log(schema.lr_max)));
    else
        hp.learning_rate = rng.uniform(schema.lr_min, schema.lr_max);
    hp.learning_rate = std::clamp(hp.learning_rate, schema.lr_min, schema.lr_max);
    for (std::size_t i = 1; i < kFieldCount; ++i) set_category(hp, kAllFields[i], draw(kAllFields[i]));
    if (mode == SamplingMode::fixed_arch) hp.arch = kFixedArch;
    if (schema.dataset_override) hp.dataset = *schema.dataset_override;
    return hp;
}

std::array<double, kDesignRowLength> encode_design_row(const HyperParams& hp) {
    std::array<double, kDesignRowLength> row{};
    row[0] = 1.0;
    row[1] = hp.learning_rate;
    std::size_t offset = 2;
    for (std::size_t i = 1; i < kFieldCount; ++i) {
        const Field f = kAllFields[i];
        const int idx = category_index(hp, f);
        if (idx < 0) throw ConfigError(fmt::format("{}: value outside schema", field_name(f)));
        row[offset + static_cast<std::size_t>(idx)] = 1.0;
        offset += category_count(f);
    }
    return row;
}

std::vector<std::string> design_row_names() {
    std::vector<std::string> names = {"intercept", "learning_rate"};
    for (std::size_t i = 1; i < kFieldCount; ++i)
        for (const auto& l : field_labels(kAllFields[i])) names.push_back(fmt::format("{}={}", field_name(kAllFields[i]), l));
    return names;
}

Json to_json(const HyperParams& hp) {
    Json j;
    j["dataset"] = hp.dataset;
    j["learning_rate"] = hp.learning_rate;
    j["batch_size"] = hp.batch_size;
    j["augmentation"] = hp.augmentation;
    j["optimizer"] = to_string(hp.optimizer);
    j["activation"] = to_string(hp.activation);
    j["initialization"] = to_string(hp.initialization);
    j["filter_size"] = hp.arch.filter_size;
    j["conv_depth"] = hp.arch.conv_depth;
    j["fc_depth"] = hp.arch.fc_depth;
    j["conv_width"] = hp.arch.conv_width;
    j["fc_width"] = hp.arch.fc_width;
    j["mode"] = to_string(hp.mode);
    return j;
}

HyperParams hyper_params_from_json(const Json& j) {
    HyperParams hp;
    hp.dataset = j.at("dataset").get<std::string>();
    hp.learning_rate = j.at("learning_rate").get<double>();
    hp.batch_size = j.at("batch_size").get<int>();
    hp.augmentation = j.at("augmentation").get<bool>();
    hp.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    hp.activation = parse_activation(j.at("activation").get<std::string>());
    hp.initialization = parse_init(j.at("initialization").get<std::string>());
    hp.arch.filter_size = j.at("filter_size").get<int>();
    hp.arch.conv_depth = j.at("conv_depth").get<int>();
    hp.arch.fc_depth = j.at("fc_depth").get<int>();
    hp.arch.conv_width = j.at("conv_width").get<int>();
    hp.arch.fc_width = j.at("fc_width").get<int>();
    hp.mode = parse_sampling_mode(j.at("mode").get<std::string>());
    return hp;
}

}  // namespace nws
