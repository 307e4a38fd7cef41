#include "nws/arch.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>

namespace nws {

std::string_view to_string(GroupKind k) {
    switch (k) {
        case GroupKind::mult: return "mult";
        case GroupKind::bias: return "bias";
        case GroupKind::bn_beta: return "bn_beta";
        case GroupKind::bn_gamma: return "bn_gamma";
        case GroupKind::bn_mean: return "bn_mean";
        case GroupKind::bn_var: return "bn_var";
    }
    return "?";
}

std::string_view to_string(DmcKind k) { return k == DmcKind::global ? "global" : "local"; }

std::size_t ArchSpec::output_width() const { return layers.empty() ? 0 : shape_size(layers.back().out_shape); }

std::string ArchSpec::to_text() const {
    std::string out = fmt::format("arch {} input {}\n", family, shape_string(input_shape));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        out += fmt::format("{:3d} {:<10}", i, to_string(l.kind));
        switch (l.kind) {
            case LayerKind::conv2d:
            case LayerKind::conv1d:
                out += fmt::format(" k={} {}->{}", l.hyper.kernel, l.hyper.in_channels, l.hyper.out_channels);
                break;
            case LayerKind::fc: out += fmt::format(" {}->{}", l.hyper.in_channels, l.hyper.out_channels); break;
            case LayerKind::batchnorm: out += fmt::format(" c={}", l.hyper.in_channels); break;
            case LayerKind::activation: out += fmt::format(" {}", to_string(l.hyper.activation)); break;
            case LayerKind::dropout: out += fmt::format(" keep={}", l.hyper.keep_prob); break;
            default: break;
        }
        out += fmt::format(" out={}\n", shape_string(l.out_shape));
    }
    return out;
}

std::uint64_t ArchSpec::hash() const { return fnv1a64(to_text()); }

GroupIndex group_layout(const ArchSpec& spec) {
    GroupIndex gi;
    std::size_t offset = 0;
    std::size_t weight_layer = 0;
    bool seen_weight_layer = false;
    bool in_conv = true;
    auto add = [&](GroupKind kind, std::size_t len) {
        gi.groups.push_back({weight_layer, kind, offset, len});
        offset += len;
    };
    for (const auto& l : spec.layers) {
        if (has_mult(l.kind)) {
            if (seen_weight_layer) ++weight_layer;
            seen_weight_layer = true;
            if (!is_conv(l.kind) && in_conv) {
                gi.conv_end = offset;
                in_conv = false;
            }
            const std::size_t field =
                l.kind == LayerKind::conv2d ? l.hyper.kernel * l.hyper.kernel : (l.kind == LayerKind::conv1d ? l.hyper.kernel : 1);
            add(GroupKind::mult, field * l.hyper.in_channels * l.hyper.out_channels);
            add(GroupKind::bias, l.hyper.out_channels);
        } else if (l.kind == LayerKind::batchnorm) {
            if (!seen_weight_layer) throw ShapeError("batchnorm before any conv/fc layer cannot be vectorized");
            for (auto k : {GroupKind::bn_beta, GroupKind::bn_gamma, GroupKind::bn_mean, GroupKind::bn_var})
                add(k, l.hyper.in_channels);
        }
    }
    if (in_conv) gi.conv_end = offset;
    return gi;
}

WeightCounts count_weights(const ArchSpec& spec) {
    WeightCounts c;
    const auto gi = group_layout(spec);
    c.groups = gi.groups;
    c.total = gi.total();
    c.conv_total = gi.conv_end;
    c.fc_total = c.total - c.conv_total;
    return c;
}

void validate(const ArchParams& p) {
    auto in = [](int v, std::array<int, 3> set) { return std::find(set.begin(), set.end(), v) != set.end(); };
    if (!in(p.filter_size, {3, 5, 7})) throw ConfigError(fmt::format("filter_size {} not in {{3,5,7}}", p.filter_size));
    if (!in(p.conv_depth, {3, 4, 5})) throw ConfigError(fmt::format("conv_depth {} not in {{3,4,5}}", p.conv_depth));
    if (!in(p.fc_depth, {3, 4, 5})) throw ConfigError(fmt::format("fc_depth {} not in {{3,4,5}}", p.fc_depth));
    if (!in(p.conv_width, {16, 32, 48})) throw ConfigError(fmt::format("conv_width {} not in {{16,32,48}}", p.conv_width));
    if (!in(p.fc_width, {64, 128, 192})) throw ConfigError(fmt::format("fc_width {} not in {{64,128,192}}", p.fc_width));
}

namespace {

class SpecBuilder {
public:
    SpecBuilder(std::string family, Shape input) {
        spec_.family = std::move(family);
        spec_.input_shape = input;
        shape_ = std::move(input);
    }

    void conv(LayerKind kind, std::size_t kernel, std::size_t out) {
        LayerHyper h;
        h.kernel = kernel;
        h.in_channels = shape_.back();
        h.out_channels = out;
        shape_.back() = out;
        push(kind, h);
    }
    void fc(std::size_t out) {
        LayerHyper h;
        h.in_channels = shape_.back();
        h.out_channels = out;
        shape_ = {out};
        push(LayerKind::fc, h);
    }
    void batchnorm() {
        LayerHyper h;
        h.in_channels = shape_.back();
        push(LayerKind::batchnorm, h);
    }
    void activation(Activation a) {
        LayerHyper h;
        h.activation = a;
        push(LayerKind::activation, h);
    }
    void dropout(double keep) {
        LayerHyper h;
        h.keep_prob = keep;
        push(LayerKind::dropout, h);
    }
    void pool(LayerKind kind) {
        if (kind == LayerKind::maxpool2d) {
            shape_[0] /= 2;
            shape_[1] /= 2;
        } else {
            shape_[0] /= 2;
        }
        push(kind, {});
    }
    void reshape() {
        shape_ = {shape_size(shape_)};
        push(LayerKind::reshape, {});
    }
    ArchSpec finish() { return std::move(spec_); }

private:
    void push(LayerKind kind, const LayerHyper& h) { spec_.layers.push_back({kind, h, shape_}); }

    ArchSpec spec_;
    Shape shape_;
};

}  // namespace

ArchSpec build_cnn(const ArchParams& arch, int num_classes, const CnnOptions& options) {
    validate(arch);
    if (num_classes < 2) throw ConfigError("build_cnn: need at least 2 classes");
    const auto s = static_cast<std::size_t>(arch.filter_size);
    const auto base = static_cast<std::size_t>(arch.conv_width / 4);

    // Channel sequence and pool placement of the conv stack; three pools
    // take 32x32 down to 4x4.
    std::vector<std::pair<std::size_t, bool>> convs;
    convs.push_back({base, true});
    convs.push_back({2 * base, arch.conv_depth <= 4});
    if (arch.conv_depth > 4) convs.push_back({2 * base, true});
    convs.push_back({4 * base, arch.conv_depth <= 3});
    if (arch.conv_depth > 3) convs.push_back({4 * base, true});

    SpecBuilder b("cnn", {32, 32, 3});
    for (auto [channels, pooled] : convs) {
        b.conv(LayerKind::conv2d, s, channels);
        if (options.batchnorm) b.batchnorm();
        b.activation(options.activation);
        if (pooled) b.pool(LayerKind::maxpool2d);
    }
    b.reshape();
    for (int c = 1; c <= arch.fc_depth - 1; ++c) {
        b.fc(static_cast<std::size_t>(arch.fc_width) >> (c - 1));
        if (options.batchnorm) b.batchnorm();
        b.activation(options.activation);
        b.dropout(0.5);
    }
    b.fc(static_cast<std::size_t>(options.double_output ? 2 * num_classes : num_classes));
    return b.finish();
}

DmcSchedule dmc_schedule(DmcKind kind, std::size_t input_len) {
    if (input_len < 16) throw ConfigError(fmt::format("build_dmc: input length {} below minimum 16", input_len));
    DmcSchedule s;
    std::vector<std::size_t> fixed;     // 1-based conv layers pooled regardless of length
    std::vector<std::size_t> priority;  // optional pools among layers 6-11
    if (kind == DmcKind::global) {
        s.channels = {8, 16, 32, 64, 128, 128, 128, 128, 128, 128, 256, 256, 256, 256, 256};
        fixed = {1, 2, 3, 4, 5, 13, 15};
        priority = {6, 7, 8, 9, 11, 10};
    } else {
        s.channels = {8, 16, 32, 64, 128, 256, 256, 256, 256, 256, 256, 256};
        fixed = {1, 2, 4, 12};
        priority = {6, 7, 8, 9, 10, 11};
    }
    s.pooled.assign(s.channels.size(), false);
    for (auto l : fixed) s.pooled[l - 1] = true;
    auto length = [&] {
        std::size_t len = input_len;
        for (bool p : s.pooled)
            if (p) len /= 2;
        return len;
    };
    for (auto l : priority) {
        if (length() <= 38) break;
        s.pooled[l - 1] = true;
    }
    // Short inputs: drop fixed pools from the deepest layer up.
    for (auto it = fixed.rbegin(); it != fixed.rend() && length() < 16; ++it) s.pooled[*it - 1] = false;
    s.pre_fc_length = length();
    return s;
}

ArchSpec build_dmc(DmcKind kind, std::size_t input_len, std::size_t num_targets) {
    if (num_targets < 2) throw ConfigError("build_dmc: need at least 2 targets");
    const auto sched = dmc_schedule(kind, input_len);
    SpecBuilder b(fmt::format("dmc-{}", to_string(kind)), {input_len, 1});
    for (std::size_t i = 0; i < sched.channels.size(); ++i) {
        b.conv(LayerKind::conv1d, 5, sched.channels[i]);
        b.batchnorm();
        b.activation(Activation::relu);
        if (sched.pooled[i]) b.pool(LayerKind::maxpool1d);
    }
    b.reshape();
    for (std::size_t w : {1024, 1024, 1024, 1024, 64}) {
        b.fc(w);
        b.batchnorm();
        b.activation(Activation::relu);
        b.dropout(0.5);
    }
    b.fc(num_targets);
    return b.finish();
}

template <typename Real>
Network<Real> instantiate(const ArchSpec& spec, InitScheme scheme, Rng init_rng, Rng dropout_rng) {
    std::vector<LayerState<Real>> layers;
    layers.reserve(spec.layers.size());
    for (const auto& ls : spec.layers) {
        auto l = make_layer<Real>(ls.kind, ls.hyper);
        init_params(scheme, l, init_rng);
        layers.push_back(std::move(l));
    }
    return Network<Real>(spec.input_shape, std::move(layers), dropout_rng);
}

template Network<float> instantiate(const ArchSpec&, InitScheme, Rng, Rng);
template Network<double> instantiate(const ArchSpec&, InitScheme, Rng, Rng);

}  // namespace nws
