#include "nws/arch.hpp"

#include <gtest/gtest.h>

#include <array>

using namespace nws;

namespace {

// Independent layer-by-layer count: conv s*s*cin*cout + bias + 4 bn groups,
// hidden fc in*out + bias + 4 bn groups, output fc without bn.
std::pair<std::size_t, std::size_t> oracle_count(ArchParams p, std::size_t classes = 10) {
    const std::size_t b = static_cast<std::size_t>(p.conv_width) / 4;
    std::vector<std::size_t> ch;
    if (p.conv_depth == 3) ch = {b, 2 * b, 4 * b};
    if (p.conv_depth == 4) ch = {b, 2 * b, 4 * b, 4 * b};
    if (p.conv_depth == 5) ch = {b, 2 * b, 2 * b, 4 * b, 4 * b};
    const auto s = static_cast<std::size_t>(p.filter_size);
    std::size_t total = 0, cin = 3;
    for (auto c : ch) {
        total += s * s * cin * c + c + 4 * c;
        cin = c;
    }
    const std::size_t conv = total;
    std::size_t fin = 16 * cin;
    for (int c = 1; c < p.fc_depth; ++c) {
        const std::size_t w = static_cast<std::size_t>(p.fc_width) >> (c - 1);
        total += fin * w + w + 4 * w;
        fin = w;
    }
    total += fin * 2 * classes + 2 * classes;
    return {total, conv};
}

std::vector<ArchParams> grid() {
    std::vector<ArchParams> out;
    for (int s : {3, 5, 7})
        for (int dc : {3, 4, 5})
            for (int df : {3, 4, 5})
                for (int wc : {16, 32, 48})
                    for (int wf : {64, 128, 192}) out.push_back({s, dc, df, wc, wf});
    return out;
}

std::size_t first_fc_input(const ArchSpec& spec) {
    for (const auto& l : spec.layers)
        if (l.kind == LayerKind::fc) return l.hyper.in_channels;
    return 0;
}

}  // namespace

TEST(BuildCnn, FixedArchitectureCounts) {
    const auto c = count_weights(build_cnn({5, 3, 3, 32, 128}, 10));
    EXPECT_EQ(c.total, 92868u);
    EXPECT_EQ(c.conv_total, 16880u);
    EXPECT_EQ(c.fc_total, 75988u);
}

TEST(BuildCnn, GridExtremes) {
    EXPECT_EQ(count_weights(build_cnn({3, 3, 3, 16, 64}, 10)).total, 21260u);
    EXPECT_EQ(count_weights(build_cnn({7, 5, 5, 48, 192}, 10)).total, 388172u);
}

TEST(BuildCnn, FirstConvLayerGroups) {
    const auto c = count_weights(build_cnn({5, 3, 3, 32, 128}, 10));
    ASSERT_GE(c.groups.size(), 6u);
    EXPECT_EQ(c.groups[0].kind, GroupKind::mult);
    EXPECT_EQ(c.groups[0].length, 600u);
    EXPECT_EQ(c.groups[1].length, 8u);
    std::size_t bn = 0;
    for (std::size_t i = 2; i < 6; ++i) {
        EXPECT_EQ(c.groups[i].layer, 0u);
        bn += c.groups[i].length;
    }
    EXPECT_EQ(bn, 32u);
}

TEST(BuildCnn, WholeGridMatchesOracle) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& p : grid()) {
        const auto spec = build_cnn(p, 10);
        const auto c = count_weights(spec);
        const auto [total, conv] = oracle_count(p);
        EXPECT_EQ(c.total, total);
        EXPECT_EQ(c.conv_total, conv);
        EXPECT_EQ(c.conv_total + c.fc_total, c.total);
        std::size_t sum = 0;
        for (const auto& g : c.groups) sum += g.length;
        EXPECT_EQ(sum, c.total);
        lo = std::min(lo, c.total);
        hi = std::max(hi, c.total);

        // exactly three pools: 32x32 reaches 4x4 before the reshape
        std::size_t pools = 0;
        Shape before_reshape;
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            pools += spec.layers[i].kind == LayerKind::maxpool2d;
            if (spec.layers[i].kind == LayerKind::reshape) before_reshape = spec.layers[i - 1].out_shape;
        }
        EXPECT_EQ(pools, 3u);
        EXPECT_EQ(before_reshape[0], 4u);
        EXPECT_EQ(before_reshape[1], 4u);
        EXPECT_EQ(before_reshape[2], static_cast<std::size_t>(p.conv_width));
    }
    EXPECT_EQ(lo, 21260u);
    EXPECT_EQ(hi, 388172u);
}

TEST(BuildCnn, TotalMonotoneInEachField) {
    for (const auto& p : grid()) {
        const auto base = count_weights(build_cnn(p, 10)).total;
        auto bump = [&](auto member, std::array<int, 3> values) {
            for (std::size_t i = 0; i + 1 < values.size(); ++i) {
                if (p.*member != values[i]) continue;
                ArchParams q = p;
                q.*member = values[i + 1];
                EXPECT_GE(count_weights(build_cnn(q, 10)).total, base);
            }
        };
        bump(&ArchParams::filter_size, {3, 5, 7});
        bump(&ArchParams::conv_depth, {3, 4, 5});
        bump(&ArchParams::fc_depth, {3, 4, 5});
        bump(&ArchParams::conv_width, {16, 32, 48});
        bump(&ArchParams::fc_width, {64, 128, 192});
    }
}

TEST(BuildCnn, OutputWidthAndOptions) {
    EXPECT_EQ(build_cnn({}, 10).output_width(), 20u);
    CnnOptions o;
    o.double_output = false;
    EXPECT_EQ(build_cnn({}, 10, o).output_width(), 10u);
    o.batchnorm = false;
    const auto spec = build_cnn({}, 10, o);
    for (const auto& l : spec.layers) EXPECT_NE(l.kind, LayerKind::batchnorm);
}

TEST(BuildCnn, RejectsInvalidFields) {
    EXPECT_THROW(build_cnn({4, 3, 3, 32, 128}, 10), ConfigError);
    EXPECT_THROW(build_cnn({5, 6, 3, 32, 128}, 10), ConfigError);
    EXPECT_THROW(build_cnn({5, 3, 3, 24, 128}, 10), ConfigError);
}

TEST(BuildCnn, LayerTableIsStable) {
    const auto a = build_cnn({}, 10);
    const auto b = build_cnn({}, 10);
    EXPECT_EQ(a.to_text(), b.to_text());
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_NE(a.hash(), build_cnn({3, 3, 3, 32, 128}, 10).hash());
    EXPECT_NE(a.to_text().find("conv2d"), std::string::npos);
}

TEST(BuildDmc, GlobalMatchesTable) {
    const auto spec = build_dmc(DmcKind::global, 92868, 5);
    EXPECT_EQ(first_fc_input(spec), 5632u);
    EXPECT_EQ(count_weights(spec).total, 10948997u);
    const auto s = dmc_schedule(DmcKind::global, 92868);
    const std::vector<bool> expected{true, true, true, true, true, true, true, true, true, false, true, false, true, false, true};
    EXPECT_EQ(s.pooled, expected);
}

TEST(BuildDmc, LocalMatchesTable) {
    const auto spec = build_dmc(DmcKind::local, 5000, 5);
    EXPECT_EQ(first_fc_input(spec), 4864u);
    EXPECT_EQ(count_weights(spec).total, 10407685u);
    const auto s = dmc_schedule(DmcKind::local, 5000);
    const std::vector<bool> expected{true, true, false, true, false, true, true, true, true, false, false, true};
    EXPECT_EQ(s.pooled, expected);
}

TEST(BuildDmc, ShortInputDropsPools) {
    const auto s = dmc_schedule(DmcKind::local, 100);
    std::size_t pools = 0;
    for (bool p : s.pooled) pools += p;
    EXPECT_EQ(pools, 2u);
    EXPECT_EQ(s.pre_fc_length, 25u);
    EXPECT_EQ(first_fc_input(build_dmc(DmcKind::local, 100, 3)), 25u * 256u);
}

TEST(BuildDmc, PreFcLengthInBand) {
    for (std::size_t len : {40u, 64u, 500u, 1000u, 2000u, 5000u, 10000u, 20000u}) {
        const auto s = dmc_schedule(DmcKind::local, len);
        EXPECT_GE(s.pre_fc_length, 16u) << len;
        EXPECT_LE(s.pre_fc_length, 38u) << len;
    }
}

TEST(BuildDmc, Errors) {
    EXPECT_THROW(build_dmc(DmcKind::local, 15, 2), ConfigError);
    EXPECT_THROW(build_dmc(DmcKind::local, 100, 1), ConfigError);
}

TEST(BuildDmc, ForwardShapeThroughEngine) {
    const auto spec = build_dmc(DmcKind::local, 128, 3);
    auto net = instantiate<float>(spec, InitScheme::glorot_normal, Rng(1), Rng(2));
    Tensor<float> x({2, 128, 1}, 0.25f);
    x.data[5] = 1.0f;
    auto y = net.forward(x, Mode::infer);
    EXPECT_EQ(y.shape, (Shape{2, 3}));
}
