#include "nws/hp_space.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace nws;

TEST(Schema, CategoryCounts) {
    std::size_t sum = 0;
    for (std::size_t i = 1; i < kFieldCount; ++i) sum += category_count(kAllFields[i]);
    EXPECT_EQ(sum, 32u);
    EXPECT_EQ(category_count(Field::dataset), 5u);
    EXPECT_EQ(category_count(Field::batch_size), 4u);
    EXPECT_EQ(category_count(Field::initialization), 4u);
    EXPECT_EQ(design_row_names().size(), kDesignRowLength);
}

TEST(Sample, FixedArchPinsArchitecture) {
    HyperParamSchema schema;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        EXPECT_EQ(sample(schema, rng, SamplingMode::fixed_arch).arch, (ArchParams{5, 3, 3, 32, 128}));
    }
}

TEST(Sample, LearningRateInRange) {
    HyperParamSchema schema;
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const auto hp = sample(schema, rng, SamplingMode::free);
        EXPECT_GE(hp.learning_rate, 0.0002);
        EXPECT_LE(hp.learning_rate, 0.005);
    }
    schema.log_uniform_lr = true;
    for (int i = 0; i < 1000; ++i) {
        const auto hp = sample(schema, rng, SamplingMode::free);
        EXPECT_GE(hp.learning_rate, 0.0002);
        EXPECT_LE(hp.learning_rate, 0.005);
    }
}

TEST(Sample, Deterministic) {
    HyperParamSchema schema;
    Rng a(42), b(42);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sample(schema, a, SamplingMode::free), sample(schema, b, SamplingMode::free));
}

TEST(Sample, CategoricalFrequenciesUniform) {
    HyperParamSchema schema;
    Rng rng(7);
    const int n = 100000;
    std::array<std::vector<int>, kFieldCount> counts;
    for (std::size_t f = 0; f < kFieldCount; ++f) counts[f].assign(category_count(kAllFields[f]), 0);
    for (int i = 0; i < n; ++i) {
        const auto hp = sample(schema, rng, SamplingMode::free);
        for (std::size_t f = 0; f < kFieldCount; ++f) ++counts[f][static_cast<std::size_t>(category_index(hp, kAllFields[f]))];
    }
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        const double p = 1.0 / static_cast<double>(counts[f].size());
        const double sd = std::sqrt(n * p * (1 - p));
        for (int c : counts[f]) EXPECT_LT(std::abs(c - n * p), 3 * sd) << field_name(kAllFields[f]);
    }
}

TEST(Sample, RestrictionAndOverride) {
    HyperParamSchema schema;
    schema.restrict(Field::initialization, {"constant", "glorot_normal"});
    schema.dataset_override = "synthetic";
    Rng rng(3);
    std::set<InitScheme> seen;
    for (int i = 0; i < 200; ++i) {
        const auto hp = sample(schema, rng, SamplingMode::free);
        seen.insert(hp.initialization);
        EXPECT_EQ(hp.dataset, "synthetic");
    }
    EXPECT_EQ(seen, (std::set<InitScheme>{InitScheme::constant, InitScheme::glorot_normal}));
    EXPECT_THROW(schema.restrict(Field::optimizer, {"sgd"}), ConfigError);
}

TEST(DesignRow, LengthAndOneHot) {
    HyperParamSchema schema;
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto hp = sample(schema, rng, SamplingMode::free);
        const auto row = encode_design_row(hp);
        EXPECT_EQ(row.size(), 34u);
        EXPECT_EQ(row[0], 1.0);
        EXPECT_EQ(row[1], hp.learning_rate);
        int ones = 0, nonzero = 0;
        for (std::size_t k = 2; k < row.size(); ++k) {
            ones += row[k] == 1.0;
            EXPECT_TRUE(row[k] == 0.0 || row[k] == 1.0);
        }
        for (double v : row) nonzero += v != 0.0;
        EXPECT_EQ(ones, 10);
        EXPECT_EQ(nonzero, 12);
    }
}

TEST(DesignRow, OptimizerSwapDiffersInTwoPositions) {
    HyperParams a;
    HyperParams b = a;
    b.optimizer = OptimizerKind::rmsprop;
    const auto ra = encode_design_row(a), rb = encode_design_row(b);
    int diff = 0;
    for (std::size_t k = 0; k < ra.size(); ++k) diff += ra[k] != rb[k];
    EXPECT_EQ(diff, 2);
}

TEST(DesignRow, InjectiveOnCategoricals) {
    HyperParamSchema schema;
    Rng rng(9);
    std::set<std::array<double, kDesignRowLength>> rows;
    std::set<std::vector<int>> settings;
    for (int i = 0; i < 2000; ++i) {
        auto hp = sample(schema, rng, SamplingMode::free);
        hp.learning_rate = 0.001;
        std::vector<int> key;
        for (std::size_t f = 1; f < kFieldCount; ++f) key.push_back(category_index(hp, kAllFields[f]));
        settings.insert(key);
        rows.insert(encode_design_row(hp));
    }
    EXPECT_EQ(rows.size(), settings.size());
}

TEST(HyperParamsJson, RoundTrip) {
    HyperParamSchema schema;
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        const auto hp = sample(schema, rng, i % 2 ? SamplingMode::free : SamplingMode::fixed_arch);
        EXPECT_EQ(hyper_params_from_json(to_json(hp)), hp);
    }
}
