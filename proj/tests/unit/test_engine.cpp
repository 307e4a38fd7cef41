#include "grad_check.hpp"

#include "nws/arch.hpp"
#include "nws/init.hpp"
#include "nws/loss.hpp"
#include "nws/network.hpp"
#include "nws/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace nws;
using nws::testing::grad_check;
using nws::testing::random_tensor;

namespace {

LayerState<double> random_layer(LayerKind kind, LayerHyper h, Rng& rng) {
    auto l = make_layer<double>(kind, h);
    for (auto* t : {&l.mult, &l.bias, &l.bn_beta}) {
        for (auto& v : t->data) v = 0.5 * rng.normal();
    }
    for (auto& v : l.bn_gamma.data) v = 1.0 + 0.3 * rng.normal();
    return l;
}

}  // namespace

TEST(LayerForward, ReluExample) {
    Rng rng(1);
    LayerHyper h;
    h.activation = Activation::relu;
    auto l = make_layer<double>(LayerKind::activation, h);
    auto y = layer_forward(l, Tensor<double>({1, 3}, {-1.5, 0.0, 2.0}), Mode::infer, rng, nullptr);
    EXPECT_EQ(y.data, (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(LayerForward, MaxPool2dExample) {
    Rng rng(1);
    auto l = make_layer<double>(LayerKind::maxpool2d, {});
    auto y = layer_forward(l, Tensor<double>({1, 2, 2, 1}, {1, 2, 3, 4}), Mode::infer, rng, nullptr);
    EXPECT_EQ(y.shape, (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.data[0], 4.0);
}

TEST(LayerForward, MaxPoolTruncatesOddExtent) {
    Rng rng(1);
    auto l = make_layer<float>(LayerKind::maxpool1d, {});
    auto y = layer_forward(l, Tensor<float>({2, 5, 3}), Mode::infer, rng, nullptr);
    EXPECT_EQ(y.shape, (Shape{2, 2, 3}));
}

TEST(LayerForward, BatchNormTrainNormalizes) {
    Rng rng(3);
    LayerHyper h;
    h.in_channels = 4;
    auto l = make_layer<double>(LayerKind::batchnorm, h);
    Tensor<double> x({16, 3, 3, 4});
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 5.0 + 3.0 * rng.normal() + static_cast<double>(i % 4);
    auto y = layer_forward(l, x, Mode::train, rng, nullptr);
    const std::size_t M = y.size() / 4;
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0, var = 0;
        for (std::size_t m = 0; m < M; ++m) mean += y.data[m * 4 + c];
        mean /= static_cast<double>(M);
        for (std::size_t m = 0; m < M; ++m) var += std::pow(y.data[m * 4 + c] - mean, 2);
        var /= static_cast<double>(M);
        EXPECT_LT(std::abs(mean), 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-3);
    }
    // running statistics moved toward the batch statistics
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GT(l.bn_mean.data[c], 0.0);
        EXPECT_NE(l.bn_var.data[c], 1.0);
    }
}

TEST(LayerForward, BatchNormInferUsesRunningStats) {
    Rng rng(3);
    LayerHyper h;
    h.in_channels = 2;
    auto l = make_layer<double>(LayerKind::batchnorm, h);
    l.bn_mean.data = {1.0, -1.0};
    l.bn_var.data = {4.0, 1.0};
    auto y = layer_forward(l, Tensor<double>({1, 2}, {3.0, -1.0}), Mode::infer, rng, nullptr);
    EXPECT_NEAR(y.data[0], 2.0 / std::sqrt(4.0 + 1e-3), 1e-12);
    EXPECT_NEAR(y.data[1], 0.0, 1e-12);
}

TEST(LayerForward, ConvSamePaddingKeepsExtent) {
    Rng rng(5);
    LayerHyper h{7, 3, 6};
    auto l = random_layer(LayerKind::conv2d, h, rng);
    auto y = layer_forward(l, random_tensor({2, 9, 9, 3}, rng), Mode::infer, rng, nullptr);
    EXPECT_EQ(y.shape, (Shape{2, 9, 9, 6}));
}

TEST(LayerForward, ConvMatchesDirectSum) {
    Rng rng(6);
    LayerHyper h{3, 2, 3};
    auto l = random_layer(LayerKind::conv2d, h, rng);
    auto x = random_tensor({1, 4, 5, 2}, rng);
    auto y = layer_forward(l, x, Mode::infer, rng, nullptr);
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 5; ++ox)
            for (int o = 0; o < 3; ++o) {
                double s = l.bias.data[static_cast<std::size_t>(o)];
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx)
                        for (int c = 0; c < 2; ++c) {
                            const int iy = oy + dy - 1, ix = ox + dx - 1;
                            if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
                            s += x.data[static_cast<std::size_t>((iy * 5 + ix) * 2 + c)] *
                                 l.mult.data[static_cast<std::size_t>(((o * 3 + dy) * 3 + dx) * 2 + c)];
                        }
                EXPECT_NEAR(y.data[static_cast<std::size_t>((oy * 5 + ox) * 3 + o)], s, 1e-12);
            }
}

TEST(LayerForward, DropoutInvertedScaling) {
    Rng rng(8);
    LayerHyper h;
    h.keep_prob = 0.5;
    auto l = make_layer<double>(LayerKind::dropout, h);
    Tensor<double> x({1, 100000}, 1.0);
    auto y = layer_forward(l, x, Mode::train, rng, nullptr);
    double mean = 0;
    for (double v : y.data) {
        EXPECT_TRUE(v == 0.0 || v == 2.0);
        mean += v;
    }
    EXPECT_NEAR(mean / 100000.0, 1.0, 0.02);
    auto yi = layer_forward(l, x, Mode::infer, rng, nullptr);
    EXPECT_EQ(yi.data, x.data);
}

TEST(LayerForward, Errors) {
    Rng rng(1);
    LayerHyper h{3, 2, 4};
    auto conv = make_layer<double>(LayerKind::conv2d, h);
    EXPECT_THROW(layer_forward(conv, Tensor<double>({1, 4, 4, 3}), Mode::infer, rng, nullptr), ShapeError);
    Tensor<double> bad({1, 4, 4, 2});
    bad.data[3] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(layer_forward(conv, bad, Mode::infer, rng, nullptr), NumericError);
    LayerHyper bh;
    bh.in_channels = 2;
    auto bn = make_layer<double>(LayerKind::batchnorm, bh);
    EXPECT_THROW(layer_forward(bn, Tensor<double>({1, 2}), Mode::train, rng, nullptr), ShapeError);
}

TEST(LayerBackward, ReluExample) {
    Rng rng(1);
    auto l = make_layer<double>(LayerKind::activation, {});
    LayerCache<double> cache;
    layer_forward(l, Tensor<double>({1, 3}, {-1, 0, 2}), Mode::train, rng, &cache);
    LayerGrads<double> g;
    auto dx = layer_backward(l, cache, Tensor<double>({1, 3}, {1, 1, 1}), g);
    EXPECT_EQ(dx.data, (std::vector<double>{0, 0, 1}));
}

TEST(LayerBackward, Errors) {
    Rng rng(1);
    auto l = make_layer<double>(LayerKind::activation, {});
    LayerCache<double> cache;
    layer_forward(l, Tensor<double>({1, 3}), Mode::train, rng, &cache);
    LayerGrads<double> g;
    EXPECT_THROW(layer_backward(l, cache, Tensor<double>({1, 4}), g), ShapeError);
    layer_forward(l, Tensor<double>({1, 3}), Mode::infer, rng, &cache);
    EXPECT_THROW(layer_backward(l, cache, Tensor<double>({1, 3}), g), ShapeError);
}

// Every layer kind against the finite-difference oracle on random shapes.
class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, AllLayerKinds) {
    Rng rng(static_cast<std::uint64_t>(1000 + GetParam()));
    auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
    const std::size_t B = pick(2, 4);
    const double tol = 1e-6;

    {
        const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[rng.below(3)];
        LayerHyper h{k, pick(1, 3), pick(1, 4)};
        auto r = grad_check(random_layer(LayerKind::conv2d, h, rng),
                            random_tensor({B, pick(2, 6), pick(2, 6), h.in_channels}, rng), rng);
        EXPECT_LT(r.max(), tol) << "conv2d";
    }
    {
        LayerHyper h{5, pick(1, 3), pick(1, 4)};
        auto r = grad_check(random_layer(LayerKind::conv1d, h, rng), random_tensor({B, pick(3, 12), h.in_channels}, rng), rng);
        EXPECT_LT(r.max(), tol) << "conv1d";
    }
    {
        LayerHyper h{0, pick(1, 8), pick(1, 6)};
        auto r = grad_check(random_layer(LayerKind::fc, h, rng), random_tensor({B, h.in_channels}, rng), rng);
        EXPECT_LT(r.max(), tol) << "fc";
    }
    {
        auto r = grad_check(make_layer<double>(LayerKind::maxpool2d, {}), random_tensor({B, pick(2, 7), pick(2, 7), pick(1, 3)}, rng), rng);
        EXPECT_LT(r.max(), tol) << "maxpool2d";
    }
    {
        auto r = grad_check(make_layer<double>(LayerKind::maxpool1d, {}), random_tensor({B, pick(2, 9), pick(1, 3)}, rng), rng);
        EXPECT_LT(r.max(), tol) << "maxpool1d";
    }
    {
        LayerHyper h;
        h.in_channels = pick(1, 4);
        auto r = grad_check(random_layer(LayerKind::batchnorm, h, rng), random_tensor({B, pick(1, 4), h.in_channels}, rng, 2.0), rng);
        EXPECT_LT(r.max(), tol) << "batchnorm";
    }
    {
        auto r = grad_check(make_layer<double>(LayerKind::dropout, {}), random_tensor({B, pick(1, 10)}, rng), rng);
        EXPECT_LT(r.max(), tol) << "dropout";
    }
    for (auto a : {Activation::relu, Activation::elu, Activation::sigmoid, Activation::tanh}) {
        LayerHyper h;
        h.activation = a;
        auto r = grad_check(make_layer<double>(LayerKind::activation, h), random_tensor({B, pick(1, 10)}, rng), rng);
        EXPECT_LT(r.max(), tol) << to_string(a);
    }
    {
        auto r = grad_check(make_layer<double>(LayerKind::reshape, {}), random_tensor({B, 2, 3, 2}, rng), rng);
        EXPECT_LT(r.max(), tol) << "reshape";
    }
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, GradientCheck, ::testing::Range(0, 5));

TEST(SoftmaxXent, UniformLogits) {
    Tensor<double> logits({2, 10}, 0.5);
    std::vector<int> labels{3, 9};
    EXPECT_NEAR(softmax_xent(logits, labels).loss, std::log(10.0), 1e-12);
}

TEST(SoftmaxXent, SaturatedLogit) {
    Tensor<double> logits({1, 10}, 0.0);
    logits.data[4] = 1000.0;
    std::vector<int> labels{4};
    EXPECT_LT(softmax_xent(logits, labels).loss, 1e-6);
}

TEST(SoftmaxXent, GradientMatchesFiniteDifferences) {
    Rng rng(11);
    auto logits = random_tensor({3, 20}, rng, 2.0);
    std::vector<int> labels{0, 9, 5};
    auto r = softmax_xent(logits, labels);
    auto f = [&] { return softmax_xent(logits, labels).loss; };
    EXPECT_LT(nws::testing::check_tensor(f, logits, r.grad_logits), 1e-6);
}

TEST(SoftmaxXent, RowsSumToOne) {
    Rng rng(12);
    auto p = softmax(random_tensor({5, 7}, rng, 10.0));
    for (std::size_t b = 0; b < 5; ++b) {
        double s = 0;
        for (std::size_t c = 0; c < 7; ++c) s += p.data[b * 7 + c];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(SoftmaxXent, LabelOutOfRange) {
    Tensor<double> logits({1, 4});
    std::vector<int> labels{4};
    EXPECT_THROW(softmax_xent(logits, labels), Error);
}

namespace {

double run_steps(OptimizerKind kind, double g, double lr, int steps, double p0 = 0.0) {
    OptimizerState<double> opt(kind);
    Tensor<double> p({1}, p0);
    Tensor<double> grad({1}, g);
    std::vector<Tensor<double>*> ps{&p};
    std::vector<const Tensor<double>*> gs{&grad};
    for (int i = 0; i < steps; ++i) optimizer_step<double>(opt, ps, gs, lr);
    return p.data[0];
}

}  // namespace

TEST(Optimizer, MomentumFirstStep) { EXPECT_NEAR(run_steps(OptimizerKind::momentum, 1.0, 0.1, 1), -0.1, 1e-12); }

TEST(Optimizer, AdamFirstStep) {
    const double d = run_steps(OptimizerKind::adam, 0.5, 1e-3, 1);
    EXPECT_NEAR(d, -9.99999e-4, 1e-8);
    EXPECT_NEAR(d, -1e-3 * 0.5 / (0.5 + 1e-8), 1e-12);
}

TEST(Optimizer, RmspropFirstStep) {
    EXPECT_NEAR(run_steps(OptimizerKind::rmsprop, 1.0, 1e-3, 1), -1e-3 / std::sqrt(0.1 + 1e-10), 1e-12);
    EXPECT_NEAR(run_steps(OptimizerKind::rmsprop, 1.0, 1e-3, 1), -3.16228e-3, 1e-8);
}

TEST(Optimizer, ThreeStepClosedForms) {
    const double g = 0.7, lr = 0.01;
    // momentum: v_t = sum_{k<t} 0.95^k g
    const double v1 = g, v2 = 0.95 * v1 + g, v3 = 0.95 * v2 + g;
    EXPECT_NEAR(run_steps(OptimizerKind::momentum, g, lr, 3), -lr * (v1 + v2 + v3), 1e-12);
    // adam with constant gradient: bias-corrected moments equal g and g^2
    EXPECT_NEAR(run_steps(OptimizerKind::adam, g, lr, 3), -3 * lr * g / (g + 1e-8), 1e-12);
    // rmsprop with constant gradient: ms_t = (1 - 0.9^t) g^2
    double expect = 0;
    for (int t = 1; t <= 3; ++t) expect -= lr * g / std::sqrt((1 - std::pow(0.9, t)) * g * g + 1e-10);
    EXPECT_NEAR(run_steps(OptimizerKind::rmsprop, g, lr, 3), expect, 1e-12);
}

TEST(Optimizer, SlotShapeMismatch) {
    OptimizerState<double> opt(OptimizerKind::adam);
    Tensor<double> p({2}), g({2}, 1.0);
    std::vector<Tensor<double>*> ps{&p};
    std::vector<const Tensor<double>*> gs{&g};
    optimizer_step<double>(opt, ps, gs, 0.1);
    Tensor<double> p3({3}), g3({3});
    std::vector<Tensor<double>*> ps3{&p3};
    std::vector<const Tensor<double>*> gs3{&g3};
    EXPECT_THROW(optimizer_step<double>(opt, ps3, gs3, 0.1), ShapeError);
}

TEST(Init, ConstantScheme) {
    Rng rng(1);
    auto l = make_layer<float>(LayerKind::conv2d, {3, 3, 8});
    l.bias.fill(5.0f);
    init_params(InitScheme::constant, l, rng);
    for (float v : l.mult.data) EXPECT_EQ(v, 0.1f);
    for (float v : l.bias.data) EXPECT_EQ(v, 0.0f);
}

TEST(Init, GlorotUniformBound) {
    Rng rng(2);
    auto l = make_layer<double>(LayerKind::fc, {0, 100, 50});
    init_params(InitScheme::glorot_uniform, l, rng);
    const double bound = std::sqrt(6.0 / 150.0);
    for (double v : l.mult.data) EXPECT_LE(std::abs(v), bound);
}

TEST(Init, RandomNormalMoments) {
    Rng rng(3);
    auto l = make_layer<double>(LayerKind::fc, {0, 1000, 1000});
    init_params(InitScheme::random_normal, l, rng);
    double mean = 0, var = 0;
    for (double v : l.mult.data) mean += v;
    mean /= 1e6;
    for (double v : l.mult.data) var += (v - mean) * (v - mean);
    var /= 1e6;
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(Init, BatchNormDefaultsAndDeterminism) {
    auto spec = build_cnn(ArchParams{}, 10);
    auto a = instantiate<float>(spec, InitScheme::glorot_normal, Rng(5), Rng(6));
    auto b = instantiate<float>(spec, InitScheme::glorot_normal, Rng(5), Rng(6));
    for (std::size_t i = 0; i < a.layers().size(); ++i) {
        EXPECT_EQ(a.layers()[i].mult.data, b.layers()[i].mult.data);
        if (a.layers()[i].kind == LayerKind::batchnorm) {
            for (float v : a.layers()[i].bn_gamma.data) EXPECT_EQ(v, 1.0f);
            for (float v : a.layers()[i].bn_var.data) EXPECT_EQ(v, 1.0f);
        }
    }
}

TEST(Network, InferIsDeterministic) {
    auto spec = build_cnn(ArchParams{3, 3, 3, 16, 64}, 10);
    auto net = instantiate<float>(spec, InitScheme::glorot_uniform, Rng(1), Rng(2));
    Tensor<float> x({3, 32, 32, 3});
    Rng rng(3);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    auto a = net.forward(x, Mode::infer);
    auto b = net.forward(x, Mode::infer);
    EXPECT_EQ(a.data, b.data);
}

TEST(Network, WholeStackGradientCheck) {
    // conv -> bn -> elu -> pool -> reshape -> fc -> bn -> tanh -> fc, double precision
    ArchSpec spec;
    spec.input_shape = {4, 4, 2};
    LayerHyper conv{3, 2, 3};
    LayerHyper bn1;
    bn1.in_channels = 3;
    LayerHyper act;
    act.activation = Activation::elu;
    LayerHyper fc1{0, 12, 5};
    LayerHyper bn2;
    bn2.in_channels = 5;
    LayerHyper act2;
    act2.activation = Activation::tanh;
    LayerHyper fc2{0, 5, 3};
    spec.layers = {{LayerKind::conv2d, conv, {}},  {LayerKind::batchnorm, bn1, {}}, {LayerKind::activation, act, {}},
                   {LayerKind::maxpool2d, {}, {}}, {LayerKind::reshape, {}, {}},    {LayerKind::fc, fc1, {}},
                   {LayerKind::batchnorm, bn2, {}}, {LayerKind::activation, act2, {}}, {LayerKind::fc, fc2, {}}};
    auto net = instantiate<double>(spec, InitScheme::random_normal, Rng(4), Rng(5));
    Rng rng(6);
    auto x = random_tensor({4, 4, 4, 2}, rng);
    std::vector<int> labels{0, 1, 2, 1};
    auto loss_of = [&] {
        auto copy = net;
        return softmax_xent(copy.forward(x, Mode::train), labels).loss;
    };
    auto work = net;
    auto r = softmax_xent(work.forward(x, Mode::train), labels);
    work.backward(r.grad_logits);
    auto grads = work.gradients();
    auto params = net.trainable();
    for (std::size_t i = 0; i < params.size(); ++i)
        EXPECT_LT(nws::testing::check_tensor(loss_of, *params[i], *grads[i]), 1e-6) << "tensor " << i;
}
