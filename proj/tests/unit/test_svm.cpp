#include "nws/error.hpp"
#include "nws/rng.hpp"
#include "nws/svm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace nws;

namespace {

struct Blobs {
    Matrix X;
    std::vector<int> y;
    std::vector<std::string> classes;
};

Blobs make_blobs(std::size_t per_class, std::size_t classes, std::size_t dims, double spread, std::uint64_t seed) {
    Rng rng(seed);
    Blobs b;
    for (std::size_t c = 0; c < classes; ++c) b.classes.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class * classes; ++i) {
        const std::size_t c = i % classes;
        std::vector<double> r(dims);
        for (std::size_t f = 0; f < dims; ++f) r[f] = rng.normal(f == c % dims ? 4.0 : 0.0, spread);
        b.X.push_back(r);
        b.y.push_back(static_cast<int>(c));
    }
    return b;
}

Blobs make_xor(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Blobs b{{}, {}, {"same", "diff"}};
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
        if (std::abs(x) < 0.1 || std::abs(y) < 0.1) continue;
        b.X.push_back({x, y});
        b.y.push_back((x > 0) == (y > 0) ? 0 : 1);
    }
    return b;
}

}  // namespace

TEST(Svm, StandardizerHandlesConstantFeature) {
    const Matrix X = {{1, 5}, {3, 5}, {5, 5}};
    const auto s = Standardizer::fit(X);
    EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
    EXPECT_DOUBLE_EQ(s.scale[1], 1.0);
    const auto z = s.apply({5, 5});
    EXPECT_NEAR(z[0], 2.0 / std::sqrt(8.0 / 3.0), 1e-12);
    EXPECT_DOUBLE_EQ(z[1], 0.0);
}

TEST(Svm, SeparableBlobsAllKinds) {
    const auto b = make_blobs(30, 3, 4, 0.5, 1);
    for (auto kind : {SvmKind::linear, SvmKind::rbf, SvmKind::logistic}) {
        SvmConfig cfg;
        cfg.kind = kind;
        const auto m = fit_svm(b.X, b.y, b.classes, cfg);
        EXPECT_DOUBLE_EQ(accuracy(predict(m, b.X), b.y), 1.0) << to_string(kind);
        const auto held = make_blobs(20, 3, 4, 0.5, 2);
        EXPECT_GE(accuracy(predict(m, held.X), held.y), 0.98) << to_string(kind);
    }
}

TEST(Svm, XorNeedsKernel) {
    const auto b = make_xor(300, 3);
    SvmConfig rbf;
    rbf.kind = SvmKind::rbf;
    rbf.C = 10;
    EXPECT_DOUBLE_EQ(accuracy(predict(fit_svm(b.X, b.y, b.classes, rbf), b.X), b.y), 1.0);
    EXPECT_LE(accuracy(predict(fit_svm(b.X, b.y, b.classes), b.X), b.y), 0.75);
}

TEST(Svm, DuplicationInvariance) {
    const auto b = make_blobs(15, 3, 5, 1.5, 4);
    Matrix X2 = b.X;
    auto y2 = b.y;
    X2.insert(X2.end(), b.X.begin(), b.X.end());
    y2.insert(y2.end(), b.y.begin(), b.y.end());
    const auto m1 = fit_svm(b.X, b.y, b.classes);
    const auto m2 = fit_svm(X2, y2, b.classes);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t f = 0; f < 5; ++f) EXPECT_NEAR(m1.coef[c][f], m2.coef[c][f], 1e-9);
        EXPECT_NEAR(m1.intercept[c], m2.intercept[c], 1e-9);
    }
}

TEST(Svm, AffineFeatureInvariance) {
    const auto b = make_blobs(20, 3, 3, 1.5, 5);
    Matrix Xa = b.X;
    const double scale[3] = {100.0, 0.01, -3.0}, shift[3] = {7.0, -1e3, 0.5};
    for (auto& r : Xa)
        for (std::size_t f = 0; f < 3; ++f) r[f] = r[f] * scale[f] + shift[f];
    const auto p1 = predict(fit_svm(b.X, b.y, b.classes), b.X);
    const auto p2 = predict(fit_svm(Xa, b.y, b.classes), Xa);
    EXPECT_EQ(p1, p2);
}

TEST(Svm, TiesGoToLowestClass) {
    SvmModel m;
    m.kind = SvmKind::linear;
    m.classes = {"a", "b", "c"};
    m.standardizer.mean = {0.0};
    m.standardizer.scale = {1.0};
    m.coef = {{0.0}, {1.0}, {1.0}};
    m.intercept = {0.5, 0.0, 0.0};
    EXPECT_EQ(predict(m, {{1.0}, {0.5}, {0.0}}), (std::vector<int>{1, 0, 0}));
}

TEST(Svm, ImportanceEquivariantUnderPermutation) {
    const auto b = make_blobs(20, 3, 4, 1.0, 6);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    Matrix Xp = b.X;
    for (std::size_t i = 0; i < Xp.size(); ++i)
        for (std::size_t f = 0; f < 4; ++f) Xp[i][f] = b.X[i][perm[f]];
    const auto t = feature_importance(fit_svm(b.X, b.y, b.classes));
    const auto tp = feature_importance(fit_svm(Xp, b.y, b.classes));
    for (std::size_t f = 0; f < 4; ++f) EXPECT_NEAR(tp[f], t[perm[f]], 1e-9);
    SvmConfig rbf;
    rbf.kind = SvmKind::rbf;
    EXPECT_THROW(feature_importance(fit_svm(b.X, b.y, b.classes, rbf)), Error);
}

TEST(Svm, TinyGammaCollapsesToMajority) {
    auto b = make_blobs(10, 3, 3, 1.0, 7);
    for (int i = 0; i < 20; ++i) {
        b.X.push_back(b.X[static_cast<std::size_t>(i % 10) * 3 + 1]);
        b.y.push_back(1);
    }
    SvmConfig cfg;
    cfg.kind = SvmKind::rbf;
    cfg.gamma = 1e-9;
    const auto p = predict(fit_svm(b.X, b.y, b.classes, cfg), b.X);
    for (int v : p) EXPECT_EQ(v, 1);
}

TEST(Svm, InputValidation) {
    const auto b = make_blobs(5, 2, 2, 1.0, 8);
    EXPECT_THROW(fit_svm(b.X, {0, 1}, b.classes), ShapeError);
    Matrix one = {{0.0, 1.0}, {1.0, 0.0}, {2.0, 2.0}};
    EXPECT_THROW(fit_svm(one, {0, 0, 1}, {"a", "b"}), Error);
    auto bad = b.X;
    bad[0][0] = NAN;
    EXPECT_THROW(fit_svm(bad, b.y, b.classes), NumericError);
    const auto m = fit_svm(b.X, b.y, b.classes);
    EXPECT_THROW(predict(m, {{1.0}}), ShapeError);
    EXPECT_THROW(parse_svm_kind("poly"), ConfigError);
}

TEST(Svm, EncodeLabels) {
    auto [idx, classes] = encode_labels({"64", "32", "64", "256"});
    EXPECT_EQ(classes, (std::vector<std::string>{"64", "32", "256"}));
    EXPECT_EQ(idx, (std::vector<int>{0, 1, 0, 2}));
    auto [idx2, c2] = encode_labels({"64", "32"}, {"32", "64", "128", "256"});
    EXPECT_EQ(idx2, (std::vector<int>{1, 0}));
    EXPECT_EQ(c2.size(), 4u);
    EXPECT_THROW(encode_labels({"7"}, {"32"}), Error);
}

TEST(Svm, ThreadedFitMatchesSerial) {
    const auto b = make_blobs(20, 4, 4, 1.5, 9);
    for (auto kind : {SvmKind::linear, SvmKind::rbf}) {
        SvmConfig cfg;
        cfg.kind = kind;
        const auto a = decision_values(fit_svm(b.X, b.y, b.classes, cfg), b.X);
        cfg.threads = 3;
        EXPECT_EQ(a, decision_values(fit_svm(b.X, b.y, b.classes, cfg), b.X));
    }
}

TEST(Svm, SaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "nws_test_svm";
    std::filesystem::remove_all(dir);
    const auto b = make_blobs(15, 3, 4, 1.5, 10);
    for (auto kind : {SvmKind::linear, SvmKind::rbf}) {
        SvmConfig cfg;
        cfg.kind = kind;
        auto m = fit_svm(b.X, b.y, b.classes, cfg);
        m.schema = {"f0", "f1", "f2", "f3"};
        const auto path = dir / (std::string(to_string(kind)) + ".svm");
        save_svm(path, m);
        const auto l = load_svm(path);
        EXPECT_EQ(l.schema, m.schema);
        EXPECT_EQ(l.classes, m.classes);
        EXPECT_EQ(decision_values(l, b.X), decision_values(m, b.X));
    }
    const auto path = dir / "linear.svm";
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes[bytes.size() / 2] ^= 0x40;
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    EXPECT_THROW(load_svm(path), FormatError);
    std::filesystem::remove_all(dir);
}
