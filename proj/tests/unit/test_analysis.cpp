#include "nws/analysis.hpp"
#include "nws/error.hpp"
#include "nws/rng.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

using namespace nws;

namespace {

RunRecord record_with(const HyperParams& hp, double acc, std::size_t i) {
    RunRecord r;
    r.id = run_id(i);
    r.hp = hp;
    r.epochs.push_back({1, 1e-3, acc, acc, acc, 0.1});
    return r;
}

std::vector<HyperParams> random_hps(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    HyperParamSchema schema;
    std::vector<HyperParams> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(schema, rng, SamplingMode::free));
    return out;
}

}  // namespace

TEST(Analysis, OlsMatchesMinimumNormOracle) {
    Rng rng(1);
    Matrix X;
    std::vector<double> y;
    Eigen::MatrixXd A(30, 6);
    Eigen::VectorXd b(30);
    for (int i = 0; i < 30; ++i) {
        const double u = rng.normal(), v = rng.normal(), w = rng.normal();
        // columns 3 and 4 duplicate combinations of the others
        std::vector<double> row = {1.0, u, v, u + v, 2 * w, w};
        X.push_back(row);
        y.push_back(rng.normal());
        for (int j = 0; j < 6; ++j) A(i, j) = row[static_cast<std::size_t>(j)];
        b(i) = y.back();
    }
    const auto f = fit_ols(X, y);
    EXPECT_EQ(f.rank, 4u);
    const Eigen::VectorXd oracle = A.completeOrthogonalDecomposition().solve(b);
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(f.coef[static_cast<std::size_t>(j)], oracle(j), 1e-10);
    EXPECT_LE(f.residual_error, f.baseline_error);
    for (double p : f.p_values) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
}

TEST(Analysis, FullRankPValuesMatchClassicFormula) {
    Rng rng(2);
    Matrix X;
    std::vector<double> y;
    for (int i = 0; i < 12; ++i) {
        const double x = static_cast<double>(i);
        X.push_back({1.0, x});
        y.push_back(0.5 * x + rng.normal());
    }
    const auto f = fit_ols(X, y);
    // slope standard error: sqrt(sigma^2 / Sxx)
    double xbar = 5.5, sxx = 0, rss = 0;
    for (int i = 0; i < 12; ++i) sxx += (i - xbar) * (i - xbar);
    for (int i = 0; i < 12; ++i) {
        const double r = y[static_cast<std::size_t>(i)] - f.coef[0] - f.coef[1] * i;
        rss += r * r;
    }
    EXPECT_NEAR(f.std_errors[1], std::sqrt(rss / 10.0 / sxx), 1e-12);
}

TEST(Analysis, ZeroNoiseRecordsArePredictedExactly) {
    const auto hps = random_hps(200, 3);
    Rng rng(4);
    std::vector<double> beta(kDesignRowLength);
    for (auto& b : beta) b = rng.normal(0.0, 0.05);
    beta[1] = 20.0;
    std::vector<RunRecord> recs;
    for (std::size_t i = 0; i < hps.size(); ++i) {
        const auto row = encode_design_row(hps[i]);
        double acc = 0.6;
        for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * beta[j];
        recs.push_back(record_with(hps[i], acc, i));
    }
    const auto m = fit_accuracy_regression(recs);
    EXPECT_EQ(m.fit.coef.size(), 34u);
    EXPECT_EQ(m.fit.rank, 24u);
    double mean = 0, var = 0;
    std::vector<double> pred;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        pred.push_back(m.predict_accuracy(recs[i].hp));
        EXPECT_NEAR(pred.back(), recs[i].final_test_accuracy(), 1e-8);
        mean += pred.back();
    }
    mean /= static_cast<double>(pred.size());
    for (double p : pred) var += (p - mean) * (p - mean);
    EXPECT_NEAR(mean, m.acc_mean, 1e-10);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(pred.size())), m.acc_std, 1e-10);
}

TEST(Analysis, ResidualNeverExceedsBaseline) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto hps = random_hps(60, 100 + s);
        Rng rng(200 + s);
        std::vector<RunRecord> recs;
        for (std::size_t i = 0; i < hps.size(); ++i) recs.push_back(record_with(hps[i], rng.uniform(), i));
        const auto m = fit_accuracy_regression(recs);
        EXPECT_LE(m.fit.residual_error, m.fit.baseline_error + 1e-12);
        EXPECT_NEAR(m.fit.baseline_error, 1.0, 1e-12);
        double mean = 0;
        for (const auto& r : recs) mean += m.predict_accuracy(r.hp);
        EXPECT_NEAR(mean / 60.0, m.acc_mean, 1e-10);
    }
}

TEST(Analysis, ZeroVarianceRejected) {
    const auto hps = random_hps(50, 5);
    std::vector<RunRecord> recs;
    for (std::size_t i = 0; i < hps.size(); ++i) recs.push_back(record_with(hps[i], 0.9, i));
    try {
        fit_accuracy_regression(recs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("zero variance"), std::string::npos);
    }
    EXPECT_THROW(fit_accuracy_regression(recs, "cifar10"), Error);
}

TEST(Analysis, NullColumnPValueCalibration) {
    Rng rng(6);
    std::size_t hits = 0;
    const std::size_t sims = 1000;
    for (std::size_t s = 0; s < sims; ++s) {
        const auto hps = random_hps(80, 1000 + s);
        Matrix X;
        std::vector<double> y;
        for (const auto& hp : hps) {
            const auto row = encode_design_row(hp);
            std::vector<double> r(row.begin(), row.end());
            r.push_back(rng.normal());
            y.push_back(0.3 * r[3] - 0.2 * r[10] + rng.normal());
            X.push_back(std::move(r));
        }
        hits += fit_ols(X, y).p_values.back() < 0.05;
    }
    const double rate = static_cast<double>(hits) / static_cast<double>(sims);
    EXPECT_GE(rate, 0.03);
    EXPECT_LE(rate, 0.07);
}

TEST(Analysis, ComboTableHandAverages) {
    HyperParams a, b;
    a.batch_size = 32;
    a.optimizer = OptimizerKind::adam;
    b.batch_size = 64;
    b.optimizer = OptimizerKind::momentum;
    std::vector<RunRecord> recs = {record_with(a, 0.5, 0), record_with(a, 0.7, 1), record_with(b, 0.2, 2), record_with(b, 0.3, 3)};
    const auto t = combo_table(recs, Field::batch_size, Field::optimizer);
    ASSERT_EQ(t.rows.size(), 4u);
    ASSERT_EQ(t.cols.size(), 3u);
    EXPECT_DOUBLE_EQ(t.mean[0][0], 0.6);
    EXPECT_DOUBLE_EQ(t.mean[1][2], 0.25);
    EXPECT_EQ(t.count[0][0], 2u);
    EXPECT_EQ(t.count[2][1], 0u);
    EXPECT_TRUE(std::isnan(t.mean[2][1]));
    std::reverse(recs.begin(), recs.end());
    const auto t2 = combo_table(recs, Field::batch_size, Field::optimizer);
    EXPECT_EQ(t2.count, t.count);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (t.count[i][j]) EXPECT_DOUBLE_EQ(t2.mean[i][j], t.mean[i][j]);
    const auto single = combo_table({recs[0]}, Field::batch_size, Field::optimizer);
    std::size_t filled = 0;
    for (const auto& r : single.count) filled += static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](auto c) { return c > 0; }));
    EXPECT_EQ(filled, 1u);
    EXPECT_THROW(combo_table(recs, Field::fc_width, Field::fc_width), ConfigError);
}

TEST(Analysis, PcaRecoversDominantDirection) {
    Rng rng(7);
    const std::size_t d = 50, n = 200;
    std::vector<double> dir(d);
    double norm = 0;
    for (auto& v : dir) {
        v = rng.normal();
        norm += v * v;
    }
    for (auto& v : dir) v /= std::sqrt(norm);
    Matrix X;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = rng.normal(0.0, 5.0);
        std::vector<double> r(d);
        for (std::size_t f = 0; f < d; ++f) r[f] = 3.0 + z * dir[f] + rng.normal(0.0, 0.1 * (1.0 + static_cast<double>(f % 3)));
        X.push_back(std::move(r));
    }
    const auto p = pca(X, 6);
    double cos = 0;
    for (std::size_t f = 0; f < d; ++f) cos += p.components[0][f] * dir[f];
    EXPECT_GT(std::abs(cos), 0.999);
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t b = 0; b < 6; ++b) {
            double s = 0;
            for (std::size_t f = 0; f < d; ++f) s += p.components[a][f] * p.components[b][f];
            EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-8);
        }
    for (std::size_t i = 1; i < 6; ++i) EXPECT_LE(p.variances[i], p.variances[i - 1]);

    // eigenvalues of the sample covariance as the oracle
    Eigen::MatrixXd M(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < d; ++f) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = X[i][f] - p.mean[f];
    const Eigen::MatrixXd cov = M.transpose() * M / static_cast<double>(n - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    EXPECT_NEAR(p.variances[0], es.eigenvalues()(static_cast<Eigen::Index>(d - 1)), 1e-9 * p.variances[0]);
    EXPECT_NEAR(p.total_variance, cov.trace(), 1e-9);

    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= 6; ++k) {
        const double e = pca_reconstruction_error(p, X, k);
        EXPECT_LE(e, prev + 1e-12);
        prev = e;
    }
    EXPECT_EQ(pca_project(p, X).front().size(), 6u);
    EXPECT_THROW(pca(X, 51), ConfigError);
    EXPECT_THROW(pca({X[0]}, 1), Error);
}

TEST(Analysis, CoefficientCorrelation) {
    RegressionModel a;
    a.names = design_row_names();
    a.fit.coef.resize(a.names.size());
    Rng rng(8);
    for (auto& c : a.fit.coef) c = rng.normal();
    auto b = a, c = a;
    for (auto& v : b.fit.coef) v *= 2;
    for (auto& v : c.fit.coef) v = -v;
    const auto m = coeff_correlation({a, a, b, c});
    EXPECT_DOUBLE_EQ(m[0][1], 1.0);
    EXPECT_NEAR(m[0][2], 1.0, 1e-15);
    EXPECT_NEAR(m[0][3], -1.0, 1e-15);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(m[i][i], 1.0);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m[i][j], m[j][i]);
    }
    auto bad = a;
    bad.names.pop_back();
    bad.fit.coef.pop_back();
    EXPECT_THROW(coeff_correlation({a, bad}), ShapeError);
}
