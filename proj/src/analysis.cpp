#include "nws/analysis.hpp"

#include "nws/csv.hpp"
#include "nws/error.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace nws {

OlsFit fit_ols(const Matrix& X, const std::vector<double>& y) {
    const std::size_t n = X.size();
    if (n == 0) throw Error("regression: no rows");
    if (y.size() != n) throw ShapeError(fmt::format("regression: {} rows but {} targets", n, y.size()));
    const std::size_t p = X.front().size();
    Eigen::MatrixXd A(n, p);
    Eigen::VectorXd b(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (X[i].size() != p) throw ShapeError("regression: ragged design matrix");
        for (std::size_t j = 0; j < p; ++j) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = X[i][j];
        b(static_cast<Eigen::Index>(i)) = y[i];
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = 1e-10 * (s.size() ? s(0) : 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) {
            inv(i) = 1.0 / s(i);
            ++rank;
        }
    if (n <= rank) throw Error(fmt::format("regression: {} records do not exceed the design rank {}", n, rank));
    const Eigen::VectorXd coef = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * b;
    const Eigen::VectorXd resid = b - A * coef;
    const double rss = resid.squaredNorm();
    const double ybar = b.mean();
    const double tss = (b.array() - ybar).square().sum();

    OlsFit f;
    f.n = n;
    f.rank = rank;
    f.residual_error = std::sqrt(rss / static_cast<double>(n));
    f.baseline_error = std::sqrt(tss / static_cast<double>(n));
    const auto df = static_cast<double>(n - rank);
    const double sigma2 = rss / df;
    // cov = sigma^2 * pinv(A^T A) = sigma^2 * V diag(1/s^2) V^T
    const Eigen::MatrixXd Vs = svd.matrixV() * inv.asDiagonal();
    const boost::math::students_t dist(df);
    for (std::size_t j = 0; j < p; ++j) {
        const double var = sigma2 * Vs.row(static_cast<Eigen::Index>(j)).squaredNorm();
        const double se = std::sqrt(var);
        const double c = coef(static_cast<Eigen::Index>(j));
        f.coef.push_back(c);
        f.std_errors.push_back(se);
        if (!(se > 0)) {
            f.p_values.push_back(1.0);
            continue;
        }
        const double t = std::abs(c / se);
        f.p_values.push_back(std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0));
    }
    return f;
}

double RegressionModel::predict_normalized(const HyperParams& hp) const {
    const auto row = encode_design_row(hp);
    double s = 0;
    for (std::size_t i = 0; i < row.size(); ++i) s += row[i] * fit.coef[i];
    return s;
}

double RegressionModel::predict_accuracy(const HyperParams& hp) const { return predict_normalized(hp) * acc_std + acc_mean; }

RegressionModel fit_accuracy_regression(const std::vector<RunRecord>& records, const std::string& dataset) {
    RegressionModel m;
    m.dataset = dataset;
    m.names = design_row_names();
    Matrix X;
    std::vector<double> acc;
    for (const auto& r : records) {
        if (!r.ok() || (!dataset.empty() && r.hp.dataset != dataset)) continue;
        const auto row = encode_design_row(r.hp);
        X.emplace_back(row.begin(), row.end());
        acc.push_back(r.final_test_accuracy());
    }
    if (X.empty()) throw Error(fmt::format("regression: no records{}", dataset.empty() ? "" : " for dataset " + dataset));
    const auto n = static_cast<double>(acc.size());
    double mean = 0;
    for (double a : acc) mean += a;
    mean /= n;
    double var = 0;
    for (double a : acc) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
        throw Error(fmt::format("regression: test accuracy has zero variance over {} records (all {:.6g}); nothing to explain", acc.size(), mean));
    m.acc_mean = mean;
    m.acc_std = sd;
    for (auto& a : acc) a = (a - mean) / sd;
    m.fit = fit_ols(X, acc);
    return m;
}

void write_regression_csv(const std::filesystem::path& path, const RegressionModel& m) {
    std::vector<CsvRow> rows;
    for (std::size_t i = 0; i < m.names.size(); ++i)
        rows.push_back({m.names[i], format_double(m.fit.coef[i]), format_double(m.fit.std_errors[i]), format_double(m.fit.p_values[i])});
    rows.push_back({"#n", std::to_string(m.fit.n), "", ""});
    rows.push_back({"#rank", std::to_string(m.fit.rank), "", ""});
    rows.push_back({"#residual_error", format_double(m.fit.residual_error), "", ""});
    rows.push_back({"#baseline_error", format_double(m.fit.baseline_error), "", ""});
    rows.push_back({"#accuracy_mean", format_double(m.acc_mean), "", ""});
    rows.push_back({"#accuracy_std", format_double(m.acc_std), "", ""});
    write_csv(path, {"term", "coefficient", "std_error", "p_value"}, rows);
}

namespace {

std::vector<std::string> present_labels(const std::vector<RunRecord>& records, Field f) {
    std::set<std::string> present;
    for (const auto& r : records)
        if (r.ok()) present.insert(category_label(r.hp, f));
    std::vector<std::string> out;
    for (const auto& l : field_labels(f))
        if (f != Field::dataset || present.count(l)) out.push_back(l);
    for (const auto& l : present)
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
}

}  // namespace

ComboTable combo_table(const std::vector<RunRecord>& records, Field a, Field b) {
    if (a == b) throw ConfigError(fmt::format("combination table needs two different fields, got {} twice", field_name(a)));
    ComboTable t;
    t.row_field = a;
    t.col_field = b;
    t.rows = present_labels(records, a);
    t.cols = present_labels(records, b);
    t.mean.assign(t.rows.size(), std::vector<double>(t.cols.size(), 0.0));
    t.count.assign(t.rows.size(), std::vector<std::size_t>(t.cols.size(), 0));
    for (const auto& r : records) {
        if (!r.ok()) continue;
        const auto i = static_cast<std::size_t>(std::find(t.rows.begin(), t.rows.end(), category_label(r.hp, a)) - t.rows.begin());
        const auto j = static_cast<std::size_t>(std::find(t.cols.begin(), t.cols.end(), category_label(r.hp, b)) - t.cols.begin());
        t.mean[i][j] += r.final_test_accuracy();
        ++t.count[i][j];
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t j = 0; j < t.cols.size(); ++j)
            t.mean[i][j] = t.count[i][j] ? t.mean[i][j] / static_cast<double>(t.count[i][j]) : std::numeric_limits<double>::quiet_NaN();
    return t;
}

void write_combo_csv(const std::filesystem::path& path, const ComboTable& t) {
    CsvRow header{fmt::format("{}\\{}", field_name(t.row_field), field_name(t.col_field))};
    for (const auto& c : t.cols) header.push_back(c);
    for (const auto& c : t.cols) header.push_back("n:" + c);
    std::vector<CsvRow> rows;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        CsvRow r{t.rows[i]};
        for (std::size_t j = 0; j < t.cols.size(); ++j) r.push_back(t.count[i][j] ? format_double(t.mean[i][j]) : "");
        for (std::size_t j = 0; j < t.cols.size(); ++j) r.push_back(std::to_string(t.count[i][j]));
        rows.push_back(std::move(r));
    }
    write_csv(path, header, rows);
}

PcaResult pca(const Matrix& X, std::size_t k, const PcaConfig& cfg) {
    const std::size_t n = X.size();
    if (n < 2) throw Error("pca: need at least 2 rows");
    const std::size_t d = X.front().size();
    if (k == 0 || k > std::min(n - 1, d)) throw ConfigError(fmt::format("pca: k = {} outside 1..{}", k, std::min(n - 1, d)));
    PcaResult res;
    res.mean.assign(d, 0.0);
    for (const auto& r : X) {
        if (r.size() != d) throw ShapeError("pca: ragged matrix");
        for (std::size_t f = 0; f < d; ++f) res.mean[f] += r[f];
    }
    for (auto& m : res.mean) m /= static_cast<double>(n);
    Eigen::MatrixXd Xc(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < d; ++f) Xc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = X[i][f] - res.mean[f];
    const double denom = static_cast<double>(n - 1);
    res.total_variance = Xc.squaredNorm() / denom;

    Rng rng(cfg.seed);
    std::vector<Eigen::VectorXd> found;
    for (std::size_t c = 0; c < k; ++c) {
        Eigen::VectorXd v(d);
        for (Eigen::Index f = 0; f < v.size(); ++f) v(f) = rng.normal();
        auto deflate = [&](Eigen::VectorXd& w) {
            for (const auto& u : found) w -= u.dot(w) * u;
        };
        deflate(v);
        v.normalize();
        double lambda = 0;
        for (std::size_t it = 0; it < cfg.max_iter; ++it) {
            Eigen::VectorXd w = Xc.transpose() * (Xc * v) / denom;
            deflate(w);
            const double norm = w.norm();
            if (norm == 0) break;  // remaining variance is zero
            w /= norm;
            const double change = std::min((w - v).norm(), (w + v).norm());
            v = w;
            const double prev = lambda;
            lambda = norm;
            if (change < 1e-10 || (it > 0 && std::abs(lambda - prev) <= cfg.tol * lambda && change < 1e-6)) break;
        }
        // final Rayleigh quotient and re-orthonormalisation
        deflate(v);
        v.normalize();
        lambda = (Xc * v).squaredNorm() / denom;
        found.push_back(v);
        res.variances.push_back(lambda);
    }
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res.variances[a] > res.variances[b]; });
    std::vector<double> sorted;
    for (std::size_t i : order) {
        sorted.push_back(res.variances[i]);
        res.components.emplace_back(found[i].data(), found[i].data() + d);
    }
    res.variances = std::move(sorted);
    return res;
}

Matrix pca_project(const PcaResult& p, const Matrix& X) {
    Matrix out;
    for (const auto& r : X) {
        if (r.size() != p.mean.size()) throw ShapeError("pca_project: dimension mismatch");
        std::vector<double> z;
        for (const auto& c : p.components) {
            double s = 0;
            for (std::size_t f = 0; f < r.size(); ++f) s += (r[f] - p.mean[f]) * c[f];
            z.push_back(s);
        }
        out.push_back(std::move(z));
    }
    return out;
}

double pca_reconstruction_error(const PcaResult& p, const Matrix& X, std::size_t k) {
    if (k > p.components.size()) throw ConfigError("pca_reconstruction_error: k exceeds component count");
    double err = 0;
    for (const auto& r : X) {
        std::vector<double> c(r.size());
        for (std::size_t f = 0; f < r.size(); ++f) c[f] = r[f] - p.mean[f];
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0;
            for (std::size_t f = 0; f < r.size(); ++f) s += c[f] * p.components[i][f];
            for (std::size_t f = 0; f < r.size(); ++f) c[f] -= s * p.components[i][f];
        }
        for (double v : c) err += v * v;
    }
    return err / static_cast<double>(X.size());
}

Matrix load_weight_matrix(const std::filesystem::path& root, const std::vector<RunRecord>& records, int snapshot, Domain domain) {
    if (snapshot < 1 || snapshot > 20) throw ConfigError(fmt::format("snapshot position {} outside 1..20", snapshot));
    Matrix X;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        const auto wv = read_snapshot(root / "runs" / r.id / r.snapshot_files.at(static_cast<std::size_t>(snapshot - 1))).weights;
        const auto range = domain_range(wv.index, domain);
        X.emplace_back(wv.theta.begin() + static_cast<std::ptrdiff_t>(range.begin), wv.theta.begin() + static_cast<std::ptrdiff_t>(range.end));
        if (X.size() > 1 && X.back().size() != X.front().size())
            throw ShapeError(fmt::format("run {}: {} weights in domain, first run has {} (mixed architectures)", r.id, X.back().size(),
                                         X.front().size()));
    }
    return X;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: vectors must have equal length >= 2");
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0 || sbb == 0) throw Error("pearson: constant vector");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Matrix coeff_correlation(const std::vector<RegressionModel>& models) {
    if (models.size() < 2) throw Error("coeff_correlation: need at least 2 models");
    for (const auto& m : models)
        if (m.names != models.front().names) throw ShapeError(fmt::format("coeff_correlation: model '{}' has a different coefficient layout", m.dataset));
    Matrix out(models.size(), std::vector<double>(models.size(), 1.0));
    for (std::size_t i = 0; i < models.size(); ++i)
        for (std::size_t j = i + 1; j < models.size(); ++j) out[i][j] = out[j][i] = pearson(models[i].fit.coef, models[j].fit.coef);
    return out;
}

}  // namespace nws
