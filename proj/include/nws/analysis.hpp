#pragma once

#include "nws/hp_space.hpp"
#include "nws/run_record.hpp"
#include "nws/store.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nws {

using Matrix = std::vector<std::vector<double>>;

struct OlsFit {
    std::vector<double> coef;
    std::vector<double> std_errors;
    std::vector<double> p_values;  // two-sided; 1 where the standard error is zero
    std::size_t rank = 0;
    std::size_t n = 0;
    double residual_error = 0;  // RMS residual
    double baseline_error = 0;  // RMS residual of the mean-only model
};

// Minimum-norm least squares through the SVD pseudo-inverse (singular values
// below 1e-10 * sigma_max dropped), t-tests with n - rank degrees of freedom.
OlsFit fit_ols(const Matrix& X, const std::vector<double>& y);

struct RegressionModel {
    std::string dataset;
    std::vector<std::string> names;  // design_row_names()
    OlsFit fit;
    double acc_mean = 0;
    double acc_std = 0;  // population std

    // Normalized and denormalized predictions.
    double predict_normalized(const HyperParams& hp) const;
    double predict_accuracy(const HyperParams& hp) const;
};

// Records must already be filtered; accuracy is the final test accuracy.
RegressionModel fit_accuracy_regression(const std::vector<RunRecord>& records, const std::string& dataset = {});
void write_regression_csv(const std::filesystem::path& path, const RegressionModel& m);

struct ComboTable {
    Field row_field = Field::batch_size;
    Field col_field = Field::optimizer;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Matrix mean;                                  // NaN for empty cells
    std::vector<std::vector<std::size_t>> count;  // 0 flags an empty cell
};

ComboTable combo_table(const std::vector<RunRecord>& records, Field a, Field b);
void write_combo_csv(const std::filesystem::path& path, const ComboTable& t);

struct PcaResult {
    std::vector<double> mean;
    Matrix components;  // k orthonormal rows
    std::vector<double> variances;
    double total_variance = 0;
};

struct PcaConfig {
    std::size_t max_iter = 5000;
    double tol = 1e-12;
    std::uint64_t seed = 0;
};

PcaResult pca(const Matrix& X, std::size_t k, const PcaConfig& cfg = {});
Matrix pca_project(const PcaResult& p, const Matrix& X);
// Mean squared reconstruction error of X with the first k components.
double pca_reconstruction_error(const PcaResult& p, const Matrix& X, std::size_t k);

// Loads snapshot j of every ok record restricted to a domain (conv-only by default).
Matrix load_weight_matrix(const std::filesystem::path& root, const std::vector<RunRecord>& records, int snapshot,
                          Domain domain = Domain::conv_only);

double pearson(const std::vector<double>& a, const std::vector<double>& b);
Matrix coeff_correlation(const std::vector<RegressionModel>& models);

}  // namespace nws
