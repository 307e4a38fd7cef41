#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nws {

using Matrix = std::vector<std::vector<double>>;

enum class SvmKind { linear, rbf, logistic };
std::string_view to_string(SvmKind k);
SvmKind parse_svm_kind(std::string_view s);

struct SvmConfig {
    SvmKind kind = SvmKind::linear;
    // linear / logistic: objective lambda/2 |w|^2 + mean loss
    double lambda = 1e-2;
    int epochs = 200;
    // rbf
    double C = 1.0;
    double gamma = 0.0;  // 0 selects 1 / (d * mean standardized feature variance)
    double tol = 1e-3;
    std::size_t max_iter = 0;  // 0 selects max(10^6, 100 n)
    std::size_t threads = 1;
};

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;  // 1 for zero-variance features

    static Standardizer fit(const Matrix& X);
    std::vector<double> apply(const std::vector<double>& row) const;
};

struct SvmModel {
    SvmKind kind = SvmKind::linear;
    SvmConfig config;
    std::vector<std::string> classes;
    std::vector<std::string> schema;
    Standardizer standardizer;
    // linear / logistic, one row per class
    Matrix coef;
    std::vector<double> intercept;
    // rbf: shared support vectors (standardized), per-class dual coefficients alpha_i y_i
    double gamma = 0;
    Matrix support;
    Matrix dual;
    std::vector<double> rho;

    std::size_t feature_count() const { return standardizer.mean.size(); }
};

// Labels are indices into class_names; every class needs at least 2 samples.
SvmModel fit_svm(const Matrix& X, const std::vector<int>& y, const std::vector<std::string>& class_names,
                 const SvmConfig& cfg = {});

// Per-class decision values for each row.
Matrix decision_values(const SvmModel& m, const Matrix& X);
// Argmax with ties toward the lowest class index.
std::vector<int> predict(const SvmModel& m, const Matrix& X);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

// sqrt(sum_c tau_{c,f}^2); linear and logistic models only.
std::vector<double> feature_importance(const SvmModel& m);

// Maps string labels to indices. Classes follow `order` when given (labels
// outside it are an error), otherwise first appearance.
std::pair<std::vector<int>, std::vector<std::string>> encode_labels(const std::vector<std::string>& labels,
                                                                    const std::vector<std::string>& order = {});

void save_svm(const std::filesystem::path& path, const SvmModel& m);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace nws
