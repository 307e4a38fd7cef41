#include "nws/svm.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <atomic>
#include <mutex>
#include <thread>

namespace nws {

std::string_view to_string(SvmKind k) {
    switch (k) {
        case SvmKind::linear: return "linear";
        case SvmKind::rbf: return "rbf";
        case SvmKind::logistic: return "logistic";
    }
    return "?";
}

SvmKind parse_svm_kind(std::string_view s) {
    for (auto k : {SvmKind::linear, SvmKind::rbf, SvmKind::logistic})
        if (to_string(k) == s) return k;
    throw ConfigError(fmt::format("unknown classifier '{}' (linear, rbf, logistic)", s));
}

Standardizer Standardizer::fit(const Matrix& X) {
    Standardizer s;
    const std::size_t d = X.front().size();
    const auto n = static_cast<double>(X.size());
    s.mean.assign(d, 0.0);
    s.scale.assign(d, 0.0);
    for (const auto& r : X)
        for (std::size_t f = 0; f < d; ++f) s.mean[f] += r[f];
    for (auto& m : s.mean) m /= n;
    for (const auto& r : X)
        for (std::size_t f = 0; f < d; ++f) s.scale[f] += (r[f] - s.mean[f]) * (r[f] - s.mean[f]);
    for (std::size_t f = 0; f < d; ++f) {
        const double sd = std::sqrt(s.scale[f] / n);
        // features constant on the training set map to 0
        s.scale[f] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[f])) ? sd : 1.0;
    }
    return s;
}

std::vector<double> Standardizer::apply(const std::vector<double>& row) const {
    if (row.size() != mean.size())
        throw ShapeError(fmt::format("feature row has {} values, model expects {}", row.size(), mean.size()));
    std::vector<double> out(row.size());
    for (std::size_t f = 0; f < row.size(); ++f) out[f] = (row[f] - mean[f]) / scale[f];
    return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Full-batch projected subgradient descent on lambda/2 |w|^2 + mean hinge,
// with the bias as an extra constant feature.
std::pair<std::vector<double>, double> fit_linear_binary(const Matrix& Z, const std::vector<double>& y, const SvmConfig& cfg) {
    const std::size_t n = Z.size(), d = Z.front().size();
    std::vector<double> w(d + 1, 0.0), g(d + 1);
    const double radius = 1.0 / std::sqrt(cfg.lambda);
    for (int t = 1; t <= cfg.epochs; ++t) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double margin = w[d];
            for (std::size_t f = 0; f < d; ++f) margin += w[f] * Z[i][f];
            if (y[i] * margin < 1.0) {
                for (std::size_t f = 0; f < d; ++f) g[f] += y[i] * Z[i][f];
                g[d] += y[i];
            }
        }
        const double eta = 1.0 / (cfg.lambda * t);
        const double shrink = 1.0 - eta * cfg.lambda;
        for (std::size_t f = 0; f <= d; ++f) w[f] = shrink * w[f] + eta * g[f] / static_cast<double>(n);
        const double norm = std::sqrt(dot(w, w));
        if (norm > radius)
            for (auto& v : w) v *= radius / norm;
    }
    const double b = w[d];
    w.pop_back();
    return {w, b};
}

std::pair<std::vector<double>, double> fit_logistic_binary(const Matrix& Z, const std::vector<double>& y, const SvmConfig& cfg) {
    const std::size_t n = Z.size(), d = Z.front().size();
    std::vector<double> w(d + 1, 0.0), g(d + 1);
    const double lr = 0.5;
    for (int t = 0; t < cfg.epochs; ++t) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double z = w[d];
            for (std::size_t f = 0; f < d; ++f) z += w[f] * Z[i][f];
            const double p = 1.0 / (1.0 + std::exp(-y[i] * z));
            const double c = -y[i] * (1.0 - p);
            for (std::size_t f = 0; f < d; ++f) g[f] += c * Z[i][f];
            g[d] += c;
        }
        for (std::size_t f = 0; f < d; ++f) w[f] -= lr * (g[f] / static_cast<double>(n) + cfg.lambda * w[f]);
        w[d] -= lr * g[d] / static_cast<double>(n);
    }
    const double b = w[d];
    w.pop_back();
    return {w, b};
}

double rbf(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-gamma * s);
}

// SMO with maximal-violating-pair selection. Returns alpha_i y_i and rho.
std::pair<std::vector<double>, double> fit_rbf_binary(const Matrix& K, const std::vector<double>& y, const SvmConfig& cfg) {
    const std::size_t n = y.size();
    const double C = cfg.C;
    std::vector<double> alpha(n, 0.0), grad(n, -1.0);
    const std::size_t cap = cfg.max_iter ? cfg.max_iter : std::max<std::size_t>(1000000, 100 * n);
    auto upper = [&](std::size_t i) { return (y[i] > 0 && alpha[i] < C) || (y[i] < 0 && alpha[i] > 0); };
    auto lower = [&](std::size_t i) { return (y[i] > 0 && alpha[i] > 0) || (y[i] < 0 && alpha[i] < C); };
    std::size_t iter = 0;
    for (;; ++iter) {
        double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
        std::size_t i = n, j = n;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -y[t] * grad[t];
            if (upper(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (lower(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        if (i == n || j == n || gmax - gmin < cfg.tol) break;
        if (iter >= cap) throw Error(fmt::format("rbf SVM did not converge within {} iterations (gap {:.3g})", cap, gmax - gmin));

        const double Qii = K[i][i], Qjj = K[j][j], Qij = y[i] * y[j] * K[i][j];
        const double ai = alpha[i], aj = alpha[j];
        double quad = Qii + Qjj - 2.0 * Qij;
        if (quad <= 0) quad = 1e-12;
        if (y[i] != y[j]) {
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0) {
                if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
            } else if (alpha[i] < 0) {
                alpha[i] = 0;
                alpha[j] = -diff;
            }
            if (diff > 0) {
                if (alpha[i] > C) { alpha[i] = C; alpha[j] = C - diff; }
            } else if (alpha[j] > C) {
                alpha[j] = C;
                alpha[i] = C + diff;
            }
        } else {
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > C) {
                if (alpha[i] > C) { alpha[i] = C; alpha[j] = sum - C; }
            } else if (alpha[j] < 0) {
                alpha[j] = 0;
                alpha[i] = sum;
            }
            if (sum > C) {
                if (alpha[j] > C) { alpha[j] = C; alpha[i] = sum - C; }
            } else if (alpha[i] < 0) {
                alpha[i] = 0;
                alpha[j] = sum;
            }
        }
        const double di = alpha[i] - ai, dj = alpha[j] - aj;
        for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * (y[i] * K[t][i] * di + y[j] * K[t][j] * dj);
    }
    // rho from free vectors, else midpoint of the feasible interval
    double sum_free = 0, ub = std::numeric_limits<double>::infinity(), lb = -ub;
    std::size_t free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (alpha[t] > 0 && alpha[t] < C) {
            sum_free += yg;
            ++free;
        } else if ((alpha[t] >= C && y[t] < 0) || (alpha[t] <= 0 && y[t] > 0)) {
            ub = std::min(ub, yg);
        } else {
            lb = std::max(lb, yg);
        }
    }
    const double rho = free ? sum_free / static_cast<double>(free) : (ub + lb) / 2.0;
    std::vector<double> coef(n);
    for (std::size_t t = 0; t < n; ++t) coef[t] = alpha[t] * y[t];
    return {coef, rho};
}

template <typename F>
void for_each_class(std::size_t classes, std::size_t threads, F&& f) {
    if (threads <= 1 || classes <= 1) {
        for (std::size_t c = 0; c < classes; ++c) f(c);
        return;
    }
    std::vector<std::jthread> pool;
    std::exception_ptr err;
    std::mutex m;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < std::min(threads, classes); ++t)
        pool.emplace_back([&] {
            for (std::size_t c; (c = next.fetch_add(1)) < classes;) {
                try {
                    f(c);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!err) err = std::current_exception();
                }
            }
        });
    pool.clear();
    if (err) std::rethrow_exception(err);
}

}  // namespace

SvmModel fit_svm(const Matrix& X, const std::vector<int>& y, const std::vector<std::string>& class_names, const SvmConfig& cfg) {
    if (X.empty()) throw Error("svm: empty training set");
    if (X.size() != y.size()) throw ShapeError(fmt::format("svm: {} rows but {} labels", X.size(), y.size()));
    const std::size_t d = X.front().size(), C = class_names.size();
    if (d == 0) throw ShapeError("svm: no features");
    if (C < 2) throw Error("svm: need at least 2 classes");
    std::vector<std::size_t> counts(C, 0);
    for (const auto& r : X) {
        if (r.size() != d) throw ShapeError("svm: ragged feature matrix");
        for (double v : r)
            if (!std::isfinite(v)) throw NumericError("svm: non-finite feature value");
    }
    for (int l : y) {
        if (l < 0 || static_cast<std::size_t>(l) >= C) throw Error(fmt::format("svm: label {} out of range", l));
        ++counts[static_cast<std::size_t>(l)];
    }
    for (std::size_t c = 0; c < C; ++c)
        if (counts[c] < 2) throw Error(fmt::format("svm: class '{}' has {} sample(s), need 2", class_names[c], counts[c]));
    if (cfg.kind != SvmKind::rbf && (cfg.lambda <= 0 || cfg.epochs <= 0)) throw ConfigError("svm: lambda and epochs must be positive");

    SvmModel m;
    m.kind = cfg.kind;
    m.config = cfg;
    m.classes = class_names;
    m.standardizer = Standardizer::fit(X);
    Matrix Z;
    Z.reserve(X.size());
    for (const auto& r : X) Z.push_back(m.standardizer.apply(r));

    auto targets = [&](std::size_t c) {
        std::vector<double> t(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) t[i] = static_cast<std::size_t>(y[i]) == c ? 1.0 : -1.0;
        return t;
    };

    if (cfg.kind == SvmKind::rbf) {
        double var_sum = 0;
        for (std::size_t f = 0; f < d; ++f) {
            double s = 0;
            for (const auto& r : Z) s += r[f] * r[f];
            var_sum += s / static_cast<double>(Z.size());
        }
        const double mean_var = var_sum / static_cast<double>(d);
        m.gamma = cfg.gamma > 0 ? cfg.gamma : (mean_var > 0 ? 1.0 / (static_cast<double>(d) * mean_var) : 1.0);
        const std::size_t n = Z.size();
        Matrix K(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) K[i][j] = K[j][i] = rbf(Z[i], Z[j], m.gamma);
        Matrix coef(C);
        m.rho.assign(C, 0.0);
        for_each_class(C, cfg.threads, [&](std::size_t c) {
            auto [a, rho] = fit_rbf_binary(K, targets(c), cfg);
            coef[c] = std::move(a);
            m.rho[c] = rho;
        });
        std::vector<std::size_t> sv;
        for (std::size_t i = 0; i < n; ++i)
            if (std::any_of(coef.begin(), coef.end(), [&](const auto& a) { return a[i] != 0.0; })) sv.push_back(i);
        m.dual.assign(C, {});
        for (std::size_t i : sv) {
            m.support.push_back(Z[i]);
            for (std::size_t c = 0; c < C; ++c) m.dual[c].push_back(coef[c][i]);
        }
        return m;
    }
    m.coef.assign(C, {});
    m.intercept.assign(C, 0.0);
    for_each_class(C, cfg.threads, [&](std::size_t c) {
        auto [w, b] = cfg.kind == SvmKind::linear ? fit_linear_binary(Z, targets(c), cfg) : fit_logistic_binary(Z, targets(c), cfg);
        m.coef[c] = std::move(w);
        m.intercept[c] = b;
    });
    return m;
}

Matrix decision_values(const SvmModel& m, const Matrix& X) {
    Matrix out;
    out.reserve(X.size());
    const std::size_t C = m.classes.size();
    for (const auto& r : X) {
        const auto z = m.standardizer.apply(r);
        std::vector<double> dv(C);
        if (m.kind == SvmKind::rbf) {
            std::vector<double> k(m.support.size());
            for (std::size_t s = 0; s < m.support.size(); ++s) k[s] = rbf(m.support[s], z, m.gamma);
            for (std::size_t c = 0; c < C; ++c) dv[c] = dot(m.dual[c], k) - m.rho[c];
        } else {
            for (std::size_t c = 0; c < C; ++c) dv[c] = dot(m.coef[c], z) + m.intercept[c];
        }
        out.push_back(std::move(dv));
    }
    return out;
}

std::vector<int> predict(const SvmModel& m, const Matrix& X) {
    std::vector<int> out;
    out.reserve(X.size());
    for (const auto& dv : decision_values(m, X)) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < dv.size(); ++c)
            if (dv[c] > dv[best]) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
    if (truth.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

std::vector<double> feature_importance(const SvmModel& m) {
    if (m.kind == SvmKind::rbf) throw Error("feature importance is undefined for rbf models");
    std::vector<double> out(m.feature_count(), 0.0);
    for (const auto& w : m.coef)
        for (std::size_t f = 0; f < w.size(); ++f) out[f] += w[f] * w[f];
    for (auto& v : out) v = std::sqrt(v);
    return out;
}

std::pair<std::vector<int>, std::vector<std::string>> encode_labels(const std::vector<std::string>& labels,
                                                                    const std::vector<std::string>& order) {
    std::vector<std::string> classes;
    std::map<std::string, int> index;
    if (!order.empty()) {
        for (const auto& o : order) {
            index.emplace(o, static_cast<int>(classes.size()));
            classes.push_back(o);
        }
    }
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) {
        auto it = index.find(l);
        if (it == index.end()) {
            if (!order.empty()) throw Error(fmt::format("label '{}' is not a known class", l));
            it = index.emplace(l, static_cast<int>(classes.size())).first;
            classes.push_back(l);
        }
        out.push_back(it->second);
    }
    return {out, classes};
}

// ---- model file: "NWSV", u16 version, u32 header length, JSON header,
// float64 payload, CRC-32 of everything before it ----

namespace {

constexpr char kSvmMagic[4] = {'N', 'W', 'S', 'V'};
constexpr std::uint16_t kSvmVersion = 1;

void put_matrix(std::vector<double>& out, const Matrix& m) {
    for (const auto& r : m) out.insert(out.end(), r.begin(), r.end());
}

Matrix take_matrix(const double*& p, std::size_t rows, std::size_t cols) {
    Matrix m(rows, std::vector<double>(cols));
    for (auto& r : m) {
        std::copy(p, p + cols, r.begin());
        p += cols;
    }
    return m;
}

}  // namespace

void save_svm(const std::filesystem::path& path, const SvmModel& m) {
    using Json = nlohmann::ordered_json;
    const std::size_t d = m.feature_count();
    Json h;
    h["kind"] = to_string(m.kind);
    h["classes"] = m.classes;
    h["schema"] = m.schema;
    h["features"] = d;
    h["support"] = m.support.size();
    h["lambda"] = m.config.lambda;
    h["epochs"] = m.config.epochs;
    h["C"] = m.config.C;
    h["gamma"] = m.gamma;
    h["tol"] = m.config.tol;
    const std::string header = h.dump();

    std::vector<double> payload;
    payload.insert(payload.end(), m.standardizer.mean.begin(), m.standardizer.mean.end());
    payload.insert(payload.end(), m.standardizer.scale.begin(), m.standardizer.scale.end());
    if (m.kind == SvmKind::rbf) {
        put_matrix(payload, m.support);
        put_matrix(payload, m.dual);
        payload.insert(payload.end(), m.rho.begin(), m.rho.end());
    } else {
        put_matrix(payload, m.coef);
        payload.insert(payload.end(), m.intercept.begin(), m.intercept.end());
    }

    std::string buf(kSvmMagic, 4);
    buf.append(reinterpret_cast<const char*>(&kSvmVersion), 2);
    const auto hl = static_cast<std::uint32_t>(header.size());
    buf.append(reinterpret_cast<const char*>(&hl), 4);
    buf += header;
    buf.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
    const auto crc = static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    buf.append(reinterpret_cast<const char*>(&crc), 4);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

SvmModel load_svm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < 14 || std::memcmp(buf.data(), kSvmMagic, 4) != 0)
        throw FormatError(fmt::format("'{}': not a classifier file (expected magic \"NWSV\")", path.string()));
    std::uint16_t version;
    std::memcpy(&version, buf.data() + 4, 2);
    if (version != kSvmVersion) throw FormatError(fmt::format("'{}': unsupported version {}", path.string(), version));
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    if (stored != static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4))))
        throw FormatError(fmt::format("'{}': checksum mismatch", path.string()));
    std::uint32_t hl;
    std::memcpy(&hl, buf.data() + 6, 4);
    if (10 + hl > buf.size() - 4) throw FormatError(fmt::format("'{}': truncated header", path.string()));
    SvmModel m;
    std::size_t d = 0, nsv = 0;
    try {
        const auto h = nlohmann::json::parse(buf.begin() + 10, buf.begin() + 10 + hl);
        m.kind = parse_svm_kind(h.at("kind").get<std::string>());
        m.classes = h.at("classes").get<std::vector<std::string>>();
        m.schema = h.at("schema").get<std::vector<std::string>>();
        d = h.at("features").get<std::size_t>();
        nsv = h.at("support").get<std::size_t>();
        m.config.kind = m.kind;
        m.config.lambda = h.at("lambda").get<double>();
        m.config.epochs = h.at("epochs").get<int>();
        m.config.C = h.at("C").get<double>();
        m.config.tol = h.at("tol").get<double>();
        m.gamma = h.at("gamma").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': bad header: {}", path.string(), e.what()));
    }
    const std::size_t C = m.classes.size();
    const std::size_t expect = 2 * d + (m.kind == SvmKind::rbf ? nsv * d + C * nsv + C : C * d + C);
    const std::size_t have = (buf.size() - 14 - hl) / sizeof(double);
    if (have != expect || (buf.size() - 14 - hl) % sizeof(double) != 0)
        throw FormatError(fmt::format("'{}': payload holds {} values, expected {}", path.string(), have, expect));
    std::vector<double> payload(have);
    std::memcpy(payload.data(), buf.data() + 10 + hl, have * sizeof(double));
    const double* p = payload.data();
    m.standardizer.mean.assign(p, p + d);
    p += d;
    m.standardizer.scale.assign(p, p + d);
    p += d;
    if (m.kind == SvmKind::rbf) {
        m.support = take_matrix(p, nsv, d);
        m.dual = take_matrix(p, C, nsv);
        m.rho.assign(p, p + C);
    } else {
        m.coef = take_matrix(p, C, d);
        m.intercept.assign(p, p + C);
    }
    return m;
}

}  // namespace nws
