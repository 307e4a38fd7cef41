#include "nws/data.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <functional>

namespace nws {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void check_magic(const std::vector<unsigned char>& b, std::uint32_t expected, const std::filesystem::path& path) {
    if (b.size() < 4) throw FormatError(fmt::format("'{}': file too short for IDX header", path.string()));
    const auto magic = be32(b, 0);
    if (magic != expected)
        throw FormatError(fmt::format("'{}': bad IDX magic 0x{:08x}, expected 0x{:08x}", path.string(), magic, expected));
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
    const auto b = read_file(path);
    check_magic(b, 0x00000803, path);
    if (b.size() < 16) throw FormatError(fmt::format("'{}': truncated IDX header", path.string()));
    IdxImages img;
    img.count = be32(b, 4);
    img.rows = be32(b, 8);
    img.cols = be32(b, 12);
    const std::size_t need = img.count * img.rows * img.cols;
    if (b.size() - 16 != need)
        throw FormatError(fmt::format("'{}': payload {} bytes, expected {}", path.string(), b.size() - 16, need));
    img.pixels.assign(b.begin() + 16, b.end());
    return img;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
    const auto b = read_file(path);
    check_magic(b, 0x00000801, path);
    if (b.size() < 8) throw FormatError(fmt::format("'{}': truncated IDX header", path.string()));
    const std::size_t count = be32(b, 4);
    if (b.size() - 8 != count)
        throw FormatError(fmt::format("'{}': payload {} bytes, expected {}", path.string(), b.size() - 8, count));
    return {b.begin() + 8, b.end()};
}

std::vector<float> upsample_gray(std::span<const unsigned char> pixels, std::size_t side) {
    std::vector<float> out(kImageSize);
    const double scale = static_cast<double>(side) / static_cast<double>(kImageSide);
    const auto max_i = static_cast<double>(side - 1);
    auto at = [&](std::size_t y, std::size_t x) { return pixels[y * side + x] / 255.0; };
    for (std::size_t y = 0; y < kImageSide; ++y) {
        const double sy = std::clamp((static_cast<double>(y) + 0.5) * scale - 0.5, 0.0, max_i);
        const auto y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, side - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < kImageSide; ++x) {
            const double sx = std::clamp((static_cast<double>(x) + 0.5) * scale - 0.5, 0.0, max_i);
            const auto x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, side - 1);
            const double fx = sx - static_cast<double>(x0);
            const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
            const auto f = static_cast<float>(std::clamp(v, 0.0, 1.0));
            for (std::size_t c = 0; c < kImageChannels; ++c) out[(y * kImageSide + x) * kImageChannels + c] = f;
        }
    }
    return out;
}

Dataset load_mnist_like(const std::filesystem::path& dir, const std::string& name) {
    Dataset ds;
    ds.name = name;
    auto load = [&](const char* images, const char* labels, std::vector<float>& out_img, std::vector<int>& out_lab,
                    std::size_t drop_tail) {
        const auto img = read_idx_images(dir / images);
        auto lab = read_idx_labels(dir / labels);
        if (img.count != lab.size())
            throw FormatError(fmt::format("{}: {} images but {} labels", dir.string(), img.count, lab.size()));
        if (img.rows != img.cols) throw FormatError(fmt::format("{}: non-square images", dir.string()));
        const std::size_t keep = img.count > drop_tail ? img.count - drop_tail : img.count;
        const std::size_t px = img.rows * img.cols;
        out_img.reserve(keep * kImageSize);
        for (std::size_t i = 0; i < keep; ++i) {
            auto up = upsample_gray({img.pixels.data() + i * px, px}, img.rows);
            out_img.insert(out_img.end(), up.begin(), up.end());
        }
        lab.resize(keep);
        out_lab = std::move(lab);
    };
    load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", ds.train_images, ds.train_labels, kHoldout);
    load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", ds.test_images, ds.test_labels, 0);
    for (int l : ds.train_labels)
        if (l < 0 || l >= 10) throw FormatError(fmt::format("{}: label {} out of range", dir.string(), l));
    return ds;
}

void read_cifar_records(const std::filesystem::path& path, std::vector<float>& images, std::vector<int>& labels) {
    constexpr std::size_t record = 1 + kImageSize;
    const auto b = read_file(path);
    if (b.empty() || b.size() % record != 0)
        throw FormatError(fmt::format("'{}': size {} is not a multiple of the {}-byte record", path.string(), b.size(), record));
    const std::size_t n = b.size() / record;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* r = b.data() + i * record;
        if (r[0] > 9) throw FormatError(fmt::format("'{}': label {} out of range in record {}", path.string(), r[0], i));
        labels.push_back(r[0]);
        // CHW bytes -> HWC floats
        for (std::size_t y = 0; y < kImageSide; ++y)
            for (std::size_t x = 0; x < kImageSide; ++x)
                for (std::size_t c = 0; c < kImageChannels; ++c)
                    images.push_back(static_cast<float>(r[1 + c * 1024 + y * kImageSide + x]) / 255.0f);
    }
}

Dataset load_cifar10(const std::filesystem::path& dir) {
    Dataset ds;
    ds.name = "cifar10";
    for (int i = 1; i <= 5; ++i)
        read_cifar_records(dir / fmt::format("data_batch_{}.bin", i), ds.train_images, ds.train_labels);
    if (ds.train_labels.size() > kHoldout) {
        ds.train_labels.resize(ds.train_labels.size() - kHoldout);
        ds.train_images.resize(ds.train_labels.size() * kImageSize);
    }
    read_cifar_records(dir / "test_batch.bin", ds.test_images, ds.test_labels);
    return ds;
}

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    double h = 0;
    if (delta > 0) {
        if (mx == r)
            h = (g - b) / delta;
        else if (mx == g)
            h = 2.0 + (b - r) / delta;
        else
            h = 4.0 + (r - g) / delta;
        h /= 6.0;
        if (h < 0) h += 1.0;
    }
    const double s = mx > 0 ? delta / mx : 0.0;
    return {h, s, mx};
}

void fill_synthetic(std::size_t n, const SyntheticConfig& cfg, Rng rng, std::vector<float>& images, std::vector<int>& labels) {
    images.assign(n * kImageSize, 0.0f);
    labels.resize(n);
    const double centre = (kImageSide - 1) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto cls = static_cast<int>(i % cfg.num_classes);
        labels[i] = cls;
        const double angle = 2.0 * std::numbers::pi * cls / static_cast<double>(cfg.num_classes);
        const double cx = centre + 9.0 * std::cos(angle) + rng.uniform(-1.5, 1.5);
        const double cy = centre + 9.0 * std::sin(angle) + rng.uniform(-1.5, 1.5);
        const auto colour = hsv_to_rgb(static_cast<double>(cls) / static_cast<double>(cfg.num_classes), 0.8, 1.0);
        float* img = images.data() + i * kImageSize;
        for (std::size_t y = 0; y < kImageSide; ++y)
            for (std::size_t x = 0; x < kImageSide; ++x) {
                const double d2 = std::pow(static_cast<double>(x) - cx, 2) + std::pow(static_cast<double>(y) - cy, 2);
                const double blob = 0.85 * std::exp(-d2 / (2.0 * 3.5 * 3.5));
                for (std::size_t c = 0; c < kImageChannels; ++c) {
                    const double v = 0.1 + blob * colour[c] + cfg.noise * rng.normal();
                    img[(y * kImageSide + x) * kImageChannels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    }
}

}  // namespace

Dataset make_synthetic(const SyntheticConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
    Dataset ds;
    ds.name = "synthetic";
    ds.num_classes = cfg.num_classes;
    Rng root(cfg.seed);
    fill_synthetic(cfg.train_size, cfg, root.substream("synthetic-train"), ds.train_images, ds.train_labels);
    fill_synthetic(cfg.test_size, cfg, root.substream("synthetic-test"), ds.test_images, ds.test_labels);
    return ds;
}

Dataset load_dataset(const std::string& name, const std::filesystem::path& path, const SyntheticConfig& synthetic) {
    if (name == "mnist" || name == "fashion_mnist") return load_mnist_like(path, name);
    if (name == "cifar10") return load_cifar10(path);
    if (name == "synthetic") return make_synthetic(synthetic);
    throw ConfigError(fmt::format("no loader for dataset '{}' (svhn and stl10 are not supported)", name));
}

AugmentConfig AugmentConfig::identity() {
    AugmentConfig c;
    c.translate = {0, 0};
    c.rotate = {0, 0};
    c.zoom = {0, 0};
    c.shear = {0, 0};
    c.brightness = {0, 0};
    c.contrast = {1, 1};
    c.hue = {0, 0};
    c.saturation = {1, 1};
    c.noise = {0, 0};
    return c;
}

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
    auto u = [&](Range r) { return rng.uniform(r.lo, r.hi); };
    AugmentDraw d;
    d.tx = u(cfg.translate);
    d.ty = u(cfg.translate);
    d.rotate_deg = u(cfg.rotate);
    d.zoom = u(cfg.zoom);
    d.shear_deg = u(cfg.shear);
    d.brightness = u(cfg.brightness);
    d.contrast = u(cfg.contrast);
    d.hue = u(cfg.hue);
    d.saturation = u(cfg.saturation);
    d.noise_sigma = u(cfg.noise);
    return d;
}

Affine2 geometric_map(const AugmentDraw& d) {
    const double th = d.rotate_deg * std::numbers::pi / 180.0;
    const double sh = std::tan(d.shear_deg * std::numbers::pi / 180.0);
    const double z = 1.0 + d.zoom;
    // rotation * shear(x += sh * y) * zoom
    const double cs = std::cos(th), sn = std::sin(th);
    Affine2 m;
    m.a = z * cs;
    m.b = z * (cs * sh - sn);
    m.c = z * sn;
    m.d = z * (sn * sh + cs);
    m.tx = d.tx;
    m.ty = d.ty;
    return m;
}

void apply_augment(std::span<const float> in, std::span<float> out, const AugmentDraw& d, Rng& noise_rng) {
    if (in.size() != kImageSize || out.size() != kImageSize) throw ShapeError("augment: image must be 32x32x3");
    std::vector<float> img(in.begin(), in.end());
    constexpr auto S = static_cast<std::ptrdiff_t>(kImageSide);
    constexpr std::size_t C = kImageChannels;

    const bool geometric = d.tx != 0 || d.ty != 0 || d.rotate_deg != 0 || d.zoom != 0 || d.shear_deg != 0;
    if (geometric) {
        const auto m = geometric_map(d);
        const double det = m.a * m.d - m.b * m.c;
        const double ia = m.d / det, ib = -m.b / det, ic = -m.c / det, id = m.a / det;
        const double centre = (kImageSide - 1) / 2.0;
        std::vector<float> res(kImageSize, 0.0f);
        auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t c) -> double {
            if (y < 0 || y >= S || x < 0 || x >= S) return 0.0;
            return in[(static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x)) * C + c];
        };
        for (std::ptrdiff_t y = 0; y < S; ++y)
            for (std::ptrdiff_t x = 0; x < S; ++x) {
                const double ox = static_cast<double>(x) - centre - m.tx;
                const double oy = static_cast<double>(y) - centre - m.ty;
                const double sx = ia * ox + ib * oy + centre;
                const double sy = ic * ox + id * oy + centre;
                const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
                const double fx = sx - fx0, fy = sy - fy0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double v = (1 - fy) * ((1 - fx) * px(y0, x0, c) + fx * px(y0, x0 + 1, c)) +
                                     fy * ((1 - fx) * px(y0 + 1, x0, c) + fx * px(y0 + 1, x0 + 1, c));
                    res[(static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x)) * C + c] = static_cast<float>(v);
                }
            }
        img = std::move(res);
    }
    if (d.brightness != 0)
        for (auto& v : img) v = static_cast<float>(v + d.brightness);
    if (d.contrast != 1) {
        double mu = 0;
        for (float v : img) mu += v;
        mu /= static_cast<double>(img.size());
        for (auto& v : img) v = static_cast<float>(d.contrast * (v - mu) + mu);
    }
    if (d.hue != 0 || d.saturation != 1) {
        for (std::size_t p = 0; p < kImageSide * kImageSide; ++p) {
            float* rgb = img.data() + p * C;
            auto hsv = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
            hsv[0] += d.hue;
            hsv[0] -= std::floor(hsv[0]);
            hsv[1] = std::clamp(hsv[1] * d.saturation, 0.0, 1.0);
            const auto back = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
            for (std::size_t c = 0; c < C; ++c) rgb[c] = static_cast<float>(back[c]);
        }
    }
    if (d.noise_sigma > 0)
        for (auto& v : img) v = static_cast<float>(v + d.noise_sigma * noise_rng.normal());
    for (std::size_t i = 0; i < kImageSize; ++i) out[i] = std::clamp(img[i], 0.0f, 1.0f);
}

std::vector<float> augment(std::span<const float> image, const AugmentConfig& cfg, Rng& rng) {
    std::vector<float> out(image.begin(), image.end());
    if (!cfg.enabled) return out;
    const auto d = draw_augment(cfg, rng);
    apply_augment(image, out, d, rng);
    return out;
}

bool is_imbalanced(std::span<const int> labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
    return std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end();
}

std::vector<std::size_t> balanced_epoch_indices(std::span<const int> labels, std::size_t num_classes, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
            throw Error(fmt::format("balanced_epoch_indices: label {} out of range", l));
        by_class[static_cast<std::size_t>(l)].push_back(i);
    }
    std::size_t k = SIZE_MAX;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (by_class[c].empty()) throw Error(fmt::format("balanced_epoch_indices: class {} has no samples", c));
        k = std::min(k, by_class[c].size());
    }
    std::vector<std::size_t> out;
    out.reserve(k * num_classes);
    for (auto& members : by_class) {
        rng.shuffle(members.begin(), members.end());
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    }
    rng.shuffle(out.begin(), out.end());
    return out;
}

Split split_validation(std::size_t n, Rng& rng) {
    if (n < 10) throw Error(fmt::format("split_validation: need at least 10 samples, got {}", n));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    const std::size_t nv = n / 10;
    Split s;
    s.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
    s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

}  // namespace nws
