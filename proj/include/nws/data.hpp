#pragma once

#include "nws/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nws {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSize = kImageSide * kImageSide * kImageChannels;

// Images are 32x32x3, HWC, float in [0, 1].
struct Dataset {
    std::string name;
    std::size_t num_classes = 10;
    std::vector<float> train_images;
    std::vector<int> train_labels;
    std::vector<float> test_images;
    std::vector<int> test_labels;

    std::size_t train_size() const { return train_labels.size(); }
    std::size_t test_size() const { return test_labels.size(); }
    std::span<const float> train_image(std::size_t i) const {
        return {train_images.data() + i * kImageSize, kImageSize};
    }
    std::span<const float> test_image(std::size_t i) const { return {test_images.data() + i * kImageSize, kImageSize}; }
};

struct SyntheticConfig {
    std::size_t train_size = 1000;
    std::size_t test_size = 200;
    std::size_t num_classes = 10;
    double noise = 0.05;
    std::uint64_t seed = 7;
};

// Number of training images held out of the standard train sets.
inline constexpr std::size_t kHoldout = 5000;

// IDX readers; throw FormatError on bad magic or truncated payloads.
struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<unsigned char> pixels;
};
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

// Bilinear resample of one grayscale square image to 32x32, replicated to 3 channels.
std::vector<float> upsample_gray(std::span<const unsigned char> pixels, std::size_t side);

// MNIST / Fashion-MNIST directory with the four standard IDX files.
Dataset load_mnist_like(const std::filesystem::path& dir, const std::string& name);
// CIFAR-10 binary directory: data_batch_1..5.bin and test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir);
// Parses CIFAR-10 binary records (1 label byte + 3072 CHW pixel bytes).
void read_cifar_records(const std::filesystem::path& path, std::vector<float>& images, std::vector<int>& labels);
Dataset make_synthetic(const SyntheticConfig& cfg);

// name: mnist | fashion_mnist | cifar10 | synthetic
Dataset load_dataset(const std::string& name, const std::filesystem::path& path, const SyntheticConfig& synthetic = {});

struct Range {
    double lo = 0;
    double hi = 0;
};

struct AugmentConfig {
    bool enabled = true;
    Range translate{-3, 3};        // pixels, independently in x and y
    Range rotate{-15, 15};         // degrees
    Range zoom{-0.033, 0.033};     // relative scale change
    Range shear{-3, 3};            // degrees
    Range brightness{-0.2, 0.2};   // additive
    Range contrast{0.5, 1.5};      // k in k(x - mu) + mu
    Range hue{-0.08, 0.08};        // offset of H in [0, 1)
    Range saturation{0.3, 1.5};    // factor on S
    Range noise{0.0, 0.03};        // gaussian sigma

    static AugmentConfig identity();
};

// Parameters of one random draw from an AugmentConfig.
struct AugmentDraw {
    double tx = 0, ty = 0, rotate_deg = 0, zoom = 0, shear_deg = 0;
    double brightness = 0, contrast = 1, hue = 0, saturation = 1, noise_sigma = 0;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng);
// Geometric (single affine resample, bilinear, zero fill) then photometric
// transforms, then noise; output clamped to [0, 1].
void apply_augment(std::span<const float> in, std::span<float> out, const AugmentDraw& d, Rng& noise_rng);
std::vector<float> augment(std::span<const float> image, const AugmentConfig& cfg, Rng& rng);

// Affine map used by the geometric stage, on (x = column, y = row) pixel
// coordinates about the image centre: out = A (in - c) + c + t.
struct Affine2 {
    double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;
};
Affine2 geometric_map(const AugmentDraw& d);

// K = min class count indices per class, shuffled; errors on an empty class.
std::vector<std::size_t> balanced_epoch_indices(std::span<const int> labels, std::size_t num_classes, Rng& rng);
bool is_imbalanced(std::span<const int> labels, std::size_t num_classes);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};
// Validation = floor(10%) of a random permutation.
Split split_validation(std::size_t n, Rng& rng);

}  // namespace nws
