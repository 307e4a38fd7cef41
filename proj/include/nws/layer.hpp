#pragma once

#include "nws/rng.hpp"
#include "nws/tensor.hpp"

#include <cstddef>
#include <string_view>
#include <type_traits>
#include <vector>

namespace nws {

enum class LayerKind { conv2d, conv1d, fc, maxpool2d, maxpool1d, batchnorm, dropout, activation, reshape };
enum class Activation { relu, elu, sigmoid, tanh };
enum class Mode { train, infer };

std::string_view to_string(LayerKind k);
std::string_view to_string(Activation a);
LayerKind parse_layer_kind(std::string_view s);
Activation parse_activation(std::string_view s);

inline bool is_conv(LayerKind k) { return k == LayerKind::conv2d || k == LayerKind::conv1d; }
inline bool has_mult(LayerKind k) { return is_conv(k) || k == LayerKind::fc; }

struct LayerHyper {
    std::size_t kernel = 0;        // conv filter extent (square for conv2d)
    std::size_t in_channels = 0;   // conv/bn channels or fc input features
    std::size_t out_channels = 0;  // conv channels or fc output features
    Activation activation = Activation::relu;
    double keep_prob = 0.5;
    double bn_epsilon = 1e-3;
    double bn_momentum = 0.99;
};

// Parameters and settings of one engine layer. mult holds conv filters as
// [out][kh][kw][in] (conv1d: [out][k][in]) and fc matrices as [in][out].
template <typename Real>
struct LayerState {
    LayerKind kind = LayerKind::activation;
    LayerHyper hyper;
    Tensor<Real> mult;
    Tensor<Real> bias;
    Tensor<Real> bn_beta;
    Tensor<Real> bn_gamma;
    Tensor<Real> bn_mean;
    Tensor<Real> bn_var;
};

// Allocates zero-filled parameter tensors of the right shape for the kind.
template <typename Real>
LayerState<Real> make_layer(LayerKind kind, const LayerHyper& hyper);

template <typename Real>
struct LayerGrads {
    Tensor<Real> mult;
    Tensor<Real> bias;
    Tensor<Real> bn_beta;
    Tensor<Real> bn_gamma;
};

template <typename Real>
struct LayerCache {
    Mode mode = Mode::infer;
    Shape input_shape;
    Shape output_shape;
    Tensor<Real> input;              // activation input, fc input
    Tensor<Real> output;             // activation output
    std::vector<Real> cols;          // conv im2col matrix
    std::vector<Real> mask;          // dropout scale per element
    std::vector<std::size_t> argmax; // maxpool source index per output
    std::vector<Real> xhat;          // batchnorm normalized input
    std::vector<Real> inv_std;       // batchnorm per-channel 1/sqrt(var+eps)
};

// Forward one layer. Batchnorm in train mode updates running statistics, so
// the layer is taken by reference. cache may be null for inference.
template <typename Real>
Tensor<Real> layer_forward(LayerState<Real>& layer, const std::type_identity_t<Tensor<Real>>& input, Mode mode,
                           Rng& rng, std::type_identity_t<LayerCache<Real>>* cache);

// Gradient of the loss w.r.t. the layer input; parameter gradients are
// written (not accumulated) into grads.
template <typename Real>
Tensor<Real> layer_backward(const LayerState<Real>& layer, const LayerCache<Real>& cache,
                            const Tensor<Real>& grad_output, LayerGrads<Real>& grads);

}  // namespace nws
