#pragma once

#include "nws/layer.hpp"
#include "nws/loss.hpp"
#include "nws/optimizer.hpp"

#include <span>
#include <vector>

namespace nws {

// A sequential stack of engine layers. Not safe for concurrent use; distinct
// instances are independent.
template <typename Real>
class Network {
public:
    Network() = default;
    Network(Shape sample_shape, std::vector<LayerState<Real>> layers, Rng dropout_rng = Rng(0));

    // Input is [batch, sample_shape...]. Train mode keeps caches for backward.
    Tensor<Real> forward(const Tensor<Real>& batch, Mode mode);
    // Backpropagates from d(loss)/d(output); parameter gradients land in grads().
    Tensor<Real> backward(const Tensor<Real>& grad_output);

    // Forward + softmax cross-entropy + backward + optimizer step. Returns
    // the loss and the number of correct argmax predictions.
    std::pair<Real, std::size_t> train_step(const Tensor<Real>& batch, std::span<const int> labels,
                                            OptimizerState<Real>& opt, double lr);

    // Argmax class per sample in inference mode, evaluated in chunks.
    std::vector<int> predict(const Tensor<Real>& batch, std::size_t chunk = 256);

    std::vector<Tensor<Real>*> trainable();
    std::vector<const Tensor<Real>*> gradients() const;

    std::vector<LayerState<Real>>& layers() { return layers_; }
    const std::vector<LayerState<Real>>& layers() const { return layers_; }
    const Shape& sample_shape() const { return sample_shape_; }
    Rng& dropout_rng() { return dropout_rng_; }

private:
    Shape sample_shape_;
    std::vector<LayerState<Real>> layers_;
    std::vector<LayerCache<Real>> caches_;
    std::vector<LayerGrads<Real>> grads_;
    Rng dropout_rng_;
};

// argmax with ties broken toward the lowest index
template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& scores);

}  // namespace nws
