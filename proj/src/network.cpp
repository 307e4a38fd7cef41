#include "nws/network.hpp"

#include <fmt/format.h>

namespace nws {

template <typename Real>
Network<Real>::Network(Shape sample_shape, std::vector<LayerState<Real>> layers, Rng dropout_rng)
    : sample_shape_(std::move(sample_shape)),
      layers_(std::move(layers)),
      caches_(layers_.size()),
      grads_(layers_.size()),
      dropout_rng_(dropout_rng) {}

template <typename Real>
Tensor<Real> Network<Real>::forward(const Tensor<Real>& batch, Mode mode) {
    if (batch.rank() != sample_shape_.size() + 1 ||
        !std::equal(sample_shape_.begin(), sample_shape_.end(), batch.shape.begin() + 1))
        throw ShapeError(fmt::format("network: batch shape {} does not match sample shape {}",
                                     shape_string(batch.shape), shape_string(sample_shape_)));
    Tensor<Real> x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        x = layer_forward(layers_[i], x, mode, dropout_rng_, mode == Mode::train ? &caches_[i] : nullptr);
    return x;
}

template <typename Real>
Tensor<Real> Network<Real>::backward(const Tensor<Real>& grad_output) {
    Tensor<Real> g = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layer_backward(layers_[i], caches_[i], g, grads_[i]);
    return g;
}

template <typename Real>
std::vector<Tensor<Real>*> Network<Real>::trainable() {
    std::vector<Tensor<Real>*> out;
    for (auto& l : layers_) {
        if (has_mult(l.kind)) {
            out.push_back(&l.mult);
            out.push_back(&l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            out.push_back(&l.bn_beta);
            out.push_back(&l.bn_gamma);
        }
    }
    return out;
}

template <typename Real>
std::vector<const Tensor<Real>*> Network<Real>::gradients() const {
    std::vector<const Tensor<Real>*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (has_mult(l.kind)) {
            out.push_back(&grads_[i].mult);
            out.push_back(&grads_[i].bias);
        } else if (l.kind == LayerKind::batchnorm) {
            out.push_back(&grads_[i].bn_beta);
            out.push_back(&grads_[i].bn_gamma);
        }
    }
    return out;
}

template <typename Real>
std::pair<Real, std::size_t> Network<Real>::train_step(const Tensor<Real>& batch, std::span<const int> labels,
                                                       OptimizerState<Real>& opt, double lr) {
    Tensor<Real> logits = forward(batch, Mode::train);
    auto loss = softmax_xent(logits, labels);
    std::size_t correct = 0;
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    backward(loss.grad_logits);
    auto params = trainable();
    auto grads = gradients();
    optimizer_step<Real>(opt, params, grads, lr);
    return {loss.loss, correct};
}

template <typename Real>
std::vector<int> Network<Real>::predict(const Tensor<Real>& batch, std::size_t chunk) {
    const std::size_t n = batch.dim(0);
    const std::size_t per = batch.size() / std::max<std::size_t>(n, 1);
    std::vector<int> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
        Shape s = batch.shape;
        s[0] = count;
        Tensor<Real> part(s, std::vector<Real>(batch.data.begin() + static_cast<std::ptrdiff_t>(start * per),
                                               batch.data.begin() + static_cast<std::ptrdiff_t>((start + count) * per)));
        auto p = argmax_rows(forward(part, Mode::infer));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

template <typename Real>
std::vector<int> argmax_rows(const Tensor<Real>& scores) {
    const std::size_t B = scores.dim(0);
    const std::size_t C = scores.size() / std::max<std::size_t>(B, 1);
    std::vector<int> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (scores.data[b * C + c] > scores.data[b * C + best]) best = c;
        out[b] = static_cast<int>(best);
    }
    return out;
}

template class Network<float>;
template class Network<double>;
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace nws
