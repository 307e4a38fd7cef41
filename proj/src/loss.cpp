#include "nws/loss.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace nws {

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: logits must be [batch x classes]");
    const std::size_t B = logits.dim(0);
    const std::size_t C = logits.dim(1);
    Tensor<Real> p(logits.shape);
    for (std::size_t b = 0; b < B; ++b) {
        const Real* row = logits.data.data() + b * C;
        Real* out = p.data.data() + b * C;
        const Real mx = *std::max_element(row, row + C);
        Real sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            out[c] = std::exp(row[c] - mx);
            sum += out[c];
        }
        for (std::size_t c = 0; c < C; ++c) out[c] /= sum;
    }
    return p;
}

template <typename Real>
LossResult<Real> softmax_xent(const Tensor<Real>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_xent: logits must be [batch x classes]");
    const std::size_t B = logits.dim(0);
    const std::size_t C = logits.dim(1);
    if (labels.size() != B)
        throw ShapeError(fmt::format("softmax_xent: {} labels for batch of {}", labels.size(), B));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw Error(fmt::format("softmax_xent: label {} out of range [0, {})", y, C));

    LossResult<Real> r;
    r.grad_logits = Tensor<Real>(logits.shape);
    double total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Real* row = logits.data.data() + b * C;
        const Real mx = *std::max_element(row, row + C);
        Real sum = 0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
        const Real log_z = mx + std::log(sum);
        const auto y = static_cast<std::size_t>(labels[b]);
        total += static_cast<double>(log_z - row[y]);
        Real* g = r.grad_logits.data.data() + b * C;
        for (std::size_t c = 0; c < C; ++c) {
            g[c] = std::exp(row[c] - log_z) / static_cast<Real>(B);
        }
        g[y] -= Real(1) / static_cast<Real>(B);
    }
    r.loss = static_cast<Real>(total / static_cast<double>(B));
    if (!std::isfinite(r.loss)) throw NumericError("softmax_xent: non-finite loss");
    return r;
}

template Tensor<float> softmax(const Tensor<float>&);
template Tensor<double> softmax(const Tensor<double>&);
template LossResult<float> softmax_xent(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_xent(const Tensor<double>&, std::span<const int>);

}  // namespace nws
