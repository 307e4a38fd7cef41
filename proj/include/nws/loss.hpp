#pragma once

#include "nws/tensor.hpp"

#include <span>

namespace nws {

template <typename Real>
struct LossResult {
    Real loss = 0;
    Tensor<Real> grad_logits;
};

// Mean softmax cross-entropy over the batch. Gradient is (softmax - onehot) / batch.
template <typename Real>
LossResult<Real> softmax_xent(const Tensor<Real>& logits, std::span<const int> labels);

// Row-wise softmax of a [batch x classes] tensor.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& logits);

}  // namespace nws
