#pragma once

#include "nws/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nws {

enum class OptimizerKind { adam, rmsprop, momentum };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConstants {
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-10;
    double momentum = 0.95;
};

// Slot tensors are created on the first step and must keep mirroring the
// parameter shapes afterwards.
template <typename Real>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    OptimizerConstants constants;
    std::vector<Tensor<Real>> first;   // adam m, rmsprop mean square, momentum velocity
    std::vector<Tensor<Real>> second;  // adam v
    std::uint64_t step = 0;

    explicit OptimizerState(OptimizerKind k = OptimizerKind::adam) : kind(k) {}
};

template <typename Real>
void optimizer_step(OptimizerState<Real>& opt, std::span<Tensor<Real>* const> params,
                    std::span<const Tensor<Real>* const> grads, double lr);

}  // namespace nws
