#include "nws/optimizer.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nws {

std::string_view to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::momentum: return "momentum";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view s) {
    for (auto k : {OptimizerKind::adam, OptimizerKind::rmsprop, OptimizerKind::momentum})
        if (to_string(k) == s) return k;
    throw FormatError(fmt::format("unknown optimizer '{}'", s));
}

template <typename Real>
void optimizer_step(OptimizerState<Real>& opt, std::span<Tensor<Real>* const> params,
                    std::span<const Tensor<Real>* const> grads, double lr) {
    if (params.size() != grads.size())
        throw ShapeError(fmt::format("optimizer: {} params but {} grads", params.size(), grads.size()));
    if (!(lr > 0)) throw Error("optimizer: learning rate must be positive");
    if (opt.step == 0 && opt.first.empty()) {
        for (auto* p : params) {
            opt.first.emplace_back(p->shape);
            if (opt.kind == OptimizerKind::adam) opt.second.emplace_back(p->shape);
        }
    }
    if (opt.first.size() != params.size())
        throw ShapeError(fmt::format("optimizer: {} slots for {} params", opt.first.size(), params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape != opt.first[i].shape || grads[i]->shape != params[i]->shape)
            throw ShapeError(fmt::format("optimizer: slot/parameter shape mismatch at tensor {}", i));
        if (!grads[i]->all_finite()) throw NumericError(fmt::format("optimizer: non-finite gradient in tensor {}", i));
    }
    ++opt.step;
    const auto& k = opt.constants;
    const Real rate = static_cast<Real>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->data;
        const auto& g = grads[i]->data;
        auto& s1 = opt.first[i].data;
        switch (opt.kind) {
            case OptimizerKind::adam: {
                auto& s2 = opt.second[i].data;
                const Real b1 = static_cast<Real>(k.adam_beta1);
                const Real b2 = static_cast<Real>(k.adam_beta2);
                const Real c1 = Real(1) - static_cast<Real>(std::pow(k.adam_beta1, static_cast<double>(opt.step)));
                const Real c2 = Real(1) - static_cast<Real>(std::pow(k.adam_beta2, static_cast<double>(opt.step)));
                const Real eps = static_cast<Real>(k.adam_epsilon);
                for (std::size_t j = 0; j < p.size(); ++j) {
                    s1[j] = b1 * s1[j] + (Real(1) - b1) * g[j];
                    s2[j] = b2 * s2[j] + (Real(1) - b2) * g[j] * g[j];
                    const Real mhat = s1[j] / c1;
                    const Real vhat = s2[j] / c2;
                    p[j] -= rate * mhat / (std::sqrt(vhat) + eps);
                }
                break;
            }
            case OptimizerKind::rmsprop: {
                const Real d = static_cast<Real>(k.rmsprop_decay);
                const Real eps = static_cast<Real>(k.rmsprop_epsilon);
                for (std::size_t j = 0; j < p.size(); ++j) {
                    s1[j] = d * s1[j] + (Real(1) - d) * g[j] * g[j];
                    p[j] -= rate * g[j] / std::sqrt(s1[j] + eps);
                }
                break;
            }
            case OptimizerKind::momentum: {
                const Real m = static_cast<Real>(k.momentum);
                for (std::size_t j = 0; j < p.size(); ++j) {
                    s1[j] = m * s1[j] + g[j];
                    p[j] -= rate * s1[j];
                }
                break;
            }
        }
    }
}

template void optimizer_step(OptimizerState<float>&, std::span<Tensor<float>* const>,
                             std::span<const Tensor<float>* const>, double);
template void optimizer_step(OptimizerState<double>&, std::span<Tensor<double>* const>,
                             std::span<const Tensor<double>* const>, double);

}  // namespace nws
