#include "nws/init.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nws {

std::string_view to_string(InitScheme s) {
    switch (s) {
        case InitScheme::constant: return "constant";
        case InitScheme::random_normal: return "random_normal";
        case InitScheme::glorot_uniform: return "glorot_uniform";
        case InitScheme::glorot_normal: return "glorot_normal";
    }
    return "?";
}

InitScheme parse_init(std::string_view s) {
    for (auto k : {InitScheme::constant, InitScheme::random_normal, InitScheme::glorot_uniform,
                   InitScheme::glorot_normal})
        if (to_string(k) == s) return k;
    throw FormatError(fmt::format("unknown initialization '{}'", s));
}

std::pair<double, double> fans(LayerKind kind, const LayerHyper& h) {
    double field = 1.0;
    if (kind == LayerKind::conv2d) field = static_cast<double>(h.kernel * h.kernel);
    if (kind == LayerKind::conv1d) field = static_cast<double>(h.kernel);
    return {field * static_cast<double>(h.in_channels), field * static_cast<double>(h.out_channels)};
}

template <typename Real>
void init_params(InitScheme scheme, LayerState<Real>& layer, Rng& rng) {
    if (has_mult(layer.kind)) {
        auto [fan_in, fan_out] = fans(layer.kind, layer.hyper);
        auto& w = layer.mult.data;
        switch (scheme) {
            case InitScheme::constant:
                std::fill(w.begin(), w.end(), static_cast<Real>(0.1));
                break;
            case InitScheme::random_normal:
                for (auto& v : w) v = static_cast<Real>(rng.normal());
                break;
            case InitScheme::glorot_uniform: {
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& v : w) v = static_cast<Real>(rng.uniform(-limit, limit));
                break;
            }
            case InitScheme::glorot_normal: {
                // Truncated at two standard deviations, with the variance
                // correction of the truncated distribution.
                const double stddev = std::sqrt(2.0 / (fan_in + fan_out)) / 0.87962566103423978;
                for (auto& v : w) {
                    double z = 0.0;
                    do {
                        z = rng.normal();
                    } while (std::abs(z) > 2.0);
                    v = static_cast<Real>(z * stddev);
                }
                break;
            }
        }
        layer.bias.fill(Real(0));
    }
    if (layer.kind == LayerKind::batchnorm) {
        layer.bn_beta.fill(Real(0));
        layer.bn_gamma.fill(Real(1));
        layer.bn_mean.fill(Real(0));
        layer.bn_var.fill(Real(1));
    }
}

template void init_params(InitScheme, LayerState<float>&, Rng&);
template void init_params(InitScheme, LayerState<double>&, Rng&);

}  // namespace nws
