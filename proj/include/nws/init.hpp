#pragma once

#include "nws/layer.hpp"
#include "nws/rng.hpp"

#include <string_view>

namespace nws {

enum class InitScheme { constant, random_normal, glorot_uniform, glorot_normal };

std::string_view to_string(InitScheme s);
InitScheme parse_init(std::string_view s);

// Fills mult per scheme; bias 0, bn gamma 1, beta 0, running mean 0, var 1.
template <typename Real>
void init_params(InitScheme scheme, LayerState<Real>& layer, Rng& rng);

// (fan_in, fan_out) using the receptive-field convention for conv filters.
std::pair<double, double> fans(LayerKind kind, const LayerHyper& hyper);

}  // namespace nws
