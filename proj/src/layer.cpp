#include "nws/layer.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nws {

std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::string_view to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::fc: return "fc";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::maxpool1d: return "maxpool1d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::dropout: return "dropout";
        case LayerKind::activation: return "activation";
        case LayerKind::reshape: return "reshape";
    }
    return "?";
}

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::elu: return "elu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
    for (auto k : {LayerKind::conv2d, LayerKind::conv1d, LayerKind::fc, LayerKind::maxpool2d, LayerKind::maxpool1d,
                   LayerKind::batchnorm, LayerKind::dropout, LayerKind::activation, LayerKind::reshape})
        if (to_string(k) == s) return k;
    throw FormatError(fmt::format("unknown layer kind '{}'", s));
}

Activation parse_activation(std::string_view s) {
    for (auto a : {Activation::relu, Activation::elu, Activation::sigmoid, Activation::tanh})
        if (to_string(a) == s) return a;
    throw FormatError(fmt::format("unknown activation '{}'", s));
}

template <typename Real>
LayerState<Real> make_layer(LayerKind kind, const LayerHyper& hyper) {
    LayerState<Real> l;
    l.kind = kind;
    l.hyper = hyper;
    const auto in = hyper.in_channels;
    const auto out = hyper.out_channels;
    const auto k = hyper.kernel;
    switch (kind) {
        case LayerKind::conv2d:
            l.mult = Tensor<Real>({out, k, k, in});
            l.bias = Tensor<Real>({out});
            break;
        case LayerKind::conv1d:
            l.mult = Tensor<Real>({out, k, in});
            l.bias = Tensor<Real>({out});
            break;
        case LayerKind::fc:
            l.mult = Tensor<Real>({in, out});
            l.bias = Tensor<Real>({out});
            break;
        case LayerKind::batchnorm:
            l.bn_beta = Tensor<Real>({in}, Real(0));
            l.bn_gamma = Tensor<Real>({in}, Real(1));
            l.bn_mean = Tensor<Real>({in}, Real(0));
            l.bn_var = Tensor<Real>({in}, Real(1));
            break;
        default:
            break;
    }
    return l;
}

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;

// Column sums of a row-major matrix, accumulated row by row. Eigen's
// colwise reduction vectorizes differently depending on buffer alignment,
// which breaks run-to-run reproducibility.
template <typename Real>
void column_sums(const Real* m, std::size_t rows, std::size_t cols, Real* out) {
    std::fill(out, out + cols, Real(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

void require(bool ok, LayerKind kind, const Shape& got, std::string_view what) {
    if (!ok)
        throw ShapeError(fmt::format("{}: input shape {} invalid ({})", to_string(kind), shape_string(got), what));
}

// Geometry of a 2D view (B, H, W, C) shared by conv and pooling kernels.
struct Grid {
    std::size_t batch, height, width, channels;
};

Grid grid_of(const Shape& s) {
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    return {s[0], 1, s[1], s[2]};  // rank 3: (B, L, C)
}

template <typename Real>
void im2col(const Real* in, const Grid& g, std::size_t kh, std::size_t kw, Real* cols) {
    const auto ph = static_cast<std::ptrdiff_t>((kh - 1) / 2);
    const auto pw = static_cast<std::ptrdiff_t>((kw - 1) / 2);
    const std::size_t C = g.channels;
    const std::size_t K = kh * kw * C;
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    std::size_t row = 0;
    for (std::size_t b = 0; b < g.batch; ++b) {
        const Real* img = in + b * g.height * g.width * C;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t x = 0; x < W; ++x, ++row) {
                Real* dst = cols + row * K;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(dy) - ph;
                    for (std::size_t dx = 0; dx < kw; ++dx, dst += C) {
                        const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(dx) - pw;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                            std::fill(dst, dst + C, Real(0));
                        } else {
                            const Real* src = img + (static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)) * C;
                            std::copy(src, src + C, dst);
                        }
                    }
                }
            }
        }
    }
}

template <typename Real>
void col2im(const Real* cols, const Grid& g, std::size_t kh, std::size_t kw, Real* out) {
    const auto ph = static_cast<std::ptrdiff_t>((kh - 1) / 2);
    const auto pw = static_cast<std::ptrdiff_t>((kw - 1) / 2);
    const std::size_t C = g.channels;
    const std::size_t K = kh * kw * C;
    const auto H = static_cast<std::ptrdiff_t>(g.height);
    const auto W = static_cast<std::ptrdiff_t>(g.width);
    std::fill(out, out + g.batch * g.height * g.width * C, Real(0));
    std::size_t row = 0;
    for (std::size_t b = 0; b < g.batch; ++b) {
        Real* img = out + b * g.height * g.width * C;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t x = 0; x < W; ++x, ++row) {
                const Real* src = cols + row * K;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(dy) - ph;
                    for (std::size_t dx = 0; dx < kw; ++dx, src += C) {
                        const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(dx) - pw;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                        Real* dst = img + (static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)) * C;
                        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

template <typename Real>
Tensor<Real> conv_forward(const LayerState<Real>& l, const Tensor<Real>& x, LayerCache<Real>* cache) {
    const bool two_d = l.kind == LayerKind::conv2d;
    require(x.rank() == (two_d ? 4u : 3u), l.kind, x.shape, "rank");
    require(x.shape.back() == l.hyper.in_channels, l.kind, x.shape, "channel count");
    const Grid g = grid_of(x.shape);
    const std::size_t kh = two_d ? l.hyper.kernel : 1;
    const std::size_t kw = l.hyper.kernel;
    const std::size_t rows = g.batch * g.height * g.width;
    const std::size_t K = kh * kw * g.channels;
    const std::size_t out_c = l.hyper.out_channels;

    std::vector<Real> cols(rows * K);
    im2col(x.data.data(), g, kh, kw, cols.data());

    Shape out_shape = x.shape;
    out_shape.back() = out_c;
    Tensor<Real> y(out_shape);
    ConstMapMat<Real> C(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K));
    ConstMapMat<Real> W(l.mult.data.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(K));
    MapMat<Real> Y(y.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_c));
    Y.noalias() = C * W.transpose();
    Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b(l.bias.data.data(), static_cast<Eigen::Index>(out_c));
    Y.rowwise() += b;
    if (cache) cache->cols = std::move(cols);
    return y;
}

template <typename Real>
Tensor<Real> conv_backward(const LayerState<Real>& l, const LayerCache<Real>& cache, const Tensor<Real>& dy,
                           LayerGrads<Real>& grads) {
    const bool two_d = l.kind == LayerKind::conv2d;
    const Grid g = grid_of(cache.input_shape);
    const std::size_t kh = two_d ? l.hyper.kernel : 1;
    const std::size_t kw = l.hyper.kernel;
    const auto rows = static_cast<Eigen::Index>(g.batch * g.height * g.width);
    const auto K = static_cast<Eigen::Index>(kh * kw * g.channels);
    const auto out_c = static_cast<Eigen::Index>(l.hyper.out_channels);

    ConstMapMat<Real> C(cache.cols.data(), rows, K);
    ConstMapMat<Real> W(l.mult.data.data(), out_c, K);
    ConstMapMat<Real> dY(dy.data.data(), rows, out_c);
    grads.mult = Tensor<Real>(l.mult.shape);
    grads.bias = Tensor<Real>(l.bias.shape);
    MapMat<Real> dW(grads.mult.data.data(), out_c, K);
    dW.noalias() = dY.transpose() * C;
    column_sums(dy.data.data(), static_cast<std::size_t>(rows), static_cast<std::size_t>(out_c), grads.bias.data.data());

    RowMat<Real> dcols = dY * W;
    Tensor<Real> dx(cache.input_shape);
    col2im(dcols.data(), g, kh, kw, dx.data.data());
    return dx;
}

template <typename Real>
Tensor<Real> fc_forward(const LayerState<Real>& l, const Tensor<Real>& x, LayerCache<Real>* cache) {
    require(x.rank() == 2, l.kind, x.shape, "rank");
    require(x.dim(1) == l.hyper.in_channels, l.kind, x.shape, "feature count");
    const auto B = static_cast<Eigen::Index>(x.dim(0));
    const auto in = static_cast<Eigen::Index>(l.hyper.in_channels);
    const auto out = static_cast<Eigen::Index>(l.hyper.out_channels);
    Tensor<Real> y({x.dim(0), l.hyper.out_channels});
    ConstMapMat<Real> X(x.data.data(), B, in);
    ConstMapMat<Real> W(l.mult.data.data(), in, out);
    MapMat<Real> Y(y.data.data(), B, out);
    Y.noalias() = X * W;
    Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> b(l.bias.data.data(), out);
    Y.rowwise() += b;
    if (cache) cache->input = x;
    return y;
}

template <typename Real>
Tensor<Real> fc_backward(const LayerState<Real>& l, const LayerCache<Real>& cache, const Tensor<Real>& dy,
                         LayerGrads<Real>& grads) {
    const auto B = static_cast<Eigen::Index>(cache.input.dim(0));
    const auto in = static_cast<Eigen::Index>(l.hyper.in_channels);
    const auto out = static_cast<Eigen::Index>(l.hyper.out_channels);
    ConstMapMat<Real> X(cache.input.data.data(), B, in);
    ConstMapMat<Real> W(l.mult.data.data(), in, out);
    ConstMapMat<Real> dY(dy.data.data(), B, out);
    grads.mult = Tensor<Real>(l.mult.shape);
    grads.bias = Tensor<Real>(l.bias.shape);
    MapMat<Real>(grads.mult.data.data(), in, out).noalias() = X.transpose() * dY;
    column_sums(dy.data.data(), static_cast<std::size_t>(B), static_cast<std::size_t>(out), grads.bias.data.data());
    Tensor<Real> dx(cache.input.shape);
    MapMat<Real>(dx.data.data(), B, in).noalias() = dY * W.transpose();
    return dx;
}

template <typename Real>
Tensor<Real> pool_forward(const LayerState<Real>& l, const Tensor<Real>& x, LayerCache<Real>* cache) {
    const bool two_d = l.kind == LayerKind::maxpool2d;
    require(x.rank() == (two_d ? 4u : 3u), l.kind, x.shape, "rank");
    const Grid g = grid_of(x.shape);
    const std::size_t ph = two_d ? 2 : 1;
    const std::size_t pw = 2;
    const std::size_t Ho = g.height / ph;
    const std::size_t Wo = g.width / pw;
    require(Ho > 0 && Wo > 0, l.kind, x.shape, "spatial extent below pool window");
    const std::size_t C = g.channels;
    Shape out_shape = two_d ? Shape{g.batch, Ho, Wo, C} : Shape{g.batch, Wo, C};
    Tensor<Real> y(out_shape);
    std::vector<std::size_t> arg(y.size());
    std::size_t o = 0;
    for (std::size_t b = 0; b < g.batch; ++b) {
        const std::size_t base = b * g.height * g.width * C;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                for (std::size_t c = 0; c < C; ++c, ++o) {
                    Real best = -std::numeric_limits<Real>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t dy = 0; dy < ph; ++dy) {
                        for (std::size_t dx = 0; dx < pw; ++dx) {
                            const std::size_t i = base + ((oy * ph + dy) * g.width + ox * pw + dx) * C + c;
                            if (x.data[i] > best) {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    y.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    if (cache) cache->argmax = std::move(arg);
    return y;
}

template <typename Real>
Tensor<Real> pool_backward(const LayerCache<Real>& cache, const Tensor<Real>& dy) {
    Tensor<Real> dx(cache.input_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx.data[cache.argmax[o]] += dy.data[o];
    return dx;
}

template <typename Real>
Tensor<Real> bn_forward(LayerState<Real>& l, const Tensor<Real>& x, Mode mode, LayerCache<Real>* cache) {
    require(x.rank() >= 2, l.kind, x.shape, "rank");
    require(x.shape.back() == l.hyper.in_channels, l.kind, x.shape, "channel count");
    const std::size_t C = l.hyper.in_channels;
    const std::size_t M = x.size() / C;
    const Real eps = static_cast<Real>(l.hyper.bn_epsilon);
    Tensor<Real> y(x.shape);
    if (mode == Mode::infer) {
        for (std::size_t c = 0; c < C; ++c) {
            const Real inv = Real(1) / std::sqrt(l.bn_var.data[c] + eps);
            const Real scale = l.bn_gamma.data[c] * inv;
            const Real shift = l.bn_beta.data[c] - l.bn_mean.data[c] * scale;
            for (std::size_t m = 0; m < M; ++m) y.data[m * C + c] = x.data[m * C + c] * scale + shift;
        }
        return y;
    }
    if (x.dim(0) < 2)
        throw ShapeError(fmt::format("batchnorm: train mode needs batch size >= 2, got {}", x.dim(0)));
    std::vector<Real> mean(C, Real(0)), var(C, Real(0));
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < C; ++c) mean[c] += x.data[m * C + c];
    for (auto& v : mean) v /= static_cast<Real>(M);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < C; ++c) {
            const Real d = x.data[m * C + c] - mean[c];
            var[c] += d * d;
        }
    for (auto& v : var) v /= static_cast<Real>(M);

    std::vector<Real> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) inv_std[c] = Real(1) / std::sqrt(var[c] + eps);
    std::vector<Real> xhat(x.size());
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = m * C + c;
            xhat[i] = (x.data[i] - mean[c]) * inv_std[c];
            y.data[i] = l.bn_gamma.data[c] * xhat[i] + l.bn_beta.data[c];
        }

    const Real mom = static_cast<Real>(l.hyper.bn_momentum);
    const Real unbias = static_cast<Real>(M) / static_cast<Real>(M - 1);
    for (std::size_t c = 0; c < C; ++c) {
        l.bn_mean.data[c] = mom * l.bn_mean.data[c] + (Real(1) - mom) * mean[c];
        l.bn_var.data[c] = mom * l.bn_var.data[c] + (Real(1) - mom) * var[c] * unbias;
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename Real>
Tensor<Real> bn_backward(const LayerState<Real>& l, const LayerCache<Real>& cache, const Tensor<Real>& dy,
                         LayerGrads<Real>& grads) {
    const std::size_t C = l.hyper.in_channels;
    const std::size_t M = dy.size() / C;
    std::vector<Real> sum_dy(C, Real(0)), sum_dy_xhat(C, Real(0));
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = m * C + c;
            sum_dy[c] += dy.data[i];
            sum_dy_xhat[c] += dy.data[i] * cache.xhat[i];
        }
    grads.bn_beta = Tensor<Real>({C}, sum_dy);
    grads.bn_gamma = Tensor<Real>({C}, sum_dy_xhat);
    Tensor<Real> dx(dy.shape);
    const Real inv_m = Real(1) / static_cast<Real>(M);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = m * C + c;
            const Real g = l.bn_gamma.data[c] * cache.inv_std[c];
            dx.data[i] = g * (dy.data[i] - inv_m * sum_dy[c] - cache.xhat[i] * inv_m * sum_dy_xhat[c]);
        }
    return dx;
}

template <typename Real>
Real activate(Activation a, Real v) {
    switch (a) {
        case Activation::relu: return v > Real(0) ? v : Real(0);
        case Activation::elu: return v > Real(0) ? v : std::expm1(v);
        case Activation::sigmoid: return Real(1) / (Real(1) + std::exp(-v));
        case Activation::tanh: return std::tanh(v);
    }
    return v;
}

template <typename Real>
Real activate_grad(Activation a, Real in, Real out) {
    switch (a) {
        case Activation::relu: return in > Real(0) ? Real(1) : Real(0);
        case Activation::elu: return in > Real(0) ? Real(1) : out + Real(1);
        case Activation::sigmoid: return out * (Real(1) - out);
        case Activation::tanh: return Real(1) - out * out;
    }
    return Real(1);
}

}  // namespace

template <typename Real>
Tensor<Real> layer_forward(LayerState<Real>& layer, const std::type_identity_t<Tensor<Real>>& input, Mode mode,
                           Rng& rng, std::type_identity_t<LayerCache<Real>>* cache) {
    if (input.rank() < 1 || input.rank() > 4)
        throw ShapeError(fmt::format("{}: unsupported input rank {}", to_string(layer.kind), input.rank()));
    if (!input.all_finite())
        throw NumericError(fmt::format("{}: non-finite value in input", to_string(layer.kind)));
    if (cache) {
        *cache = LayerCache<Real>{};
        cache->mode = mode;
        cache->input_shape = input.shape;
    }
    Tensor<Real> out;
    switch (layer.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv1d: out = conv_forward(layer, input, cache); break;
        case LayerKind::fc: out = fc_forward(layer, input, cache); break;
        case LayerKind::maxpool2d:
        case LayerKind::maxpool1d: out = pool_forward(layer, input, cache); break;
        case LayerKind::batchnorm: out = bn_forward(layer, input, mode, cache); break;
        case LayerKind::dropout: {
            out = input;
            if (mode == Mode::train) {
                const double keep = layer.hyper.keep_prob;
                const Real scale = static_cast<Real>(1.0 / keep);
                std::vector<Real> mask(input.size());
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    mask[i] = rng.uniform() < keep ? scale : Real(0);
                    out.data[i] *= mask[i];
                }
                if (cache) cache->mask = std::move(mask);
            }
            break;
        }
        case LayerKind::activation: {
            out = Tensor<Real>(input.shape);
            for (std::size_t i = 0; i < input.size(); ++i) out.data[i] = activate(layer.hyper.activation, input.data[i]);
            if (cache) {
                cache->input = input;
                cache->output = out;
            }
            break;
        }
        case LayerKind::reshape: {
            require(input.rank() >= 2, layer.kind, input.shape, "rank");
            out = Tensor<Real>({input.dim(0), input.size() / input.dim(0)}, input.data);
            break;
        }
    }
    if (cache) cache->output_shape = out.shape;
    return out;
}

template <typename Real>
Tensor<Real> layer_backward(const LayerState<Real>& layer, const LayerCache<Real>& cache,
                            const Tensor<Real>& grad_output, LayerGrads<Real>& grads) {
    if (cache.mode != Mode::train)
        throw ShapeError(fmt::format("{}: backward needs a train-mode forward cache", to_string(layer.kind)));
    if (grad_output.shape != cache.output_shape)
        throw ShapeError(fmt::format("{}: grad shape {} does not match forward output {}", to_string(layer.kind),
                                     shape_string(grad_output.shape), shape_string(cache.output_shape)));
    switch (layer.kind) {
        case LayerKind::conv2d:
        case LayerKind::conv1d: return conv_backward(layer, cache, grad_output, grads);
        case LayerKind::fc: return fc_backward(layer, cache, grad_output, grads);
        case LayerKind::maxpool2d:
        case LayerKind::maxpool1d: return pool_backward(cache, grad_output);
        case LayerKind::batchnorm: return bn_backward(layer, cache, grad_output, grads);
        case LayerKind::dropout: {
            Tensor<Real> dx = grad_output;
            for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= cache.mask[i];
            return dx;
        }
        case LayerKind::activation: {
            Tensor<Real> dx(grad_output.shape);
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx.data[i] = grad_output.data[i] *
                             activate_grad(layer.hyper.activation, cache.input.data[i], cache.output.data[i]);
            return dx;
        }
        case LayerKind::reshape: return Tensor<Real>(cache.input_shape, grad_output.data);
    }
    return grad_output;
}

template LayerState<float> make_layer<float>(LayerKind, const LayerHyper&);
template LayerState<double> make_layer<double>(LayerKind, const LayerHyper&);
template Tensor<float> layer_forward(LayerState<float>&, const Tensor<float>&, Mode, Rng&, LayerCache<float>*);
template Tensor<double> layer_forward(LayerState<double>&, const Tensor<double>&, Mode, Rng&, LayerCache<double>*);
template Tensor<float> layer_backward(const LayerState<float>&, const LayerCache<float>&, const Tensor<float>&,
                                      LayerGrads<float>&);
template Tensor<double> layer_backward(const LayerState<double>&, const LayerCache<double>&, const Tensor<double>&,
                                       LayerGrads<double>&);

}  // namespace nws
