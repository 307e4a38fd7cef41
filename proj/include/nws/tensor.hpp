#pragma once

#include "nws/error.hpp"

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace nws {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

// Dense row-major tensor of rank 1-4. Leading axis is the batch for
// activations; the trailing axis is always channels / features.
template <typename Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(Shape s, Real fill = Real(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
        if (shape_size(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_string(shape));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    bool empty() const { return data.empty(); }

    Real& operator[](std::size_t i) { return data[i]; }
    const Real& operator[](std::size_t i) const { return data[i]; }

    std::span<Real> span() { return data; }
    std::span<const Real> span() const { return data; }

    void fill(Real v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

template <typename Real>
Tensor<Real> zeros_like(const Tensor<Real>& t) {
    return Tensor<Real>(t.shape);
}

}  // namespace nws
