#pragma once

#include <cmath>

#include "turnformer/numerics/tensor.hpp"

namespace turnformer::nn {

/// Sinusoidal table: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
/// PE(pos, 2i+1) = cos(pos / 10000^(2i/d)).
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model) {
    if (length == 0 || d_model == 0) throw DimensionError("positional_encoding: length and width must be >= 1");
    std::vector<T> v(length * d_model);
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t j = 0; j < d_model; ++j) {
            const double pair = double(j - j % 2);
            const double angle = double(pos) / std::pow(10000.0, pair / double(d_model));
            v[pos * d_model + j] = T(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return Tensor<T>::from({length, d_model}, std::move(v));
}

} // namespace turnformer::nn
