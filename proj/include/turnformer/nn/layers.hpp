#pragma once

#include <string>

#include "turnformer/nn/dims.hpp"
#include "turnformer/numerics/ops.hpp"
#include "turnformer/numerics/parameters.hpp"

namespace turnformer::nn {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardContext& ctx) {
    if (!ctx.training() || ctx.dropout == 0.0 || !ctx.rng) return x;
    return dropout(x, ctx.dropout, *ctx.rng);
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(store.add_glorot(name + ".weight", in, out, rng)),
          bias(store.add_constant(name + ".bias", {out}, T(0))) {}

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t width)
        : gamma(store.add_constant(name + ".gamma", {width}, T(1))),
          beta(store.add_constant(name + ".beta", {width}, T(0))) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Position-wise feed-forward: ReLU(x W1 + b1) W2 + b2.
template <typename T>
struct FeedForward {
    Linear<T> up, down;

    FeedForward() = default;
    FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t d_model, std::size_t d_ff, Rng& rng)
        : up(store, name + ".up", d_model, d_ff, rng), down(store, name + ".down", d_ff, d_model, rng) {}

    Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
        return down(maybe_dropout(relu(up(x)), ctx));
    }
};

} // namespace turnformer::nn
