#pragma once

#include <cmath>
#include <string>

#include "turnformer/nn/layers.hpp"

namespace turnformer::nn {

/// softmax(Q Kᵀ / sqrt(d_k)) V, on [L, d] matrices or batched [B, L, d].
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    const auto r = q.rank();
    if ((r != 2 && r != 3) || k.rank() != r || v.rank() != r)
        throw DimensionError("scaled_dot_attention: ranks of Q " + shape_str(q.shape()) + ", K " +
                             shape_str(k.shape()) + ", V " + shape_str(v.shape()) + " must all be 2 or 3");
    const auto& qs = q.shape();
    const auto& ks = k.shape();
    const auto& vs = v.shape();
    if (qs.back() != ks.back())
        throw DimensionError("scaled_dot_attention: Q width " + shape_str(qs) + " differs from K width " + shape_str(ks));
    if (ks[r - 2] != vs[r - 2])
        throw DimensionError("scaled_dot_attention: K " + shape_str(ks) + " and V " + shape_str(vs) +
                             " differ in length");
    if (r == 3 && (qs[0] != ks[0] || ks[0] != vs[0]))
        throw DimensionError("scaled_dot_attention: batch extents differ");
    const T inv_sqrt = T(1) / std::sqrt(T(qs.back()));
    auto weights = softmax_rows(scale(matmul_transposed(q, k), inv_sqrt));
    return matmul(weights, v);
}

template <typename T>
struct MultiHeadAttention {
    Linear<T> w_q, w_k, w_v, w_o;
    std::size_t n_heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t d_model, std::size_t heads,
                       Rng& rng)
        : w_q(store, name + ".q", d_model, d_model, rng),
          w_k(store, name + ".k", d_model, d_model, rng),
          w_v(store, name + ".v", d_model, d_model, rng),
          w_o(store, name + ".o", d_model, d_model, rng),
          n_heads(heads) {
        if (heads == 0 || d_model % heads != 0)
            throw ConfigError("multi-head attention: d_model " + std::to_string(d_model) +
                              " not divisible by heads " + std::to_string(heads));
    }

    std::size_t d_model() const { return w_q.in_features(); }

    /// x_q: [B, L_q, d], x_kv: [B, L_k, d] -> [B, L_q, d]
    Tensor<T> operator()(const Tensor<T>& x_q, const Tensor<T>& x_kv) const {
        if (x_q.rank() != 3 || x_kv.rank() != 3 || x_q.dim(2) != d_model() || x_kv.dim(2) != d_model() ||
            x_q.dim(0) != x_kv.dim(0))
            throw DimensionError("multi_head_attention: inputs " + shape_str(x_q.shape()) + " and " +
                                 shape_str(x_kv.shape()) + " do not match width " + std::to_string(d_model()));
        auto q = split_heads(w_q(x_q), n_heads);
        auto k = split_heads(w_k(x_kv), n_heads);
        auto v = split_heads(w_v(x_kv), n_heads);
        return w_o(merge_heads(scaled_dot_attention(q, k, v), n_heads));
    }
};

} // namespace turnformer::nn
