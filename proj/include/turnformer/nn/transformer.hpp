#pragma once

#include <string>
#include <vector>

#include "turnformer/nn/attention.hpp"

// Post-norm encoder/decoder stacks: every sublayer is wrapped as
// x = LayerNorm(x + Dropout(sublayer(x))). Attention is unmasked throughout.

namespace turnformer::nn {

template <typename T>
Tensor<T> residual_norm(const Tensor<T>& x, const Tensor<T>& sub, const LayerNorm<T>& norm,
                        const ForwardContext& ctx) {
    return norm(add(x, maybe_dropout(sub, ctx)));
}

template <typename T>
struct EncoderLayer {
    MultiHeadAttention<T> self_attn;
    FeedForward<T> ffn;
    LayerNorm<T> norm1, norm2;

    EncoderLayer(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : self_attn(store, name + ".self_attn", dims.d_model, dims.n_heads, rng),
          ffn(store, name + ".ffn", dims.d_model, dims.d_ff, rng),
          norm1(store, name + ".norm1", dims.d_model),
          norm2(store, name + ".norm2", dims.d_model) {}

    Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) const {
        auto h = residual_norm(x, self_attn(x, x), norm1, ctx);
        return residual_norm(h, ffn(h, ctx), norm2, ctx);
    }
};

template <typename T>
struct DecoderLayer {
    MultiHeadAttention<T> self_attn, cross_attn;
    FeedForward<T> ffn;
    LayerNorm<T> norm1, norm2, norm3;

    DecoderLayer(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : self_attn(store, name + ".self_attn", dims.d_model, dims.n_heads, rng),
          cross_attn(store, name + ".cross_attn", dims.d_model, dims.n_heads, rng),
          ffn(store, name + ".ffn", dims.d_model, dims.d_ff, rng),
          norm1(store, name + ".norm1", dims.d_model),
          norm2(store, name + ".norm2", dims.d_model),
          norm3(store, name + ".norm3", dims.d_model) {}

    Tensor<T> forward(const Tensor<T>& tgt, const Tensor<T>& memory, const ForwardContext& ctx) const {
        auto h = residual_norm(tgt, self_attn(tgt, tgt), norm1, ctx);
        h = residual_norm(h, cross_attn(h, memory), norm2, ctx);
        return residual_norm(h, ffn(h, ctx), norm3, ctx);
    }
};

/// Cross-attention + feed-forward, no self-attention. Used by the hybrid
/// stream variant that drops the decoder.
template <typename T>
struct CrossLayer {
    MultiHeadAttention<T> cross_attn;
    FeedForward<T> ffn;
    LayerNorm<T> norm1, norm2;

    CrossLayer(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : cross_attn(store, name + ".cross_attn", dims.d_model, dims.n_heads, rng),
          ffn(store, name + ".ffn", dims.d_model, dims.d_ff, rng),
          norm1(store, name + ".norm1", dims.d_model),
          norm2(store, name + ".norm2", dims.d_model) {}

    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& kv, const ForwardContext& ctx) const {
        auto h = residual_norm(q, cross_attn(q, kv), norm1, ctx);
        return residual_norm(h, ffn(h, ctx), norm2, ctx);
    }
};

template <typename T>
void check_width(const Tensor<T>& x, std::size_t d_model, const char* who) {
    if (x.rank() != 3 || x.dim(2) != d_model)
        throw DimensionError(std::string(who) + ": expected [B, L, " + std::to_string(d_model) + "], got " +
                             shape_str(x.shape()));
}

template <typename T>
struct Encoder {
    std::vector<EncoderLayer<T>> layers;
    std::size_t d_model = 0;

    Encoder(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : d_model(dims.d_model) {
        for (std::size_t i = 0; i < dims.n_layers; ++i)
            layers.emplace_back(store, name + ".layer" + std::to_string(i), dims, rng);
    }

    Tensor<T> forward(const Tensor<T>& seq, const ForwardContext& ctx) const {
        check_width(seq, d_model, "encoder_forward");
        auto h = seq;
        for (const auto& layer : layers) h = layer.forward(h, ctx);
        return h;
    }
};

template <typename T>
struct Decoder {
    std::vector<DecoderLayer<T>> layers;
    std::size_t d_model = 0;

    Decoder(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : d_model(dims.d_model) {
        for (std::size_t i = 0; i < dims.n_layers; ++i)
            layers.emplace_back(store, name + ".layer" + std::to_string(i), dims, rng);
    }

    Tensor<T> forward(const Tensor<T>& tgt, const Tensor<T>& memory, const ForwardContext& ctx) const {
        check_width(tgt, d_model, "decoder_forward");
        check_width(memory, d_model, "decoder_forward memory");
        auto h = tgt;
        for (const auto& layer : layers) h = layer.forward(h, memory, ctx);
        return h;
    }
};

template <typename T>
struct CrossStack {
    std::vector<CrossLayer<T>> layers;
    std::size_t d_model = 0;

    CrossStack(ParameterStore<T>& store, const std::string& name, const ModelDims& dims, Rng& rng)
        : d_model(dims.d_model) {
        for (std::size_t i = 0; i < dims.n_layers; ++i)
            layers.emplace_back(store, name + ".layer" + std::to_string(i), dims, rng);
    }

    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& kv, const ForwardContext& ctx) const {
        check_width(q, d_model, "cross_stack");
        check_width(kv, d_model, "cross_stack memory");
        auto h = q;
        for (const auto& layer : layers) h = layer.forward(h, kv, ctx);
        return h;
    }
};

} // namespace turnformer::nn
