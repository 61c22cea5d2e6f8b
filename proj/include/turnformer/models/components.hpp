#pragma once

#include <optional>
#include <string>
#include <vector>

#include "turnformer/models/batch.hpp"
#include "turnformer/models/spec.hpp"
#include "turnformer/nn/positional.hpp"
#include "turnformer/nn/transformer.hpp"

namespace turnformer {

/// [B, L, classes] one-hot of each sample's prior label, repeated over L.
template <typename T>
Tensor<T> prior_one_hot(std::span<const int> prior, std::size_t length, std::size_t n_classes) {
    std::vector<T> v(prior.size() * length * n_classes, T(0));
    for (std::size_t b = 0; b < prior.size(); ++b) {
        if (prior[b] < 0 || static_cast<std::size_t>(prior[b]) >= n_classes)
            throw ContractError("prior label " + std::to_string(prior[b]) + " outside [0," +
                                std::to_string(n_classes) + ")");
        for (std::size_t l = 0; l < length; ++l) v[(b * length + l) * n_classes + prior[b]] = T(1);
    }
    return Tensor<T>::from({prior.size(), length, n_classes}, std::move(v));
}

/// Linear token embedding followed by the sinusoidal position table. With a
/// prior, the one-hot current-speaker vector is appended to every token first.
template <typename T>
struct ModalityEmbedding {
    nn::Linear<T> proj;
    std::size_t raw_dim = 0;
    std::size_t n_classes = 0;
    bool use_prior = false;

    ModalityEmbedding(ParameterStore<T>& store, const std::string& name, std::size_t raw, std::size_t d_model,
                      std::size_t classes, bool prior, Rng& rng)
        : proj(store, name, raw + (prior ? classes : 0), d_model, rng),
          raw_dim(raw),
          n_classes(classes),
          use_prior(prior) {}

    std::size_t input_width() const { return proj.in_features(); }

    Tensor<T> forward(const Tensor<T>& tokens, std::span<const int> prior, const nn::ForwardContext& ctx) const {
        if (tokens.rank() != 3 || tokens.dim(2) != raw_dim)
            throw DimensionError("embed_modality: expected [B, L, " + std::to_string(raw_dim) + "], got " +
                                 shape_str(tokens.shape()));
        auto x = tokens;
        if (use_prior) {
            if (prior.size() != tokens.dim(0))
                throw ContractError("embed_modality: " + std::to_string(prior.size()) + " prior labels for batch " +
                                    std::to_string(tokens.dim(0)));
            x = concat_last<T>({tokens, prior_one_hot<T>(prior, tokens.dim(1), n_classes)});
        }
        auto h = add(proj(x), nn::positional_encoding<T>(tokens.dim(1), proj.out_features()));
        return nn::maybe_dropout(h, ctx);
    }
};

/// Encoder over the embedded past; decoder over a learned query sequence of
/// length l_out cross-attending to the encoder memory.
template <typename T>
struct UnimodalTransformer {
    ModalityEmbedding<T> embed;
    nn::Encoder<T> encoder;
    nn::Decoder<T> decoder;
    Tensor<T> queries;  // [l_out, d_model]

    UnimodalTransformer(ParameterStore<T>& store, const std::string& name, std::size_t raw, const ThreeMConfig& cfg,
                        Rng& rng)
        : embed(store, name + ".embed", raw, cfg.dims.d_model, cfg.n_classes, cfg.use_prior, rng),
          encoder(store, name + ".encoder", cfg.dims, rng),
          decoder(store, name + ".decoder", cfg.dims, rng),
          queries(store.add_glorot(name + ".queries", cfg.l_out, cfg.dims.d_model, rng)) {}

    Tensor<T> forward(const Tensor<T>& tokens, std::span<const int> prior, const nn::ForwardContext& ctx) const {
        auto memory = encoder.forward(embed.forward(tokens, prior, ctx), ctx);
        return decoder.forward(expand_batch(queries, tokens.dim(0)), memory, ctx);
    }
};

/// Stage-2 unit: queries from one modality, keys/values from another.
template <typename T>
struct HybridStream {
    StreamSpec spec;
    std::optional<nn::Encoder<T>> encoder;
    std::optional<nn::Decoder<T>> decoder;
    std::optional<nn::CrossStack<T>> cross;

    HybridStream(ParameterStore<T>& store, const std::string& name, StreamSpec s, const ThreeMConfig& cfg, Rng& rng)
        : spec(s) {
        if (cfg.stage2_decoder) {
            encoder.emplace(store, name + ".encoder", cfg.dims, rng);
            decoder.emplace(store, name + ".decoder", cfg.dims, rng);
        } else {
            cross.emplace(store, name + ".cross", cfg.dims, rng);
        }
    }

    Tensor<T> forward(const Tensor<T>& z_q, const Tensor<T>& z_kv, const nn::ForwardContext& ctx) const {
        if (z_q.shape() != z_kv.shape())
            throw DimensionError("hybrid_stream_forward: query " + shape_str(z_q.shape()) + " vs key/value " +
                                 shape_str(z_kv.shape()));
        if (cross) return cross->forward(z_q, z_kv, ctx);
        return decoder->forward(z_q, encoder->forward(z_kv, ctx), ctx);
    }
};

template <typename T>
Tensor<T> average(std::span<const Tensor<T>> xs) {
    if (xs.empty()) throw DimensionError("average: no inputs");
    auto acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i].shape() != xs[0].shape())
            throw DimensionError("fuse: mixed shapes " + shape_str(xs[0].shape()) + " and " + shape_str(xs[i].shape()));
        acc = add(acc, xs[i]);
    }
    return xs.size() == 1 ? acc : scale(acc, T(1) / T(xs.size()));
}

/// Combines stream outputs: element-wise mean, or feature-axis concatenation
/// mapped back to d_model. A single stream passes through unchanged.
template <typename T>
struct Fuser {
    Fusion mode = Fusion::kSoftAverage;
    std::optional<nn::Linear<T>> concat_proj;

    Fuser(ParameterStore<T>& store, const std::string& name, Fusion m, std::size_t n_streams, std::size_t d_model,
          Rng& rng)
        : mode(m) {
        if (mode == Fusion::kConcat && n_streams > 1) concat_proj.emplace(store, name, n_streams * d_model, d_model, rng);
    }

    Tensor<T> forward(std::span<const Tensor<T>> streams) const {
        if (streams.empty()) throw DimensionError("fuse: at least one stream is required");
        for (const auto& s : streams)
            if (s.shape() != streams[0].shape())
                throw DimensionError("fuse: mixed shapes " + shape_str(streams[0].shape()) + " and " +
                                     shape_str(s.shape()));
        if (streams.size() == 1) return streams[0];
        if (mode == Fusion::kSoftAverage) return average(streams);
        if (!concat_proj || concat_proj->in_features() != streams.size() * streams[0].shape().back())
            throw DimensionError("fuse: concat projection was built for a different stream count");
        return (*concat_proj)(concat_last(streams));
    }
};

/// Mean-pools the sequence axis, then maps to class logits: [B, L, d] -> [B, C].
template <typename T>
struct ClassifierHead {
    nn::Linear<T> proj;

    ClassifierHead(ParameterStore<T>& store, const std::string& name, std::size_t d_model, std::size_t classes, Rng& rng)
        : proj(store, name, d_model, classes, rng) {}

    Tensor<T> logits(const Tensor<T>& fused) const {
        if (fused.rank() != 3 || fused.dim(2) != proj.in_features())
            throw DimensionError("classify: expected [B, L, " + std::to_string(proj.in_features()) + "], got " +
                                 shape_str(fused.shape()));
        return proj(reshape(chunk_mean(fused, 1), {fused.dim(0), fused.dim(2)}));
    }
};

} // namespace turnformer
