#pragma once

#include <cstddef>
#include <string>

#include "turnformer/numerics/errors.hpp"
#include "turnformer/numerics/parameters.hpp"

namespace turnformer::nn {

struct ModelDims {
    std::size_t d_model = 512;
    std::size_t n_heads = 8;
    std::size_t d_ff = 2048;
    std::size_t n_layers = 6;
    double dropout = 0.1;

    std::size_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_ff == 0 || n_layers == 0)
            throw ConfigError("model dims: all extents must be >= 1");
        if (d_model % n_heads != 0)
            throw ConfigError("model dims: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                              std::to_string(n_heads));
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model dims: dropout must lie in [0,1)");
    }

    bool operator==(const ModelDims&) const = default;
};

/// Dims used in the published setup.
inline ModelDims full_dims() { return {}; }

/// Desk-scale dims for tests and synthetic experiments.
inline ModelDims tiny_dims(std::size_t d_model = 32, std::size_t heads = 4, std::size_t layers = 2) {
    return {d_model, heads, 2 * d_model, layers, 0.1};
}

enum class Mode { kTrain, kEval };

/// Per-call forward settings. Dropout only fires in training mode with an RNG.
struct ForwardContext {
    Mode mode = Mode::kEval;
    double dropout = 0.0;
    Rng* rng = nullptr;

    bool training() const { return mode == Mode::kTrain; }

    static ForwardContext eval() { return {}; }
    static ForwardContext train(double dropout, Rng& rng) { return {Mode::kTrain, dropout, &rng}; }
};

} // namespace turnformer::nn
