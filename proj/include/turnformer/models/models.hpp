#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "turnformer/models/components.hpp"

namespace turnformer {

/// Common interface of the 3M model and the baselines. Forward passes
/// return row-wise log-probabilities [B, n_classes].
template <typename T>
class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    virtual Tensor<T> log_probs(const Batch<T>& batch, const nn::ForwardContext& ctx) const = 0;

    /// Evaluation-mode class probabilities, one row per sample.
    std::vector<std::vector<T>> predict(const Batch<T>& batch) const {
        auto lp = log_probs(batch, nn::ForwardContext::eval());
        const std::size_t c = lp.dim(1);
        std::vector<std::vector<T>> out(lp.dim(0), std::vector<T>(c));
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) out[i][j] = std::exp(lp[i * c + j]);
        return out;
    }

    const ModelSpec& spec() const { return spec_; }
    ParameterStore<T>& parameters() { return params_; }
    const ParameterStore<T>& parameters() const { return params_; }

protected:
    void require_inputs(const Batch<T>& batch) const {
        for (auto m : spec_.used_modalities().members()) {
            if (!batch.has(m))
                throw ConfigError("model needs modality " + modality_name(m) + " which the batch does not carry");
            if (batch[m].dim(2) != spec_.raw_dim(m))
                throw DimensionError(modality_name(m) + " tokens have width " + std::to_string(batch[m].dim(2)) +
                                     ", model expects " + std::to_string(spec_.raw_dim(m)));
        }
    }

    ModelSpec spec_;
    ParameterStore<T> params_;
};

/// Two-stage cross-modal transformer over per-modality streams; ThreeMConfig
/// holds the ablation switches.
template <typename T>
class ThreeMModel final : public Model<T> {
public:
    ThreeMModel(ModelSpec spec, Rng& rng) : Model<T>(std::move(spec)) {
        const auto& cfg = this->spec_.config;
        auto& store = this->params_;
        const auto used = this->spec_.used_modalities();
        for (auto m : used.members()) {
            const std::string name = std::string("stage1.") + modality_letter(m);
            if (cfg.include_stage1)
                stage1_[index_of(m)].emplace(store, name, this->spec_.raw_dim(m), cfg, rng);
            else
                raw_embed_[index_of(m)].emplace(store, std::string("embed.") + modality_letter(m),
                                                this->spec_.raw_dim(m), cfg.dims.d_model, cfg.n_classes,
                                                cfg.use_prior, rng);
        }
        if (cfg.include_stage2) {
            for (const auto& s : cfg.streams) streams_.emplace_back(store, "stage2." + s.label(), s, cfg, rng);
            fuser_.emplace(store, "fusion", cfg.fusion, cfg.streams.size(), cfg.dims.d_model, rng);
        }
        head_.emplace(store, "head", cfg.dims.d_model, cfg.n_classes, rng);
    }

    /// Stage-1 sequences (or pooled raw embeddings when stage 1 is ablated),
    /// each [B, l_out, d_model]; absent modalities stay undefined.
    std::array<Tensor<T>, kNumModalities> stage_one(const Batch<T>& batch, const nn::ForwardContext& ctx) const {
        this->require_inputs(batch);
        std::array<Tensor<T>, kNumModalities> z;
        const auto& cfg = this->spec_.config;
        for (auto m : this->spec_.used_modalities().members()) {
            const auto i = index_of(m);
            if (stage1_[i])
                z[i] = stage1_[i]->forward(batch[m], batch.prior, ctx);
            else
                z[i] = chunk_mean(raw_embed_[i]->forward(batch[m], batch.prior, ctx), cfg.l_out);
        }
        return z;
    }

    Tensor<T> fused(const Batch<T>& batch, const nn::ForwardContext& ctx) const {
        auto z = stage_one(batch, ctx);
        std::vector<Tensor<T>> outs;
        if (this->spec_.config.include_stage2) {
            for (const auto& s : streams_) outs.push_back(s.forward(z[index_of(s.spec.query)], z[index_of(s.spec.kv)], ctx));
            return fuser_->forward(outs);
        }
        for (auto m : this->spec_.used_modalities().members()) outs.push_back(z[index_of(m)]);
        return average<T>(outs);
    }

    Tensor<T> log_probs(const Batch<T>& batch, const nn::ForwardContext& ctx) const override {
        return log_softmax_rows(head_->logits(fused(batch, ctx)));
    }

    const std::vector<HybridStream<T>>& streams() const { return streams_; }

private:
    std::array<std::optional<UnimodalTransformer<T>>, kNumModalities> stage1_;
    std::array<std::optional<ModalityEmbedding<T>>, kNumModalities> raw_embed_;
    std::vector<HybridStream<T>> streams_;
    std::optional<Fuser<T>> fuser_;
    std::optional<ClassifierHead<T>> head_;
};

namespace detail {

inline std::string branch_name(const std::vector<Modality>& ms) {
    std::string s = "branch.";
    for (auto m : ms) s += modality_letter(m);
    return s;
}

template <typename T>
Tensor<T> concat_modalities(const Batch<T>& batch, const std::vector<Modality>& ms) {
    std::vector<Tensor<T>> parts;
    for (auto m : ms) parts.push_back(batch[m]);
    return parts.size() == 1 ? parts[0] : concat_last<T>(parts);
}

} // namespace detail

/// Early fusion: per-step concatenation of all modality features into one
/// vanilla encoder-decoder transformer.
template <typename T>
class EftModel final : public Model<T> {
public:
    EftModel(ModelSpec spec, Rng& rng) : Model<T>(std::move(spec)) {
        const auto ms = this->spec_.modalities.members();
        std::size_t width = 0;
        for (auto m : ms) width += this->spec_.raw_dim(m);
        const auto name = detail::branch_name(ms);
        branch_.emplace(this->params_, name, width, this->spec_.config, rng);
        head_.emplace(this->params_, name + ".head", this->spec_.config.dims.d_model, this->spec_.config.n_classes, rng);
    }

    std::size_t input_width() const { return branch_->embed.raw_dim; }

    Tensor<T> log_probs(const Batch<T>& batch, const nn::ForwardContext& ctx) const override {
        this->require_inputs(batch);
        auto x = detail::concat_modalities(batch, this->spec_.modalities.members());
        return log_softmax_rows(head_->logits(branch_->forward(x, batch.prior, ctx)));
    }

private:
    std::optional<UnimodalTransformer<T>> branch_;
    std::optional<ClassifierHead<T>> head_;
};

/// Late fusion: one transformer and classifier per modality; the final
/// distribution is the mean of the per-modality probability vectors.
template <typename T>
class LftModel final : public Model<T> {
public:
    LftModel(ModelSpec spec, Rng& rng) : Model<T>(std::move(spec)) {
        for (auto m : this->spec_.modalities.members()) {
            const auto name = detail::branch_name({m});
            branches_.emplace_back(this->params_, name, this->spec_.raw_dim(m), this->spec_.config, rng);
            heads_.emplace_back(this->params_, name + ".head", this->spec_.config.dims.d_model,
                                this->spec_.config.n_classes, rng);
        }
    }

    Tensor<T> log_probs(const Batch<T>& batch, const nn::ForwardContext& ctx) const override {
        this->require_inputs(batch);
        const auto ms = this->spec_.modalities.members();
        std::vector<Tensor<T>> per_modality;
        for (std::size_t i = 0; i < ms.size(); ++i)
            per_modality.push_back(
                log_softmax_rows(heads_[i].logits(branches_[i].forward(batch[ms[i]], batch.prior, ctx))));
        if (per_modality.size() == 1) return per_modality[0];
        return log_mean_exp<T>(per_modality);
    }

private:
    std::vector<UnimodalTransformer<T>> branches_;
    std::vector<ClassifierHead<T>> heads_;
};

/// Per-modality temporal mean, concatenated, then two ReLU hidden layers.
template <typename T>
class MlpModel final : public Model<T> {
public:
    MlpModel(ModelSpec spec, Rng& rng) : Model<T>(std::move(spec)) {
        const auto& cfg = this->spec_.config;
        std::size_t width = 0;
        for (auto m : this->spec_.modalities.members())
            width += this->spec_.raw_dim(m) + (cfg.use_prior ? cfg.n_classes : 0);
        const auto h = this->spec_.mlp_hidden;
        hidden1_ = nn::Linear<T>(this->params_, "mlp.hidden1", width, h, rng);
        hidden2_ = nn::Linear<T>(this->params_, "mlp.hidden2", h, h, rng);
        out_ = nn::Linear<T>(this->params_, "mlp.out", h, cfg.n_classes, rng);
    }

    std::size_t input_width() const { return hidden1_.in_features(); }

    Tensor<T> log_probs(const Batch<T>& batch, const nn::ForwardContext& ctx) const override {
        this->require_inputs(batch);
        const auto& cfg = this->spec_.config;
        std::vector<Tensor<T>> pooled;
        for (auto m : this->spec_.modalities.members()) {
            auto x = batch[m];
            if (cfg.use_prior) x = concat_last<T>({x, prior_one_hot<T>(batch.prior, x.dim(1), cfg.n_classes)});
            pooled.push_back(reshape(chunk_mean(x, 1), {x.dim(0), x.dim(2)}));
        }
        auto h = pooled.size() == 1 ? pooled[0] : concat_last<T>(pooled);
        h = nn::maybe_dropout(relu(hidden1_(h)), ctx);
        h = nn::maybe_dropout(relu(hidden2_(h)), ctx);
        return log_softmax_rows(out_(h));
    }

private:
    nn::Linear<T> hidden1_, hidden2_, out_;
};

/// Builds a model with parameters drawn from a generator seeded with `seed`.
template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    switch (spec.arch) {
    case Architecture::kThreeM: return std::make_unique<ThreeMModel<T>>(spec, rng);
    case Architecture::kEft: return std::make_unique<EftModel<T>>(spec, rng);
    case Architecture::kLft: return std::make_unique<LftModel<T>>(spec, rng);
    case Architecture::kMlp: return std::make_unique<MlpModel<T>>(spec, rng);
    }
    throw ConfigError("unknown architecture");
}

} // namespace turnformer
