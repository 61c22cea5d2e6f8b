#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "turnformer/models/models.hpp"
#include "turnformer/models/presets.hpp"
#include "turnformer/nn/transformer.hpp"
#include "turnformer/numerics/gradcheck.hpp"

// Finite-difference checks over every differentiable op, every block and the
// whole models, all in double precision.

namespace turnformer::verify {

enum class SuiteModule { kNumerics, kBlocks, kModels };

inline std::string module_name(SuiteModule m) {
    switch (m) {
        case SuiteModule::kNumerics: return "numerics";
        case SuiteModule::kBlocks: return "blocks";
        case SuiteModule::kModels: return "models";
    }
    return "?";
}

namespace detail {

using Inputs = std::vector<NamedParameter<double>>;

inline Tensor<double> rnd(Shape s, std::mt19937_64& g, bool trainable = true) {
    return random_tensor<double>(std::move(s), g, -1.0, 1.0, trainable);
}

/// Random values for every parameter so that zero biases and unit gains do
/// not hide gradient errors.
inline void perturb(ParameterStore<double>& ps, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> d(-0.5, 0.5);
    auto snap = ps.snapshot();
    for (std::size_t i = 0; i < snap.size(); ++i) {
        const bool gain = ps.entries()[i].name.ends_with(".gamma");
        for (auto& v : snap[i]) v = gain ? 1.0 + d(g) : v + d(g);
    }
    ps.restore(snap);
}

inline Inputs with(const ParameterStore<double>& ps, Inputs extra) {
    Inputs in = ps.entries();
    in.insert(in.end(), extra.begin(), extra.end());
    return in;
}

} // namespace detail

inline std::vector<GradCheckResult> numerics_checks(const GradCheckOptions& opt = {}) {
    using detail::rnd;
    std::mt19937_64 g(101);
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, detail::Inputs in, const std::function<Tensor<double>()>& f) {
        out.push_back(check_gradients(name, std::move(in), f, opt));
    };
    {
        auto a = rnd({2, 3, 4}, g), b = rnd({4, 5}, g), w = rnd({2, 3, 5}, g, false);
        run("matmul", {{"a", a}, {"b", b}}, [=] { return probe(matmul(a, b), w); });
        auto b3 = rnd({2, 4, 5}, g);
        run("matmul_batched", {{"a", a}, {"b", b3}}, [=] { return probe(matmul(a, b3), w); });
    }
    {
        auto a = rnd({2, 3, 4}, g), b = rnd({2, 5, 4}, g), w = rnd({2, 3, 5}, g, false);
        run("matmul_transposed", {{"a", a}, {"b", b}}, [=] { return probe(matmul_transposed(a, b), w); });
    }
    {
        auto x = rnd({2, 3, 4}, g), wt = rnd({4, 5}, g), bias = rnd({5}, g), w = rnd({2, 3, 5}, g, false);
        run("linear", {{"x", x}, {"w", wt}, {"b", bias}}, [=] { return probe(linear(x, wt, bias), w); });
        run("linear_nobias", {{"x", x}, {"w", wt}}, [=] { return probe(linear(x, wt), w); });
    }
    {
        auto a = rnd({2, 3, 4}, g), b = rnd({3, 4}, g), c = rnd({2, 3, 4}, g), w = rnd({2, 3, 4}, g, false);
        run("add_broadcast", {{"a", a}, {"b", b}}, [=] { return probe(add(a, b), w); });
        run("sub", {{"a", a}, {"c", c}}, [=] { return probe(sub(a, c), w); });
        run("mul", {{"a", a}, {"c", c}}, [=] { return probe(mul(a, c), w); });
        run("scale", {{"a", a}}, [=] { return probe(scale(a, -1.7), w); });
        run("relu", {{"a", a}}, [=] { return probe(relu(a), w); });
        run("softmax_rows", {{"a", a}}, [=] { return probe(softmax_rows(a), w); });
        run("log_softmax_rows", {{"a", a}}, [=] { return probe(log_softmax_rows(a), w); });
        run("sum", {{"a", a}}, [=] { return sum(a); });
        run("mean", {{"a", a}}, [=] { return mean(mul(a, a)); });
        run("reshape", {{"a", a}}, [=] { return probe(reshape(a, {6, 4}), reshape(w, {6, 4})); });
    }
    {
        auto x = rnd({2, 3, 6}, g), gm = rnd({6}, g), b = rnd({6}, g), w = rnd({2, 3, 6}, g, false);
        run("layer_norm", {{"x", x}, {"gamma", gm}, {"beta", b}}, [=] { return probe(layer_norm(x, gm, b), w); });
    }
    {
        auto x = rnd({2, 3, 6}, g), w = rnd({6, 3, 2}, g, false), y = rnd({6, 3, 2}, g), w2 = rnd({2, 3, 6}, g, false);
        run("split_heads", {{"x", x}}, [=] { return probe(split_heads(x, 3), w); });
        run("merge_heads", {{"y", y}}, [=] { return probe(merge_heads(y, 3), w2); });
    }
    {
        auto a = rnd({2, 3, 2}, g), b = rnd({2, 3, 4}, g), w = rnd({2, 3, 6}, g, false);
        run("concat_last", {{"a", a}, {"b", b}}, [=] { return probe(concat_last<double>({a, b}), w); });
    }
    {
        auto x = rnd({2, 7, 3}, g), w = rnd({2, 3, 3}, g, false), w9 = rnd({2, 9, 3}, g, false);
        run("chunk_mean", {{"x", x}}, [=] { return probe(chunk_mean(x, 3), w); });
        run("chunk_mean_upsample", {{"x", x}}, [=] { return probe(chunk_mean(x, 9), w9); });
    }
    {
        auto x = rnd({3, 4}, g), w = rnd({2, 3, 4}, g, false);
        run("expand_batch", {{"x", x}}, [=] { return probe(expand_batch(x, 2), w); });
    }
    {
        auto z = rnd({3, 4}, g), a = rnd({3, 4}, g), b = rnd({3, 4}, g);
        std::vector<int> t{0, 3, 1};
        run("cross_entropy", {{"z", z}}, [=] { return cross_entropy(z, t); });
        run("nll_loss", {{"z", z}}, [=] { return nll_loss(log_softmax_rows(z), t); });
        run("log_mean_exp", {{"a", a}, {"b", b}},
            [=] { return nll_loss(log_mean_exp<double>({log_softmax_rows(a), log_softmax_rows(b)}), t); });
    }
    return out;
}

inline std::vector<GradCheckResult> blocks_checks(const GradCheckOptions& opt = {}) {
    using namespace nn;
    using detail::rnd;
    std::mt19937_64 g(202);
    const ModelDims dims{8, 2, 16, 1, 0.0};
    const auto eval = ForwardContext::eval();
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, detail::Inputs in, const std::function<Tensor<double>()>& f) {
        out.push_back(check_gradients(name, std::move(in), f, opt));
    };
    {
        auto q = rnd({4, 3, 5}, g), k = rnd({4, 6, 5}, g), v = rnd({4, 6, 2}, g), w = rnd({4, 3, 2}, g, false);
        run("scaled_dot_attention", {{"q", q}, {"k", k}, {"v", v}},
            [=] { return probe(scaled_dot_attention(q, k, v), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(1);
        Linear<double> lin(ps, "linear", 5, 4, rng);
        detail::perturb(ps, 2);
        auto x = rnd({2, 3, 5}, g), w = rnd({2, 3, 4}, g, false);
        run("Linear", detail::with(ps, {{"x", x}}), [&, x, w] { return probe(lin(x), w); });
    }
    {
        ParameterStore<double> ps;
        LayerNorm<double> ln(ps, "norm", 6);
        detail::perturb(ps, 3);
        auto x = rnd({2, 3, 6}, g), w = rnd({2, 3, 6}, g, false);
        run("LayerNorm", detail::with(ps, {{"x", x}}), [&, x, w] { return probe(ln(x), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(4);
        FeedForward<double> ffn(ps, "ffn", 8, 16, rng);
        detail::perturb(ps, 5);
        auto x = rnd({2, 3, 8}, g), w = rnd({2, 3, 8}, g, false);
        run("FeedForward", detail::with(ps, {{"x", x}}), [&, x, w] { return probe(ffn(x, eval), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(6);
        MultiHeadAttention<double> mha(ps, "mha", 8, 2, rng);
        detail::perturb(ps, 7);
        auto xq = rnd({2, 3, 8}, g), xkv = rnd({2, 4, 8}, g), w = rnd({2, 3, 8}, g, false);
        run("MultiHeadAttention", detail::with(ps, {{"xq", xq}, {"xkv", xkv}}),
            [&, xq, xkv, w] { return probe(mha(xq, xkv), w); });
    }
    {
        auto x = rnd({2, 4, 8}, g), w = rnd({2, 4, 8}, g, false);
        run("positional_add", {{"x", x}}, [=] { return probe(add(x, positional_encoding<double>(4, 8)), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(8);
        EncoderLayer<double> layer(ps, "enc", dims, rng);
        detail::perturb(ps, 9);
        auto x = rnd({2, 4, 8}, g), w = rnd({2, 4, 8}, g, false);
        run("EncoderLayer", detail::with(ps, {{"x", x}}), [&, x, w] { return probe(layer.forward(x, eval), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(10);
        DecoderLayer<double> layer(ps, "dec", dims, rng);
        detail::perturb(ps, 11);
        auto t = rnd({2, 3, 8}, g), m = rnd({2, 5, 8}, g), w = rnd({2, 3, 8}, g, false);
        run("DecoderLayer", detail::with(ps, {{"tgt", t}, {"mem", m}}),
            [&, t, m, w] { return probe(layer.forward(t, m, eval), w); });
    }
    {
        ParameterStore<double> ps;
        Rng rng(12);
        CrossLayer<double> layer(ps, "cross", dims, rng);
        detail::perturb(ps, 13);
        auto q = rnd({2, 3, 8}, g), kv = rnd({2, 4, 8}, g), w = rnd({2, 3, 8}, g, false);
        run("CrossLayer", detail::with(ps, {{"q", q}, {"kv", kv}}),
            [&, q, kv, w] { return probe(layer.forward(q, kv, eval), w); });
    }
    {
        auto two = dims;
        two.n_layers = 2;
        ParameterStore<double> ps;
        Rng rng(14);
        Encoder<double> enc(ps, "encoder", two, rng);
        Decoder<double> dec(ps, "decoder", two, rng);
        CrossStack<double> cs(ps, "cross_stack", two, rng);
        detail::perturb(ps, 15);
        auto x = rnd({2, 4, 8}, g), y = rnd({2, 3, 8}, g), w = rnd({2, 3, 8}, g, false);
        GradCheckOptions sampled = opt;
        if (!sampled.max_coords_per_tensor) sampled.max_coords_per_tensor = 32;
        out.push_back(check_gradients("Encoder+Decoder+CrossStack", detail::with(ps, {{"x", x}, {"y", y}}), [&, x, y, w] {
            auto mem = enc.forward(x, eval);
            return probe(add(dec.forward(y, mem, eval), cs.forward(y, mem, eval)), w);
        }, sampled));
    }
    return out;
}

/// Whole-model checks at d=8, h=2, one layer, L_out=3, for the full 3M model,
/// each structural ablation and the three baselines, with the prior enabled.
inline std::vector<GradCheckResult> models_checks(const GradCheckOptions& opt = {}) {
    std::vector<GradCheckResult> out;
    ModelSpec base;
    base.config.dims = {8, 2, 16, 1, 0.0};
    base.config.l_out = 3;
    base.config.use_prior = true;
    base.raw_dims = {6, 3, 5};
    base.mlp_hidden = 6;
    GradCheckOptions sampled = opt;
    if (!sampled.max_coords_per_tensor) sampled.max_coords_per_tensor = 24;
    std::uint64_t seed = 300;
    for (const auto* name : {"3m:T>V|A>V", "3m-concat:T>V|A>V", "3m-nodec:T>V|A>V", "3m:no-stage1", "3m:no-stage2",
                             "eft", "lft", "mlp"}) {
        auto spec = apply_preset(name, base);
        auto model = make_model<double>(spec, ++seed);
        detail::perturb(model->parameters(), ++seed);
        std::mt19937_64 g(++seed);
        Batch<double> batch;
        for (auto m : kAllModalities)
            batch.tokens[index_of(m)] = detail::rnd({2, 4, spec.raw_dim(m)}, g);
        batch.prior = {1, 3};
        batch.target = {2, 0};
        auto inputs = model->parameters().entries();
        for (auto m : spec.used_modalities().members()) inputs.push_back({modality_name(m), batch[m]});
        out.push_back(check_gradients(std::string("forward ") + name, inputs, [&] {
            return nll_loss(model->log_probs(batch, nn::ForwardContext::eval()), batch.target);
        }, sampled));
    }
    return out;
}

inline std::vector<GradCheckResult> run_suite(SuiteModule m, const GradCheckOptions& opt = {}) {
    switch (m) {
        case SuiteModule::kNumerics: return numerics_checks(opt);
        case SuiteModule::kBlocks: return blocks_checks(opt);
        case SuiteModule::kModels: return models_checks(opt);
    }
    return {};
}

} // namespace turnformer::verify
