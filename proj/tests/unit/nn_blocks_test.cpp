#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "turnformer/numerics/gradcheck.hpp"
#include "turnformer/nn/positional.hpp"
#include "turnformer/nn/transformer.hpp"
#include "reference.hpp"

using namespace turnformer;
using namespace turnformer::nn;

using namespace ref;

namespace {

ModelDims tiny() { return {8, 2, 16, 1, 0.1}; }

} // namespace

TEST(ScaledDotAttention, SingleKeyReturnsValueRow) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        auto q = random_tensor<double>({3, 4}, rng, -5, 5);
        auto k = random_tensor<double>({1, 4}, rng);
        auto v = random_tensor<double>({1, 6}, rng);
        auto out = scaled_dot_attention(q, k, v);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out[i * 6 + j], v[j]);
    }
}

TEST(ScaledDotAttention, IdenticalKeysAverageValues) {
    auto q = Tensor<double>::from({1, 2}, {0.3, -0.7});
    auto k = Tensor<double>::from({2, 2}, {1.0, 2.0, 1.0, 2.0});
    auto v = Tensor<double>::from({2, 3}, {1, 2, 3, 5, 6, 7});
    auto out = scaled_dot_attention(q, k, v).to_vector();
    EXPECT_NEAR(out[0], 3.0, 1e-12);
    EXPECT_NEAR(out[1], 4.0, 1e-12);
    EXPECT_NEAR(out[2], 5.0, 1e-12);
}

TEST(ScaledDotAttention, MatchesFormulaTranscription) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        auto q = random_tensor<double>({3, 4}, rng);
        auto k = random_tensor<double>({3, 4}, rng);
        auto v = random_tensor<double>({3, 4}, rng);
        expect_close(ref_attention(to_mat(q), to_mat(k), to_mat(v)), scaled_dot_attention(q, k, v), 0, 1e-6);
    }
}

TEST(ScaledDotAttention, OutputStaysWithinValueColumnRange) {
    std::mt19937_64 rng(3);
    auto q = random_tensor<double>({5, 4}, rng, -3, 3);
    auto k = random_tensor<double>({6, 4}, rng, -3, 3);
    auto v = random_tensor<double>({6, 2}, rng, -3, 3);
    auto out = scaled_dot_attention(q, k, v);
    for (std::size_t j = 0; j < 2; ++j) {
        double lo = 1e9, hi = -1e9;
        for (std::size_t r = 0; r < 6; ++r) lo = std::min(lo, v[r * 2 + j]), hi = std::max(hi, v[r * 2 + j]);
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_GE(out[i * 2 + j], lo - 1e-12);
            EXPECT_LE(out[i * 2 + j], hi + 1e-12);
        }
    }
}

TEST(ScaledDotAttention, PermutingKeyValuePairsLeavesOutputUnchanged) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        auto q = random_tensor<double>({3, 4}, rng);
        auto k = random_tensor<double>({5, 4}, rng);
        auto v = random_tensor<double>({5, 3}, rng);
        std::vector<std::size_t> perm(5);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> kp(20), vp(15);
        for (std::size_t r = 0; r < 5; ++r) {
            for (std::size_t j = 0; j < 4; ++j) kp[r * 4 + j] = k[perm[r] * 4 + j];
            for (std::size_t j = 0; j < 3; ++j) vp[r * 3 + j] = v[perm[r] * 3 + j];
        }
        auto a = scaled_dot_attention(q, k, v).to_vector();
        auto b = scaled_dot_attention(q, Tensor<double>::from({5, 4}, kp), Tensor<double>::from({5, 3}, vp)).to_vector();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
    }
}

TEST(ScaledDotAttention, MismatchedExtentsAreRejected) {
    auto q = Tensor<double>::zeros({2, 3});
    EXPECT_THROW(scaled_dot_attention(q, Tensor<double>::zeros({4, 2}), Tensor<double>::zeros({4, 2})),
                 DimensionError);
    EXPECT_THROW(scaled_dot_attention(q, Tensor<double>::zeros({4, 3}), Tensor<double>::zeros({5, 2})),
                 DimensionError);
}

TEST(MultiHeadAttention, SingleHeadEqualsComposedOps) {
    ParameterStore<double> ps;
    Rng rng(5);
    MultiHeadAttention<double> mha(ps, "mha", 6, 1, rng);
    std::mt19937_64 gen(6);
    auto xq = random_tensor<double>({1, 4, 6}, gen);
    auto xkv = random_tensor<double>({1, 7, 6}, gen);
    auto composed = mha.w_o(scaled_dot_attention(mha.w_q(xq), mha.w_k(xkv), mha.w_v(xkv)));
    auto got = mha(xq, xkv);
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], composed[i], 1e-12);
}

TEST(MultiHeadAttention, ZeroOutputProjectionGivesZeros) {
    ParameterStore<double> ps;
    Rng rng(7);
    MultiHeadAttention<double> mha(ps, "mha", 8, 2, rng);
    std::fill(mha.w_o.weight.mutable_data().begin(), mha.w_o.weight.mutable_data().end(), 0.0);
    std::mt19937_64 gen(8);
    auto out = mha(random_tensor<double>({2, 3, 8}, gen), random_tensor<double>({2, 4, 8}, gen));
    for (auto v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(MultiHeadAttention, OutputShapeFollowsQueryLength) {
    ParameterStore<double> ps;
    Rng rng(9);
    MultiHeadAttention<double> mha(ps, "mha", 8, 2, rng);
    auto out = mha(Tensor<double>::zeros({1, 5, 8}), Tensor<double>::zeros({1, 9, 8}));
    EXPECT_EQ(out.shape(), (Shape{1, 5, 8}));
    EXPECT_THROW(mha(Tensor<double>::zeros({1, 5, 7}), Tensor<double>::zeros({1, 9, 8})), DimensionError);
}

TEST(MultiHeadAttention, MatchesReferenceWithSeveralHeads) {
    ParameterStore<double> ps;
    Rng rng(10);
    MultiHeadAttention<double> mha(ps, "mha", 8, 4, rng);
    std::mt19937_64 gen(11);
    auto xq = random_tensor<double>({2, 3, 8}, gen);
    auto xkv = random_tensor<double>({2, 5, 8}, gen);
    auto out = mha(xq, xkv);
    for (std::size_t b = 0; b < 2; ++b) expect_close(ref_mha(to_mat(xq, b), to_mat(xkv, b), ps, "mha", 4), out, b, 1e-9);
}

TEST(MultiHeadAttention, IdenticalKeyValueRowsGiveIdenticalOutputRows) {
    ParameterStore<double> ps;
    Rng rng(12);
    MultiHeadAttention<double> mha(ps, "mha", 8, 2, rng);
    std::mt19937_64 gen(13);
    auto row = random_tensor<double>({1, 1, 8}, gen);
    auto kv = expand_batch(reshape(expand_batch(reshape(row, {8}), 6), {6, 8}), 1);
    auto out = mha(random_tensor<double>({1, 4, 8}, gen), kv);
    for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out[i * 8 + j], out[j], 1e-12);
}

TEST(PositionalEncoding, KnownValuesAndRange) {
    auto pe = positional_encoding<double>(50, 16);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(pe[j], j % 2 == 0 ? 0.0 : 1.0);
    EXPECT_NEAR(pe[16], std::sin(1.0), 1e-12);
    EXPECT_NEAR(pe[16], 0.841471, 1e-6);
    for (auto v : pe.data()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(LayerNorm, NormalizesEachToken) {
    ParameterStore<double> ps;
    LayerNorm<double> ln(ps, "ln", 10);
    std::mt19937_64 gen(14);
    auto x = random_tensor<double>({3, 4, 10}, gen, -20, 30);
    auto y = ln(x);
    for (std::size_t r = 0; r < 12; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < 10; ++j) mu += y[r * 10 + j];
        mu /= 10;
        for (std::size_t j = 0; j < 10; ++j) var += (y[r * 10 + j] - mu) * (y[r * 10 + j] - mu);
        var /= 10;
        EXPECT_NEAR(mu, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(Encoder, EvalModeIsDeterministicAndShapePreserving) {
    ParameterStore<float> ps;
    Rng rng(15);
    Encoder<float> enc(ps, "enc", {16, 4, 32, 2, 0.1}, rng);
    std::mt19937_64 gen(16);
    auto x = random_tensor<float>({3, 7, 16}, gen);
    auto a = enc.forward(x, ForwardContext::eval());
    auto b = enc.forward(x, ForwardContext::eval());
    EXPECT_EQ(a.shape(), x.shape());
    EXPECT_EQ(a.to_vector(), b.to_vector());
    EXPECT_THROW(enc.forward(random_tensor<float>({3, 7, 15}, gen), ForwardContext::eval()), DimensionError);
}

TEST(Encoder, DropoutOnlyActsInTraining) {
    ParameterStore<float> ps;
    Rng rng(17);
    Encoder<float> enc(ps, "enc", {16, 4, 32, 1, 0.5}, rng);
    std::mt19937_64 gen(18);
    auto x = random_tensor<float>({2, 5, 16}, gen);
    Rng drop(1);
    auto train = enc.forward(x, ForwardContext::train(0.5, drop));
    auto eval = enc.forward(x, ForwardContext::eval());
    EXPECT_NE(train.to_vector(), eval.to_vector());
}

TEST(Encoder, MatchesScriptedForward) {
    ParameterStore<double> ps;
    Rng rng(19);
    Encoder<double> enc(ps, "enc", tiny(), rng);
    std::mt19937_64 gen(20);
    auto x = random_tensor<double>({2, 5, 8}, gen);
    auto out = enc.forward(x, ForwardContext::eval());
    for (std::size_t b = 0; b < 2; ++b) expect_close(ref_encoder(to_mat(x, b), ps, "enc", 1, 2), out, b, 1e-6);
}

TEST(Decoder, MatchesScriptedForward) {
    ParameterStore<double> ps;
    Rng rng(21);
    Decoder<double> dec(ps, "dec", {8, 2, 16, 2, 0.1}, rng);
    std::mt19937_64 gen(22);
    auto tgt = random_tensor<double>({2, 3, 8}, gen);
    auto mem = random_tensor<double>({2, 6, 8}, gen);
    auto out = dec.forward(tgt, mem, ForwardContext::eval());
    EXPECT_EQ(out.shape(), tgt.shape());
    for (std::size_t b = 0; b < 2; ++b)
        expect_close(ref_decoder(to_mat(tgt, b), to_mat(mem, b), ps, "dec", 2, 2), out, b, 1e-6);
}

TEST(ParameterCount, EncoderLayerAtPublishedDims) {
    // Enumerate: four d×d maps with bias, two FFN maps with bias, two norms.
    const std::size_t d = 512, ff = 2048;
    const std::size_t mha = 4 * (d * d + d);
    const std::size_t ffn = d * ff + ff + ff * d + d;
    const std::size_t norms = 2 * 2 * d;
    EXPECT_EQ(mha, 1050624u);
    EXPECT_EQ(ffn, 2099712u);
    EXPECT_EQ(mha + ffn + norms, 3152384u);

    ParameterStore<float> ps;
    Rng rng(23);
    EncoderLayer<float> layer(ps, "enc", full_dims(), rng);
    EXPECT_EQ(ps.count(), 3152384u);
}

TEST(GradCheck, BlocksMatchFiniteDifferences) {
    auto params_of = [](ParameterStore<double>& ps) { return ps.entries(); };
    std::mt19937_64 gen(24);
    {
        ParameterStore<double> ps;
        Rng rng(25);
        MultiHeadAttention<double> mha(ps, "mha", 8, 2, rng);
        auto xq = random_tensor<double>({2, 3, 8}, gen, -1, 1, true);
        auto xkv = random_tensor<double>({2, 4, 8}, gen, -1, 1, true);
        auto w = random_tensor<double>({2, 3, 8}, gen);
        auto in = params_of(ps);
        in.push_back({"xq", xq});
        in.push_back({"xkv", xkv});
        auto r = check_gradients("mha", in, [&] { return probe(mha(xq, xkv), w); });
        EXPECT_TRUE(r.passed) << r.max_rel_error << " " << r.worst_location;
    }
    {
        ParameterStore<double> ps;
        Rng rng(26);
        Encoder<double> enc(ps, "enc", tiny(), rng);
        auto x = random_tensor<double>({2, 4, 8}, gen, -1, 1, true);
        auto w = random_tensor<double>({2, 4, 8}, gen);
        auto in = params_of(ps);
        in.push_back({"x", x});
        auto r = check_gradients("encoder", in, [&] { return probe(enc.forward(x, ForwardContext::eval()), w); });
        EXPECT_TRUE(r.passed) << r.max_rel_error << " " << r.worst_location;
    }
    {
        ParameterStore<double> ps;
        Rng rng(27);
        Decoder<double> dec(ps, "dec", tiny(), rng);
        auto t = random_tensor<double>({2, 3, 8}, gen, -1, 1, true);
        auto m = random_tensor<double>({2, 5, 8}, gen, -1, 1, true);
        auto w = random_tensor<double>({2, 3, 8}, gen);
        auto in = params_of(ps);
        in.push_back({"tgt", t});
        in.push_back({"mem", m});
        auto r = check_gradients("decoder", in, [&] { return probe(dec.forward(t, m, ForwardContext::eval()), w); });
        EXPECT_TRUE(r.passed) << r.max_rel_error << " " << r.worst_location;
    }
    {
        ParameterStore<double> ps;
        Rng rng(28);
        CrossStack<double> cs(ps, "cross", tiny(), rng);
        auto q = random_tensor<double>({2, 3, 8}, gen, -1, 1, true);
        auto kv = random_tensor<double>({2, 3, 8}, gen, -1, 1, true);
        auto w = random_tensor<double>({2, 3, 8}, gen);
        auto in = params_of(ps);
        in.push_back({"q", q});
        in.push_back({"kv", kv});
        auto r = check_gradients("cross", in, [&] { return probe(cs.forward(q, kv, ForwardContext::eval()), w); });
        EXPECT_TRUE(r.passed) << r.max_rel_error << " " << r.worst_location;
    }
}
