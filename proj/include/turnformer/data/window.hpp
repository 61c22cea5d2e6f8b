#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "turnformer/data/conversation.hpp"
#include "turnformer/models/batch.hpp"

namespace turnformer::data {

/// One (past features -> future speaker) example, held as a view into its
/// conversation. The anchor second t splits past [t - past_s, t) from future.
struct Sample {
    const ConversationStreams* conversation = nullptr;
    std::size_t anchor_s = 0;
    std::size_t past_s = 0;
    std::size_t future_s = 0;
    int prior = 0;
    int target = 0;

    std::size_t first_window() const { return (anchor_s - past_s) * conversation->windows_per_second; }
    std::size_t token_count() const { return past_s * conversation->windows_per_second; }
};

/// Majority label over windows [lo, hi); ties go to the lowest label.
inline int majority_label(std::span<const int> labels, std::size_t lo, std::size_t hi) {
    if (lo >= hi || hi > labels.size()) throw ContractError("majority_label: bad window range");
    const int top = *std::max_element(labels.begin() + lo, labels.begin() + hi);
    std::vector<std::size_t> counts(std::size_t(top) + 1, 0);
    for (std::size_t i = lo; i < hi; ++i) ++counts[std::size_t(labels[i])];
    return int(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

/// One sample per anchor second t with t - past_s >= 0 and t + future_s <=
/// duration. The prior is the label of the last past window; the target is
/// the majority label of the second that ends future_s seconds after t.
inline std::vector<Sample> window_dataset(const ConversationStreams& conv, std::size_t past_s, std::size_t future_s) {
    if (past_s == 0 || future_s == 0) throw ConfigError("past_s and future_s must be >= 1");
    std::vector<Sample> out;
    const std::size_t w = conv.windows_per_second, dur = conv.duration_s();
    for (std::size_t t = past_s; t + future_s <= dur; ++t) {
        Sample s;
        s.conversation = &conv;
        s.anchor_s = t;
        s.past_s = past_s;
        s.future_s = future_s;
        s.prior = conv.labels[t * w - 1];
        const std::size_t target_second = t + future_s - 1;
        s.target = majority_label(conv.labels, target_second * w, (target_second + 1) * w);
        out.push_back(s);
    }
    return out;
}

inline std::vector<Sample> window_dataset(std::span<const ConversationStreams> convs, std::size_t past_s,
                                          std::size_t future_s) {
    std::vector<Sample> out;
    for (const auto& c : convs) {
        auto s = window_dataset(c, past_s, future_s);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

struct BatchOptions {
    ModalitySet modalities = ModalitySet::all();
    /// Average the windows of each past second into one token.
    bool pool_seconds = false;
};

/// Stacks samples (all with the same past length) into a model batch.
template <typename T>
Batch<T> make_batch(std::span<const Sample> samples, const BatchOptions& opt = {}) {
    if (samples.empty()) throw ContractError("make_batch: no samples");
    Batch<T> batch;
    const std::size_t n = samples.size();
    const std::size_t w = samples[0].conversation->windows_per_second;
    const std::size_t windows = samples[0].token_count();
    const std::size_t len = opt.pool_seconds ? samples[0].past_s : windows;
    for (const auto& s : samples) {
        if (s.token_count() != windows) throw ContractError("make_batch: samples have different past lengths");
        batch.prior.push_back(s.prior);
        batch.target.push_back(s.target);
    }
    for (auto m : opt.modalities.members()) {
        const auto& first = *samples[0].conversation;
        if (!first.has(m)) throw ConfigError("dataset has no " + modality_name(m) + " features");
        const std::size_t dim = first[m].cols;
        std::vector<T> v(n * len * dim, T(0));
        for (std::size_t b = 0; b < n; ++b) {
            const auto& conv = *samples[b].conversation;
            if (!conv.has(m) || conv[m].cols != dim)
                throw DimensionError("make_batch: conversation " + conv.id + " has mismatched " + modality_name(m));
            const std::size_t w0 = samples[b].first_window();
            for (std::size_t i = 0; i < windows; ++i) {
                const float* src = conv[m].row(w0 + i);
                T* dst = v.data() + (b * len + (opt.pool_seconds ? i / w : i)) * dim;
                const T weight = opt.pool_seconds ? T(1) / T(w) : T(1);
                for (std::size_t j = 0; j < dim; ++j) dst[j] += T(src[j]) * weight;
            }
        }
        batch.tokens[index_of(m)] = Tensor<T>::from({n, len, dim}, std::move(v));
    }
    return batch;
}

} // namespace turnformer::data
