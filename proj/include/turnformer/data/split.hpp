#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "turnformer/numerics/errors.hpp"

namespace turnformer::data {

struct SplitFractions {
    double train = 0.78;
    double val = 0.06;
    double test = 0.16;
};

/// Conversation indices per split.
struct Split {
    std::vector<std::size_t> train, val, test;
};

/// Split sizes by largest remainder: floors first, leftover conversations go
/// to the largest fractional parts (earlier split on ties). Every nonzero
/// fraction receives at least one conversation.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f) {
    const std::array<double, 3> fr{f.train, f.val, f.test};
    for (auto x : fr)
        if (!(x >= 0.0)) throw ConfigError("split fractions must be non-negative");
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    const auto nonzero = std::size_t(std::count_if(fr.begin(), fr.end(), [](double x) { return x > 0; }));
    if (n < nonzero)
        throw ConfigError("cannot split " + std::to_string(n) + " conversations into " + std::to_string(nonzero) +
                          " nonempty parts");
    std::array<std::size_t, 3> size{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = fr[i] * double(n);
        size[i] = std::size_t(std::floor(exact + 1e-9));
        rem[i] = exact - double(size[i]);
        used += size[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; used < n; ++k, ++used) ++size[order[k % 3]];
    for (int i = 0; i < 3; ++i) {
        if (fr[i] > 0 && size[i] == 0) {
            auto donor = std::max_element(size.begin(), size.end()) - size.begin();
            --size[donor];
            ++size[i];
        }
    }
    return size;
}

/// Shuffles conversation indices with `seed`, then cuts train/val/test.
inline Split split_dataset(std::size_t n_conversations, const SplitFractions& f, std::uint64_t seed) {
    const auto size = split_sizes(n_conversations, f);
    std::vector<std::size_t> idx(n_conversations);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Split s;
    s.train.assign(idx.begin(), idx.begin() + long(size[0]));
    s.val.assign(idx.begin() + long(size[0]), idx.begin() + long(size[0] + size[1]));
    s.test.assign(idx.begin() + long(size[0] + size[1]), idx.end());
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

} // namespace turnformer::data
