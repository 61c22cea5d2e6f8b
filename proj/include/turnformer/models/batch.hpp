#pragma once

#include <array>
#include <vector>

#include "turnformer/models/modality.hpp"
#include "turnformer/numerics/tensor.hpp"

namespace turnformer {

/// A mini-batch of equally long samples. tokens[m] is [B, L, raw_dim(m)] for
/// present modalities and undefined otherwise.
template <typename T>
struct Batch {
    std::array<Tensor<T>, kNumModalities> tokens;
    std::vector<int> prior;
    std::vector<int> target;

    std::size_t size() const { return target.size(); }
    bool has(Modality m) const { return tokens[index_of(m)].defined(); }
    const Tensor<T>& operator[](Modality m) const { return tokens[index_of(m)]; }
};

} // namespace turnformer
