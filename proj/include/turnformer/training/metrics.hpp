#pragma once

#include <span>
#include <vector>

#include "turnformer/numerics/errors.hpp"

namespace turnformer {

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> row) {
    if (row.empty()) throw ContractError("argmax of an empty row");
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

/// Fraction of rows whose argmax equals the target.
template <typename T>
double top1_accuracy(const std::vector<std::vector<T>>& predictions, std::span<const int> targets) {
    if (predictions.empty()) throw ContractError("top1_accuracy: no predictions");
    if (predictions.size() != targets.size())
        throw ContractError("top1_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(targets.size()) + " targets");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        hits += int(argmax<T>(predictions[i])) == targets[i];
    return double(hits) / double(predictions.size());
}

/// Accuracy of always predicting the most frequent training label (lowest
/// label on ties).
inline double majority_class_accuracy(std::span<const int> train_targets, std::span<const int> eval_targets,
                                      std::size_t n_classes) {
    if (train_targets.empty() || eval_targets.empty()) throw ContractError("majority_class_accuracy: empty input");
    std::vector<std::size_t> counts(n_classes, 0);
    for (int t : train_targets) ++counts.at(std::size_t(t));
    const std::size_t best = argmax<std::size_t>(counts);
    std::size_t hits = 0;
    for (int t : eval_targets) hits += std::size_t(t) == best;
    return double(hits) / double(eval_targets.size());
}

} // namespace turnformer
