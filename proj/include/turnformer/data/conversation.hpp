#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "turnformer/models/modality.hpp"
#include "turnformer/numerics/errors.hpp"

namespace turnformer::data {

/// Row-major float32 matrix, one row per window.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

    float* row(std::size_t i) { return values.data() + i * cols; }
    const float* row(std::size_t i) const { return values.data() + i * cols; }
    bool operator==(const FeatureMatrix&) const = default;
};

/// One recorded conversation: per-window features for each present modality
/// and a per-window speaker label (0 = no one, 1 = host, 2.. = participants).
struct ConversationStreams {
    std::string id;
    std::size_t windows_per_second = 4;
    std::array<std::optional<FeatureMatrix>, kNumModalities> features;
    std::vector<int> labels;

    std::size_t num_windows() const { return labels.size(); }
    /// Whole seconds covered; a trailing partial second is never windowed.
    std::size_t duration_s() const { return labels.size() / windows_per_second; }
    bool has(Modality m) const { return features[index_of(m)].has_value(); }
    const FeatureMatrix& operator[](Modality m) const { return *features[index_of(m)]; }

    void validate(std::size_t n_classes) const {
        if (windows_per_second == 0) throw ConfigError("conversation " + id + ": windows_per_second must be >= 1");
        for (auto m : kAllModalities)
            if (has(m) && (*this)[m].rows != labels.size())
                throw DimensionError("conversation " + id + ": " + modality_name(m) + " has " +
                                     std::to_string((*this)[m].rows) + " windows, labels have " +
                                     std::to_string(labels.size()));
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || std::size_t(labels[i]) >= n_classes)
                throw ConfigError("conversation " + id + ": label " + std::to_string(labels[i]) + " at window " +
                                  std::to_string(i) + " outside [0," + std::to_string(n_classes) + ")");
    }

    bool operator==(const ConversationStreams&) const = default;
};

/// A set of conversations sharing window rate, class count and feature widths.
/// A modality with width 0 is absent from every conversation.
struct Dataset {
    std::size_t windows_per_second = 4;
    std::size_t n_classes = 4;
    RawDims dims{0, 0, 0};
    std::vector<ConversationStreams> conversations;

    ModalitySet modalities() const {
        ModalitySet s;
        for (auto m : kAllModalities)
            if (dims[index_of(m)] > 0) s.insert(m);
        return s;
    }

    void validate() const {
        if (n_classes < 2) throw ConfigError("dataset needs n_classes >= 2");
        for (const auto& c : conversations) {
            if (c.windows_per_second != windows_per_second)
                throw ConfigError("conversation " + c.id + " has " + std::to_string(c.windows_per_second) +
                                  " windows/s, dataset has " + std::to_string(windows_per_second));
            for (auto m : kAllModalities) {
                const auto want = dims[index_of(m)];
                if (want == 0 && c.has(m))
                    throw ConfigError("conversation " + c.id + " carries " + modality_name(m) +
                                      " which the dataset does not declare");
                if (want > 0 && (!c.has(m) || c[m].cols != want))
                    throw DimensionError("conversation " + c.id + ": " + modality_name(m) + " width " +
                                         (c.has(m) ? std::to_string(c[m].cols) : std::string("missing")) +
                                         ", expected " + std::to_string(want));
            }
            c.validate(n_classes);
        }
    }

    bool operator==(const Dataset&) const = default;
};

} // namespace turnformer::data
