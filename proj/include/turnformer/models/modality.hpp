#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "turnformer/numerics/errors.hpp"

namespace turnformer {

enum class Modality { kText = 0, kAudio = 1, kVideo = 2 };

inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<Modality, 3> kAllModalities{Modality::kText, Modality::kAudio, Modality::kVideo};
/// Display order used in result tables: T, V, A.
inline constexpr std::array<Modality, 3> kDisplayOrder{Modality::kText, Modality::kVideo, Modality::kAudio};

inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

inline char modality_letter(Modality m) {
    switch (m) {
    case Modality::kText: return 'T';
    case Modality::kAudio: return 'A';
    case Modality::kVideo: return 'V';
    }
    return '?';
}

/// File stem used by the dataset layout.
inline std::string modality_name(Modality m) {
    switch (m) {
    case Modality::kText: return "text";
    case Modality::kAudio: return "audio";
    case Modality::kVideo: return "video";
    }
    return "?";
}

inline Modality modality_from_letter(char c) {
    switch (c) {
    case 'T': case 't': return Modality::kText;
    case 'A': case 'a': return Modality::kAudio;
    case 'V': case 'v': return Modality::kVideo;
    }
    throw ConfigError(std::string("unknown modality '") + c + "' (expected T, A or V)");
}

inline Modality modality_from_name(std::string_view s) {
    if (s == "text" || s == "T") return Modality::kText;
    if (s == "audio" || s == "A") return Modality::kAudio;
    if (s == "video" || s == "V") return Modality::kVideo;
    throw ConfigError("unknown modality '" + std::string(s) + "'");
}

/// Feature widths of the precomputed embeddings: FastText text, speaker-id
/// audio, R(2+1)D video.
inline constexpr std::size_t kTextDim = 300;
inline constexpr std::size_t kAudioDim = 64;
inline constexpr std::size_t kVideoDim = 2048;

using RawDims = std::array<std::size_t, kNumModalities>;  // indexed by Modality
inline constexpr RawDims kEgoComRawDims{kTextDim, kAudioDim, kVideoDim};

class ModalitySet {
public:
    ModalitySet() = default;
    ModalitySet(std::initializer_list<Modality> ms) {
        for (auto m : ms) insert(m);
    }

    static ModalitySet all() { return {Modality::kText, Modality::kAudio, Modality::kVideo}; }

    /// Parses "T", "T+V", "T+V+A", ... (order-insensitive).
    static ModalitySet parse(std::string_view s) {
        ModalitySet out;
        for (char c : s) {
            if (c == '+' || c == ' ') continue;
            auto m = modality_from_letter(c);
            if (out.contains(m)) throw ConfigError("modality listed twice in '" + std::string(s) + "'");
            out.insert(m);
        }
        if (out.empty()) throw ConfigError("empty modality set '" + std::string(s) + "'");
        return out;
    }

    void insert(Modality m) { bits_ |= 1u << index_of(m); }
    bool contains(Modality m) const { return bits_ & (1u << index_of(m)); }
    bool empty() const { return bits_ == 0; }
    std::size_t size() const { return __builtin_popcount(bits_); }
    bool includes(const ModalitySet& other) const { return (bits_ & other.bits_) == other.bits_; }

    /// Members in canonical order (T, A, V).
    std::vector<Modality> members() const {
        std::vector<Modality> out;
        for (auto m : kAllModalities)
            if (contains(m)) out.push_back(m);
        return out;
    }

    /// "T+V+A" style label in display order.
    std::string label() const {
        std::string s;
        for (auto m : kDisplayOrder)
            if (contains(m)) {
                if (!s.empty()) s += '+';
                s += modality_letter(m);
            }
        return s;
    }

    bool operator==(const ModalitySet&) const = default;

private:
    unsigned bits_ = 0;
};

} // namespace turnformer
