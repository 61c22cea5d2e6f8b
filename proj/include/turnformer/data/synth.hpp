#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnformer/data/conversation.hpp"

namespace turnformer::data {

/// A planted pre-turn signal: `lead_s` seconds before every speaker change,
/// the cue modality carries amplitude * pattern[new speaker].
struct CueConfig {
    Modality modality = Modality::kVideo;
    std::size_t lead_s = 2;
    double amplitude = 2.0;
    bool operator==(const CueConfig&) const = default;
};

struct SynthConfig {
    std::size_t n_speakers = 3;  // states = n_speakers + 1 ("no one")
    double p_stay = 0.9;
    std::size_t windows_per_second = 4;
    std::size_t duration_s = 120;
    std::size_t n_conversations = 28;
    RawDims dims{16, 8, 16};
    /// Scale of the per-speaker signature added to every window; 0 makes the
    /// features carry no speaker identity.
    double signature_scale = 1.0;
    double noise = 1.0;
    std::optional<CueConfig> cue;
    std::uint64_t seed = 1;

    std::size_t n_states() const { return n_speakers + 1; }

    void validate() const {
        if (n_speakers < 1) throw ConfigError("synth: n_speakers must be >= 1");
        if (!(p_stay > 0.0 && p_stay <= 1.0)) throw ConfigError("synth: p_stay must lie in (0, 1]");
        if (windows_per_second == 0) throw ConfigError("synth: windows_per_second must be >= 1");
        if (duration_s == 0 || n_conversations == 0) throw ConfigError("synth: empty dataset requested");
        if (!(noise >= 0.0)) throw ConfigError("synth: noise_scale must be >= 0, got " + std::to_string(noise));
        if (!(signature_scale >= 0.0)) throw ConfigError("synth: signature_scale must be >= 0");
        bool any = false;
        for (auto d : dims) any = any || d > 0;
        if (!any) throw ConfigError("synth: at least one modality needs a positive width");
        if (cue) {
            if (dims[index_of(cue->modality)] == 0)
                throw ConfigError("synth: cue modality " + modality_name(cue->modality) + " is absent");
            if (cue->lead_s >= duration_s) throw ConfigError("synth: cue lead must be shorter than the conversation");
        }
    }

    bool operator==(const SynthConfig&) const = default;
};

/// Desk-scale stand-in with the recorded dataset's widths and window rate.
inline SynthConfig egocom_shaped_synth() {
    SynthConfig c;
    c.windows_per_second = 12;
    c.dims = kEgoComRawDims;
    return c;
}

inline nlohmann::json to_json(const SynthConfig& c) {
    nlohmann::json j{{"n_speakers", c.n_speakers},
                     {"p_stay", c.p_stay},
                     {"windows_per_second", c.windows_per_second},
                     {"duration_s", c.duration_s},
                     {"n_conversations", c.n_conversations},
                     {"dims", {{"text", c.dims[0]}, {"audio", c.dims[1]}, {"video", c.dims[2]}}},
                     {"signature_scale", c.signature_scale},
                     {"noise", c.noise},
                     {"seed", c.seed}};
    if (c.cue)
        j["cue"] = {{"modality", modality_name(c.cue->modality)},
                    {"lead_s", c.cue->lead_s},
                    {"amplitude", c.cue->amplitude}};
    else
        j["cue"] = nullptr;
    return j;
}

/// Overlays the keys present in `j` onto `base`.
inline SynthConfig synth_from_json(const nlohmann::json& j, SynthConfig base = {}) {
    static const std::set<std::string> known{"n_speakers", "p_stay",          "windows_per_second", "duration_s",
                                             "n_conversations", "dims",      "signature_scale",    "noise",
                                             "cue",        "seed",            "preset"};
    for (auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("synth config: unknown key '" + k + "'");
    try {
        if (j.contains("preset")) {
            const auto p = j.at("preset").get<std::string>();
            if (p == "egocom") base = egocom_shaped_synth();
            else if (p != "desk") throw ConfigError("synth config: unknown preset '" + p + "' (desk, egocom)");
        }
        if (j.contains("n_speakers")) base.n_speakers = j.at("n_speakers").get<std::size_t>();
        if (j.contains("p_stay")) base.p_stay = j.at("p_stay").get<double>();
        if (j.contains("windows_per_second")) base.windows_per_second = j.at("windows_per_second").get<std::size_t>();
        if (j.contains("duration_s")) base.duration_s = j.at("duration_s").get<std::size_t>();
        if (j.contains("n_conversations")) base.n_conversations = j.at("n_conversations").get<std::size_t>();
        if (j.contains("dims"))
            for (auto& [k, v] : j.at("dims").items()) base.dims[index_of(modality_from_name(k))] = v.get<std::size_t>();
        if (j.contains("signature_scale")) base.signature_scale = j.at("signature_scale").get<double>();
        if (j.contains("noise")) base.noise = j.at("noise").get<double>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("cue")) {
            const auto& c = j.at("cue");
            if (c.is_null()) {
                base.cue.reset();
            } else {
                CueConfig cue = base.cue.value_or(CueConfig{});
                if (c.contains("modality")) cue.modality = modality_from_name(c.at("modality").get<std::string>());
                if (c.contains("lead_s")) cue.lead_s = c.at("lead_s").get<std::size_t>();
                if (c.contains("amplitude")) cue.amplitude = c.at("amplitude").get<double>();
                base.cue = cue;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    base.validate();
    return base;
}

namespace detail {

/// `count` pairwise distinct random sign vectors of width `dim`.
inline std::vector<std::vector<float>> sign_patterns(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
    if (dim < 63 && (std::uint64_t(1) << dim) < count)
        throw ConfigError("synth: width " + std::to_string(dim) + " cannot hold " + std::to_string(count) +
                          " distinct patterns");
    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<float>> out;
    while (out.size() < count) {
        std::vector<float> p(dim);
        for (auto& v : p) v = coin(rng) ? 1.0f : -1.0f;
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(std::move(p));
    }
    return out;
}

} // namespace detail

/// Per-second speaker sequence: uniform start, then stay with p_stay or move
/// uniformly to one of the other states.
inline std::vector<int> markov_labels(std::size_t seconds, std::size_t n_states, double p_stay, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> start(0, int(n_states) - 1), other(0, int(n_states) - 2);
    std::bernoulli_distribution stay(p_stay);
    std::vector<int> out(seconds);
    out[0] = start(rng);
    for (std::size_t s = 1; s < seconds; ++s) {
        if (stay(rng)) {
            out[s] = out[s - 1];
        } else {
            const int k = other(rng);
            out[s] = k < out[s - 1] ? k : k + 1;
        }
    }
    return out;
}

/// Generates cfg.n_conversations conversations. Deterministic in cfg.seed.
inline Dataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_states(), w = cfg.windows_per_second;
    std::mt19937_64 pattern_rng(cfg.seed);
    std::array<std::vector<std::vector<float>>, kNumModalities> signature;
    for (auto m : kAllModalities)
        if (cfg.dims[index_of(m)] > 0)
            signature[index_of(m)] = detail::sign_patterns(n, cfg.dims[index_of(m)], pattern_rng);
    std::vector<std::vector<float>> cue_pattern;
    if (cfg.cue) cue_pattern = detail::sign_patterns(n, cfg.dims[index_of(cfg.cue->modality)], pattern_rng);

    Dataset ds;
    ds.windows_per_second = w;
    ds.n_classes = n;
    ds.dims = cfg.dims;
    for (std::size_t c = 0; c < cfg.n_conversations; ++c) {
        std::seed_seq seq{cfg.seed, std::uint64_t(c) + 1};
        std::mt19937_64 rng(seq);
        const auto seconds = markov_labels(cfg.duration_s, n, cfg.p_stay, rng);
        ConversationStreams conv;
        conv.id = "conv" + std::string(c < 10 ? "00" : c < 100 ? "0" : "") + std::to_string(c);
        conv.windows_per_second = w;
        conv.labels.resize(cfg.duration_s * w);
        for (std::size_t i = 0; i < conv.labels.size(); ++i) conv.labels[i] = seconds[i / w];
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto m : kAllModalities) {
            const auto dim = cfg.dims[index_of(m)];
            if (dim == 0) continue;
            FeatureMatrix f(conv.labels.size(), dim);
            for (std::size_t i = 0; i < f.rows; ++i) {
                const auto& sig = signature[index_of(m)][std::size_t(conv.labels[i])];
                float* row = f.row(i);
                for (std::size_t j = 0; j < dim; ++j)
                    row[j] = float(cfg.signature_scale * sig[j] + (cfg.noise > 0 ? cfg.noise * noise(rng) : 0.0));
            }
            if (cfg.cue && cfg.cue->modality == m) {
                for (std::size_t s = std::max<std::size_t>(cfg.cue->lead_s, 1); s < cfg.duration_s; ++s) {
                    if (seconds[s] == seconds[s - 1]) continue;
                    const auto& pat = cue_pattern[std::size_t(seconds[s])];
                    const std::size_t at = s - cfg.cue->lead_s;
                    for (std::size_t i = at * w; i < (at + 1) * w; ++i)
                        for (std::size_t j = 0; j < dim; ++j) f.row(i)[j] += float(cfg.cue->amplitude * pat[j]);
                }
            }
            conv.features[index_of(m)] = std::move(f);
        }
        ds.conversations.push_back(std::move(conv));
    }
    ds.validate();
    return ds;
}

} // namespace turnformer::data
