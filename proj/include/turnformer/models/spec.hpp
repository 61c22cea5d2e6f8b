#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnformer/models/modality.hpp"
#include "turnformer/nn/dims.hpp"
#include "turnformer/numerics/checkpoint.hpp"

namespace turnformer {

enum class Architecture { kThreeM, kEft, kLft, kMlp };
enum class Fusion { kSoftAverage, kConcat };

/// Stage-2 stream X→Y: X supplies queries, Y keys and values.
struct StreamSpec {
    Modality query = Modality::kText;
    Modality kv = Modality::kVideo;

    std::string label() const { return std::string{modality_letter(query), '>', modality_letter(kv)}; }
    static StreamSpec parse(std::string_view s) {
        if (s.size() != 3 || s[1] != '>') throw ConfigError("stream must look like 'T>V', got '" + std::string(s) + "'");
        return {modality_from_letter(s[0]), modality_from_letter(s[2])};
    }
    bool operator==(const StreamSpec&) const = default;
};

struct ThreeMConfig {
    nn::ModelDims dims;
    std::vector<StreamSpec> streams{{Modality::kText, Modality::kVideo}, {Modality::kAudio, Modality::kVideo}};
    Fusion fusion = Fusion::kSoftAverage;
    bool include_stage1 = true;
    bool include_stage2 = true;
    bool stage2_decoder = true;
    std::size_t n_classes = 4;
    bool use_prior = false;
    std::size_t l_out = 12;

    bool operator==(const ThreeMConfig&) const = default;
};

/// Everything needed to construct a model: architecture, shared transformer
/// settings, and the input modalities with their raw widths.
struct ModelSpec {
    Architecture arch = Architecture::kThreeM;
    ThreeMConfig config;
    ModalitySet modalities = ModalitySet::all();
    RawDims raw_dims = kEgoComRawDims;
    std::size_t mlp_hidden = 128;

    std::size_t raw_dim(Modality m) const { return raw_dims[index_of(m)]; }

    /// Modalities that actually feed the network.
    ModalitySet used_modalities() const {
        if (arch != Architecture::kThreeM || !config.include_stage2) return modalities;
        ModalitySet s;
        for (const auto& st : config.streams) {
            s.insert(st.query);
            s.insert(st.kv);
        }
        return s;
    }

    void validate() const {
        config.dims.validate();
        if (config.n_classes < 2) throw ConfigError("n_classes must be >= 2");
        if (config.l_out == 0) throw ConfigError("l_out must be >= 1");
        if (modalities.empty()) throw ConfigError("at least one modality is required");
        for (auto m : modalities.members())
            if (raw_dim(m) == 0) throw ConfigError("raw dim of " + modality_name(m) + " must be >= 1");
        if (arch == Architecture::kMlp && mlp_hidden == 0) throw ConfigError("mlp_hidden must be >= 1");
        if (arch != Architecture::kThreeM) return;
        if (!config.include_stage1 && !config.include_stage2)
            throw ConfigError("3M config must include at least one stage");
        if (config.include_stage2) {
            if (config.streams.empty()) throw ConfigError("3M config with stage 2 needs at least one stream");
            for (const auto& s : config.streams) {
                if (s.query == s.kv) throw ConfigError("stream " + s.label() + " uses the same modality twice");
                if (!modalities.contains(s.query) || !modalities.contains(s.kv))
                    throw ConfigError("stream " + s.label() + " needs modalities missing from " + modalities.label());
            }
        }
    }

    bool operator==(const ModelSpec&) const = default;
};

inline std::string architecture_name(Architecture a) {
    switch (a) {
    case Architecture::kThreeM: return "3m";
    case Architecture::kEft: return "eft";
    case Architecture::kLft: return "lft";
    case Architecture::kMlp: return "mlp";
    }
    return "?";
}

inline Architecture architecture_from_name(const std::string& s) {
    if (s == "3m") return Architecture::kThreeM;
    if (s == "eft") return Architecture::kEft;
    if (s == "lft") return Architecture::kLft;
    if (s == "mlp") return Architecture::kMlp;
    throw ConfigError("unknown architecture '" + s + "'");
}

inline nlohmann::json to_json(const nn::ModelDims& d) {
    return {{"d_model", d.d_model}, {"n_heads", d.n_heads}, {"d_ff", d.d_ff}, {"n_layers", d.n_layers},
            {"dropout", d.dropout}};
}

/// Reads dims, keeping `base` values for absent keys.
inline nn::ModelDims dims_from_json(const nlohmann::json& j, nn::ModelDims base = {}) {
    base.d_model = j.value("d_model", base.d_model);
    base.n_heads = j.value("n_heads", base.n_heads);
    base.d_ff = j.value("d_ff", base.d_ff);
    base.n_layers = j.value("n_layers", base.n_layers);
    base.dropout = j.value("dropout", base.dropout);
    return base;
}

inline nlohmann::json to_json(const ModelSpec& s) {
    nlohmann::json streams = nlohmann::json::array();
    for (const auto& st : s.config.streams) streams.push_back(st.label());
    nlohmann::json raw;
    for (auto m : kAllModalities) raw[modality_name(m)] = s.raw_dim(m);
    return {{"architecture", architecture_name(s.arch)},
            {"modalities", s.modalities.label()},
            {"raw_dims", raw},
            {"dims", to_json(s.config.dims)},
            {"streams", streams},
            {"fusion", s.config.fusion == Fusion::kSoftAverage ? "soft_average" : "concat"},
            {"include_stage1", s.config.include_stage1},
            {"include_stage2", s.config.include_stage2},
            {"stage2_decoder", s.config.stage2_decoder},
            {"n_classes", s.config.n_classes},
            {"use_prior", s.config.use_prior},
            {"l_out", s.config.l_out},
            {"mlp_hidden", s.mlp_hidden}};
}

/// Overlays keys present in `j` onto `base`.
inline ModelSpec spec_from_json(const nlohmann::json& j, ModelSpec base = {}) {
    try {
        if (j.contains("architecture")) base.arch = architecture_from_name(j.at("architecture").get<std::string>());
        if (j.contains("modalities")) base.modalities = ModalitySet::parse(j.at("modalities").get<std::string>());
        if (j.contains("raw_dims"))
            for (auto& [k, v] : j.at("raw_dims").items()) base.raw_dims[index_of(modality_from_name(k))] = v.get<std::size_t>();
        if (j.contains("dims")) base.config.dims = dims_from_json(j.at("dims"), base.config.dims);
        if (j.contains("streams")) {
            base.config.streams.clear();
            for (const auto& s : j.at("streams")) base.config.streams.push_back(StreamSpec::parse(s.get<std::string>()));
        }
        if (j.contains("fusion")) {
            auto f = j.at("fusion").get<std::string>();
            if (f == "soft_average") base.config.fusion = Fusion::kSoftAverage;
            else if (f == "concat") base.config.fusion = Fusion::kConcat;
            else throw ConfigError("unknown fusion '" + f + "'");
        }
        base.config.include_stage1 = j.value("include_stage1", base.config.include_stage1);
        base.config.include_stage2 = j.value("include_stage2", base.config.include_stage2);
        base.config.stage2_decoder = j.value("stage2_decoder", base.config.stage2_decoder);
        base.config.n_classes = j.value("n_classes", base.config.n_classes);
        base.config.use_prior = j.value("use_prior", base.config.use_prior);
        base.config.l_out = j.value("l_out", base.config.l_out);
        base.mlp_hidden = j.value("mlp_hidden", base.mlp_hidden);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return base;
}

inline std::uint64_t spec_digest(const ModelSpec& s) { return config_digest(to_json(s).dump()); }

} // namespace turnformer
