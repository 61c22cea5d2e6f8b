#pragma once

#include <string>
#include <vector>

#include "turnformer/models/spec.hpp"

// Named model presets.
//
//   3m:<streams>          full model, soft-average fusion, e.g. 3m:T>V|A>V or 3m:V>A
//   3m-concat:<streams>   concatenation fusion
//   3m-nodec:<streams>    stage-2 streams without a decoder (cross-attention stack)
//   3m:no-stage1          raw embeddings feed stage 2 directly
//   3m:no-stage2          stage-1 outputs averaged and classified
//   eft | lft | mlp       baselines over the modality set chosen separately

namespace turnformer {

struct PresetInfo {
    std::string name;
    std::string label;  // row label used in ablation tables
};

inline std::vector<StreamSpec> parse_streams(const std::string& s) {
    std::vector<StreamSpec> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find('|', start);
        if (end == std::string::npos) end = s.size();
        out.push_back(StreamSpec::parse(std::string_view(s).substr(start, end - start)));
        start = end + 1;
    }
    return out;
}

inline std::string streams_label(const std::vector<StreamSpec>& streams) {
    std::string s;
    for (const auto& st : streams) {
        if (!s.empty()) s += '|';
        s += st.label();
    }
    return s;
}

/// The fifteen ablation variants in table order.
inline const std::vector<PresetInfo>& ablation_presets() {
    static const std::vector<PresetInfo> presets{
        {"3m:T>V|A>V", "3M T->V || A->V"},
        {"3m:V>T|A>T", "3M V->T || A->T"},
        {"3m:V>A|T>A", "3M V->A || T->A"},
        {"3m-concat:T>V|A>V", "3M concat T->V || A->V"},
        {"3m:V>T", "3M V->T"},
        {"3m:V>A", "3M V->A"},
        {"3m:T>V", "3M T->V"},
        {"3m:T>A", "3M T->A"},
        {"3m:A>V", "3M A->V"},
        {"3m:A>T", "3M A->T"},
        {"3m-nodec:T>V|A>V", "3M no-decoder T->V || A->V"},
        {"3m-nodec:V>T|A>T", "3M no-decoder V->T || A->T"},
        {"3m-nodec:V>A|T>A", "3M no-decoder V->A || T->A"},
        {"3m:no-stage1", "3M W/o 1st stage"},
        {"3m:no-stage2", "3M W/o 2nd stage"},
    };
    return presets;
}

inline std::vector<std::string> baseline_presets() { return {"eft", "lft", "mlp"}; }

inline std::vector<std::string> all_preset_names() {
    std::vector<std::string> out;
    for (const auto& p : ablation_presets()) out.push_back(p.name);
    for (const auto& b : baseline_presets()) out.push_back(b);
    return out;
}

inline bool is_three_m_preset(const std::string& name) { return name.rfind("3m", 0) == 0; }

/// Applies a preset on top of `base` (dims, classes, prior, raw dims are
/// kept). For 3M presets the modality set becomes the modalities the preset
/// reads; baselines keep base.modalities.
inline ModelSpec apply_preset(const std::string& name, ModelSpec base) {
    auto fail = [&]() -> ConfigError {
        std::string msg = "unknown model preset '" + name + "'; valid presets:";
        for (const auto& p : all_preset_names()) msg += " " + p;
        msg += " (or 3m:<streams>, 3m-concat:<streams>, 3m-nodec:<streams>)";
        return ConfigError(msg);
    };
    auto& cfg = base.config;
    if (name == "eft" || name == "lft" || name == "mlp") {
        base.arch = architecture_from_name(name);
        return base;
    }
    auto colon = name.find(':');
    if (colon == std::string::npos) throw fail();
    const auto family = name.substr(0, colon);
    const auto rest = name.substr(colon + 1);
    base.arch = Architecture::kThreeM;
    cfg.streams = ThreeMConfig{}.streams;
    cfg.fusion = Fusion::kSoftAverage;
    cfg.include_stage1 = cfg.include_stage2 = cfg.stage2_decoder = true;
    if (family == "3m" && rest == "no-stage1") {
        cfg.include_stage1 = false;
    } else if (family == "3m" && rest == "no-stage2") {
        cfg.include_stage2 = false;
    } else {
        if (family == "3m-concat") cfg.fusion = Fusion::kConcat;
        else if (family == "3m-nodec") cfg.stage2_decoder = false;
        else if (family != "3m") throw fail();
        try {
            cfg.streams = parse_streams(rest);
        } catch (const ConfigError&) {
            throw fail();
        }
    }
    ModalitySet ms;
    if (cfg.include_stage2) {
        for (const auto& s : cfg.streams) {
            ms.insert(s.query);
            ms.insert(s.kv);
        }
    } else {
        ms = ModalitySet::all();
    }
    base.modalities = ms;
    base.validate();
    return base;
}

} // namespace turnformer
