#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "turnformer/data/conversation.hpp"

// Directory layout:
//   manifest.json            format_version, windows_per_second, n_classes,
//                            modality_dims {text, audio, video},
//                            conversations [{id, duration_s, num_windows}]
//   <id>/{text,audio,video}.f32   row-major little-endian float32, num_windows x dim
//   <id>/labels.csv          header "window_index,speaker", one row per window

namespace turnformer::data {

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline void check_id(const std::string& id) {
    if (id.empty() || id == "." || id == ".." || id.find_first_of("/\\") != std::string::npos)
        throw FormatError("conversation id '" + id + "' is not a valid directory name");
}

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
    return v;
}

inline void write_f32(const std::filesystem::path& path, const FeatureMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    std::vector<std::uint32_t> raw(m.values.size());
    std::memcpy(raw.data(), m.values.data(), raw.size() * 4);
    for (auto& r : raw) r = to_le(r);
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * 4));
    if (!out) throw FormatError("short write to " + path.string());
}

inline FeatureMatrix read_f32(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError("missing feature file " + path.string());
    const std::uintmax_t expected = std::uintmax_t(rows) * cols * 4;
    if (actual != expected)
        throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes (" +
                          std::to_string(rows) + " windows x " + std::to_string(cols) + " float32), found " +
                          std::to_string(actual));
    FeatureMatrix m(rows, cols);
    std::ifstream in(path, std::ios::binary);
    std::vector<std::uint32_t> raw(rows * cols);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(expected));
    if (!in) throw FormatError("short read from " + path.string());
    for (auto& r : raw) r = to_le(r);
    std::memcpy(m.values.data(), raw.data(), expected);
    return m;
}

inline std::vector<int> read_labels(const std::filesystem::path& path, std::size_t rows) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing label file " + path.string());
    std::string line;
    if (!std::getline(in, line) || (line != "window_index,speaker" && line != "window_index,speaker\r"))
        throw FormatError(path.string() + ": expected header 'window_index,speaker'");
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("no comma");
            const long idx = std::stol(line.substr(0, comma));
            const int speaker = std::stoi(line.substr(comma + 1));
            if (idx != long(labels.size())) throw std::invalid_argument("window index out of sequence");
            labels.push_back(speaker);
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ": bad row " + std::to_string(labels.size() + 2) + " '" + line +
                              "' (" + e.what() + ")");
        }
    }
    if (labels.size() != rows)
        throw FormatError(path.string() + ": expected " + std::to_string(rows) + " label rows, found " +
                          std::to_string(labels.size()));
    return labels;
}

} // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{{"format_version", kDatasetFormatVersion},
                            {"windows_per_second", ds.windows_per_second},
                            {"n_classes", ds.n_classes}};
    for (auto m : kAllModalities)
        if (ds.dims[index_of(m)] > 0) manifest["modality_dims"][modality_name(m)] = ds.dims[index_of(m)];
    manifest["conversations"] = nlohmann::json::array();
    for (const auto& c : ds.conversations) {
        detail::check_id(c.id);
        manifest["conversations"].push_back(
            {{"id", c.id}, {"duration_s", c.duration_s()}, {"num_windows", c.num_windows()}});
        const auto cdir = dir / c.id;
        std::filesystem::create_directories(cdir);
        for (auto m : kAllModalities)
            if (c.has(m)) detail::write_f32(cdir / (modality_name(m) + ".f32"), c[m]);
        std::ofstream labels(cdir / "labels.csv");
        labels << "window_index,speaker\n";
        for (std::size_t i = 0; i < c.labels.size(); ++i) labels << i << ',' << c.labels[i] << '\n';
        if (!labels) throw FormatError("cannot write " + (cdir / "labels.csv").string());
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

/// Loads a dataset directory. Any inconsistency raises FormatError and no
/// partial dataset is returned.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("data directory not found: " + dir.string());
    const auto mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw FormatError("missing manifest: " + mpath.string());
    Dataset ds;
    try {
        const auto j = nlohmann::json::parse(in);
        const int version = j.at("format_version").get<int>();
        if (version != kDatasetFormatVersion)
            throw FormatError(mpath.string() + ": unsupported format_version " + std::to_string(version));
        ds.windows_per_second = j.at("windows_per_second").get<std::size_t>();
        ds.n_classes = j.at("n_classes").get<std::size_t>();
        if (ds.windows_per_second == 0) throw FormatError(mpath.string() + ": windows_per_second must be >= 1");
        for (auto& [k, v] : j.at("modality_dims").items()) ds.dims[index_of(modality_from_name(k))] = v.get<std::size_t>();
        for (const auto& entry : j.at("conversations")) {
            ConversationStreams c;
            c.id = entry.at("id").get<std::string>();
            detail::check_id(c.id);
            c.windows_per_second = ds.windows_per_second;
            const auto rows = entry.at("num_windows").get<std::size_t>();
            if (entry.contains("duration_s") && entry.at("duration_s").get<std::size_t>() != rows / ds.windows_per_second)
                throw FormatError(mpath.string() + ": conversation " + c.id + " duration_s disagrees with num_windows");
            const auto cdir = dir / c.id;
            for (auto m : kAllModalities)
                if (ds.dims[index_of(m)] > 0)
                    c.features[index_of(m)] =
                        detail::read_f32(cdir / (modality_name(m) + ".f32"), rows, ds.dims[index_of(m)]);
            c.labels = detail::read_labels(cdir / "labels.csv", rows);
            ds.conversations.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    }
    try {
        ds.validate();
    } catch (const std::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
    return ds;
}

} // namespace turnformer::data
