#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "turnformer/numerics/errors.hpp"

namespace turnformer {

inline constexpr const char* kResultsHeader = "model,modalities,prior,past_s,future_s,seed,split,top1";

struct ResultRow {
    std::string model;
    std::string modalities;
    bool prior = false;
    std::size_t past_s = 0;
    std::size_t future_s = 0;
    std::uint64_t seed = 0;
    std::string split;
    double top1 = 0;

    bool operator==(const ResultRow&) const = default;
};

inline std::string to_csv_line(const ResultRow& r) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", r.top1);
    std::ostringstream os;
    // Preset names may contain '|' but never commas or quotes.
    os << r.model << ',' << r.modalities << ',' << (r.prior ? 1 : 0) << ',' << r.past_s << ',' << r.future_s << ','
       << r.seed << ',' << r.split << ',' << acc;
    return os.str();
}

inline ResultRow parse_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8)
        throw FormatError("results line " + std::to_string(line_no) + ": expected 8 fields, got " +
                          std::to_string(f.size()));
    try {
        ResultRow r;
        r.model = f[0];
        r.modalities = f[1];
        if (f[2] != "0" && f[2] != "1") throw std::invalid_argument("prior must be 0 or 1");
        r.prior = f[2] == "1";
        r.past_s = std::stoul(f[3]);
        r.future_s = std::stoul(f[4]);
        r.seed = std::stoull(f[5]);
        r.split = f[6];
        r.top1 = std::stod(f[7]);
        if (!(r.top1 >= 0.0 && r.top1 <= 1.0)) throw std::invalid_argument("top1 outside [0,1]");
        return r;
    } catch (const std::exception& e) {
        throw FormatError("results line " + std::to_string(line_no) + ": " + e.what());
    }
}

inline std::vector<ResultRow> read_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open results file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kResultsHeader)
        throw FormatError(path.string() + ": expected header '" + std::string(kResultsHeader) + "'");
    std::vector<ResultRow> rows;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        rows.push_back(parse_csv_line(line, no));
    }
    return rows;
}

inline void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw FormatError("cannot write " + tmp);
        out << kResultsHeader << '\n';
        for (const auto& r : rows) out << to_csv_line(r) << '\n';
        if (!out) throw FormatError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

} // namespace turnformer
