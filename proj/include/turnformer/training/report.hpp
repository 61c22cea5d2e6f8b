#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "turnformer/models/modality.hpp"
#include "turnformer/models/presets.hpp"
#include "turnformer/training/results.hpp"

namespace turnformer {

/// A rendered pivot: label columns, then one numeric column per (past, future).
struct ReportTable {
    std::vector<std::string> label_headers;
    std::vector<std::pair<std::size_t, std::size_t>> columns;  // (past_s, future_s)
    bool average_column = false;
    struct Row {
        std::vector<std::string> labels;
        std::vector<std::optional<double>> cells;  // mean top1 over seeds
        std::optional<double> average;
    };
    std::vector<Row> rows;
};

namespace detail {

inline std::string fmt_pct(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
}

/// Modality sets in display order: singles, pairs, then the triple.
inline int modality_rank(const std::string& label) {
    static const std::vector<std::string> order{"T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"};
    const auto canon = ModalitySet::parse(label).label();
    for (std::size_t i = 0; i < order.size(); ++i)
        if (ModalitySet::parse(order[i]).label() == canon) return int(i);
    return int(order.size());
}

inline std::string table2_model_label(const std::string& model, bool single) {
    if (model == "3m:T>V|A>V") return "Our";
    if (single && (model == "eft" || model == "lft")) return "EFT/LFT";
    if (model == "eft") return "EFT";
    if (model == "lft") return "LFT";
    if (model == "mlp") return "MLP";
    for (const auto& p : ablation_presets())
        if (p.name == model) return p.label;
    return model;
}

inline int table2_model_rank(const std::string& label) {
    static const std::vector<std::string> order{"EFT/LFT", "LFT", "EFT", "MLP", "Our"};
    auto it = std::find(order.begin(), order.end(), label);
    return it == order.end() ? int(order.size()) : int(it - order.begin());
}

struct CellAcc {
    double sum = 0;
    std::size_t n = 0;
};

inline std::vector<std::pair<std::size_t, std::size_t>> columns_of(const std::vector<ResultRow>& rows) {
    std::set<std::pair<std::size_t, std::size_t>> cols;
    for (const auto& r : rows) cols.insert({r.past_s, r.future_s});
    return {cols.begin(), cols.end()};
}

} // namespace detail

/// Likelihood and posterior rows per modality set and model. Single-modality
/// EFT and LFT collapse to one row since the two models coincide there.
inline ReportTable table2(const std::vector<ResultRow>& all, const std::string& split = "test") {
    std::vector<ResultRow> rows;
    for (const auto& r : all)
        if (r.split == split) rows.push_back(r);
    ReportTable t;
    t.label_headers = {"Prior", "Modalities", "Model"};
    t.columns = detail::columns_of(rows);
    // key: prior, modality rank, model rank, model label, modality label
    using Key = std::tuple<bool, int, int, std::string, std::string>;
    std::map<Key, std::map<std::pair<std::size_t, std::size_t>, detail::CellAcc>> groups;
    for (const auto& r : rows) {
        const auto mods = ModalitySet::parse(r.modalities);
        const bool single = mods.members().size() == 1;
        const auto label = detail::table2_model_label(r.model, single);
        auto& acc = groups[{r.prior, detail::modality_rank(r.modalities), detail::table2_model_rank(label), label,
                            mods.label()}][{r.past_s, r.future_s}];
        acc.sum += r.top1;
        ++acc.n;
    }
    for (const auto& [key, cells] : groups) {
        ReportTable::Row row;
        row.labels = {std::get<0>(key) ? "True" : "False", std::get<4>(key), std::get<3>(key)};
        for (const auto& c : t.columns) {
            auto it = cells.find(c);
            row.cells.push_back(it == cells.end() ? std::nullopt : std::optional<double>(it->second.sum / double(it->second.n)));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Ablation variants in table order with a per-row average. Uses the rows
/// with the prior when any exist.
inline ReportTable table1(const std::vector<ResultRow>& all, const std::string& split = "test") {
    bool any_prior = false;
    for (const auto& r : all) any_prior |= r.split == split && r.prior;
    std::vector<ResultRow> rows;
    for (const auto& r : all)
        if (r.split == split && r.prior == any_prior) rows.push_back(r);
    ReportTable t;
    t.label_headers = {"Model"};
    t.columns = detail::columns_of(rows);
    t.average_column = true;
    std::vector<std::pair<std::string, std::string>> order;  // (preset, label)
    for (const auto& p : ablation_presets()) order.push_back({p.name, p.label});
    for (const auto& r : rows) {
        auto known = std::find_if(order.begin(), order.end(), [&](const auto& o) { return o.first == r.model; });
        if (known == order.end()) order.push_back({r.model, r.model});
    }
    for (const auto& [name, label] : order) {
        std::map<std::pair<std::size_t, std::size_t>, detail::CellAcc> cells;
        for (const auto& r : rows)
            if (r.model == name) {
                auto& acc = cells[{r.past_s, r.future_s}];
                acc.sum += r.top1;
                ++acc.n;
            }
        if (cells.empty()) continue;
        ReportTable::Row row;
        row.labels = {label};
        double sum = 0;
        std::size_t n = 0;
        for (const auto& c : t.columns) {
            auto it = cells.find(c);
            if (it == cells.end()) {
                row.cells.push_back(std::nullopt);
                continue;
            }
            const double v = it->second.sum / double(it->second.n);
            row.cells.push_back(v);
            sum += v;
            ++n;
        }
        if (n > 0) row.average = sum / double(n);
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Plain-text rendering; percentages with two decimals, "-" for missing cells.
inline std::string render(const ReportTable& t) {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head = t.label_headers;
    for (const auto& [p, f] : t.columns) head.push_back("p" + std::to_string(p) + "/f" + std::to_string(f));
    if (t.average_column) head.push_back("Average");
    grid.push_back(head);
    for (const auto& r : t.rows) {
        auto line = r.labels;
        for (const auto& c : r.cells) line.push_back(detail::fmt_pct(c));
        if (t.average_column) line.push_back(detail::fmt_pct(r.average));
        grid.push_back(std::move(line));
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : grid)
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    std::ostringstream os;
    for (std::size_t li = 0; li < grid.size(); ++li) {
        for (std::size_t i = 0; i < grid[li].size(); ++i) {
            const auto& s = grid[li][i];
            const bool numeric = i >= t.label_headers.size();
            if (i) os << "  ";
            if (numeric) os << std::string(width[i] - s.size(), ' ') << s;
            else os << s << std::string(width[i] - s.size(), ' ');
        }
        os << '\n';
        if (li == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            os << std::string(total - 2, '-') << '\n';
        }
    }
    return os.str();
}

/// CSV rendering of the same pivot (values as fractions, empty when missing).
inline std::string render_csv(const ReportTable& t) {
    std::ostringstream os;
    for (std::size_t i = 0; i < t.label_headers.size(); ++i) os << (i ? "," : "") << t.label_headers[i];
    for (const auto& [p, f] : t.columns) os << ",p" << p << "_f" << f;
    if (t.average_column) os << ",average";
    os << '\n';
    char buf[32];
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.labels.size(); ++i) os << (i ? "," : "") << r.labels[i];
        for (const auto& c : r.cells) {
            os << ',';
            if (c) {
                std::snprintf(buf, sizeof buf, "%.6f", *c);
                os << buf;
            }
        }
        if (t.average_column) {
            os << ',';
            if (r.average) {
                std::snprintf(buf, sizeof buf, "%.6f", *r.average);
                os << buf;
            }
        }
        os << '\n';
    }
    return os.str();
}

} // namespace turnformer
