#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnformer/data/split.hpp"
#include "turnformer/models/presets.hpp"
#include "turnformer/training/results.hpp"
#include "turnformer/training/trainer.hpp"

namespace turnformer {

/// A past x future x modalities x prior x model sweep. 3M presets read the
/// modalities their streams name; the `modalities` list applies to baselines.
struct GridSpec {
    std::vector<std::string> models{"3m:T>V|A>V"};
    std::vector<std::string> modalities{"T+V+A"};
    std::vector<bool> prior{false};
    std::vector<std::size_t> past_s{4};
    std::vector<std::size_t> future_s{1};
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::string> splits{"test"};
    ModelSpec model;
    TrainConfig train;
    data::SplitFractions fractions;
    std::uint64_t split_seed = 0;
    bool pool_seconds = false;
};

struct GridCell {
    std::string model;
    ModalitySet modalities;
    bool prior = false;
    std::size_t past_s = 0;
    std::size_t future_s = 0;
    std::uint64_t seed = 0;
    ModelSpec spec;
};

inline GridSpec grid_from_json(const nlohmann::json& j, GridSpec g = {}) {
    static const std::set<std::string> known{"models", "modalities", "prior",     "past_s",     "future_s",
                                             "seeds",  "splits",     "model",     "train",      "split_fractions",
                                             "split_seed", "pool_seconds", "description", "data"};
    for (auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("grid spec: unknown key '" + k + "'");
    try {
        if (j.contains("models")) g.models = j.at("models").get<std::vector<std::string>>();
        if (j.contains("modalities")) g.modalities = j.at("modalities").get<std::vector<std::string>>();
        if (j.contains("prior")) g.prior = j.at("prior").get<std::vector<bool>>();
        if (j.contains("past_s")) g.past_s = j.at("past_s").get<std::vector<std::size_t>>();
        if (j.contains("future_s")) g.future_s = j.at("future_s").get<std::vector<std::size_t>>();
        if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("splits")) g.splits = j.at("splits").get<std::vector<std::string>>();
        if (j.contains("model")) g.model = spec_from_json(j.at("model"), g.model);
        if (j.contains("train")) g.train = train_config_from_json(j.at("train"), g.train);
        if (j.contains("split_fractions")) {
            auto f = j.at("split_fractions").get<std::vector<double>>();
            if (f.size() != 3) throw ConfigError("grid spec: split_fractions needs three values");
            g.fractions = {f[0], f[1], f[2]};
        }
        if (j.contains("split_seed")) g.split_seed = j.at("split_seed").get<std::uint64_t>();
        if (j.contains("pool_seconds")) g.pool_seconds = j.at("pool_seconds").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid spec: ") + e.what());
    }
    return g;
}

inline nlohmann::json to_json(const GridSpec& g) {
    return {{"models", g.models},
            {"modalities", g.modalities},
            {"prior", g.prior},
            {"past_s", g.past_s},
            {"future_s", g.future_s},
            {"seeds", g.seeds},
            {"splits", g.splits},
            {"model", to_json(g.model)},
            {"train", to_json(g.train)},
            {"split_fractions", {g.fractions.train, g.fractions.val, g.fractions.test}},
            {"split_seed", g.split_seed},
            {"pool_seconds", g.pool_seconds}};
}

/// Conversations of a dataset divided into train/val/test.
struct SplitData {
    std::vector<const data::ConversationStreams*> train, val, test;

    const std::vector<const data::ConversationStreams*>& operator[](const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw ConfigError("unknown split '" + name + "' (train, val, test)");
    }
};

inline SplitData make_splits(const data::Dataset& ds, const data::SplitFractions& f, std::uint64_t seed) {
    auto s = data::split_dataset(ds.conversations.size(), f, seed);
    SplitData out;
    for (auto i : s.train) out.train.push_back(&ds.conversations[i]);
    for (auto i : s.val) out.val.push_back(&ds.conversations[i]);
    for (auto i : s.test) out.test.push_back(&ds.conversations[i]);
    return out;
}

inline std::vector<data::Sample> window_split(const std::vector<const data::ConversationStreams*>& convs,
                                              std::size_t past_s, std::size_t future_s) {
    std::vector<data::Sample> out;
    for (const auto* c : convs) {
        auto s = data::window_dataset(*c, past_s, future_s);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

/// Model spec for one preset on a dataset: raw widths and class count come
/// from the data.
inline ModelSpec cell_spec(const std::string& preset, ModalitySet modalities, bool prior, const ModelSpec& base,
                           const data::Dataset& ds) {
    ModelSpec s = base;
    s.raw_dims = ds.dims;
    s.config.n_classes = ds.n_classes;
    s.config.use_prior = prior;
    s.modalities = modalities;
    s = apply_preset(preset, s);
    s.validate();
    const auto have = ds.modalities();
    for (auto m : s.used_modalities().members())
        if (!have.contains(m))
            throw ConfigError("preset " + preset + " needs modality " + modality_name(m) +
                              " which the dataset does not provide");
    return s;
}

/// Enumerates and validates every cell before anything is trained.
inline std::vector<GridCell> expand_grid(const GridSpec& g, const data::Dataset& ds) {
    if (g.models.empty() || g.prior.empty() || g.past_s.empty() || g.future_s.empty() || g.seeds.empty() ||
        g.splits.empty())
        throw ConfigError("grid spec: every axis needs at least one value");
    for (const auto& s : g.splits)
        if (s != "train" && s != "val" && s != "test") throw ConfigError("grid spec: unknown split '" + s + "'");
    g.train.validate();
    std::size_t longest = 0;
    for (const auto& c : ds.conversations) longest = std::max(longest, c.duration_s());
    for (auto p : g.past_s)
        for (auto f : g.future_s) {
            if (p == 0 || f == 0) throw ConfigError("grid spec: past_s and future_s must be >= 1");
            if (p + f > longest)
                throw ConfigError("grid spec: past " + std::to_string(p) + "s + future " + std::to_string(f) +
                                  "s exceeds the longest conversation (" + std::to_string(longest) + "s)");
        }
    std::vector<GridCell> cells;
    for (const auto& model : g.models) {
        std::vector<ModalitySet> sets;
        if (is_three_m_preset(model)) {
            sets.push_back(ModalitySet::all());
        } else {
            if (g.modalities.empty()) throw ConfigError("grid spec: baseline " + model + " needs a modalities list");
            for (const auto& m : g.modalities) sets.push_back(ModalitySet::parse(m));
        }
        for (auto ms : sets)
            for (bool prior : g.prior) {
                auto spec = cell_spec(model, ms, prior, g.model, ds);
                for (auto p : g.past_s)
                    for (auto f : g.future_s)
                        for (auto seed : g.seeds)
                            cells.push_back({model, spec.modalities, prior, p, f, seed, spec});
            }
    }
    return cells;
}

template <typename T>
std::vector<ResultRow> run_cell_typed(const GridCell& cell, const GridSpec& g, const SplitData& splits) {
    TrainConfig tc = g.train;
    tc.seed = cell.seed;
    ModelSpec spec = cell.spec;
    spec.config.dims.dropout = tc.dropout;
    auto model = make_model<T>(spec, cell.seed);
    data::BatchOptions opt{spec.used_modalities(), g.pool_seconds};
    auto train = subsample(window_split(splits.train, cell.past_s, cell.future_s), tc.max_train_samples, cell.seed);
    auto val = subsample(window_split(splits.val, cell.past_s, cell.future_s), tc.max_eval_samples, cell.seed + 1);
    if (train.empty())
        throw ConfigError("cell " + cell.model + " past " + std::to_string(cell.past_s) + " future " +
                          std::to_string(cell.future_s) + ": no training samples");
    train_model(*model, train, val, tc, opt);
    std::vector<ResultRow> rows;
    for (const auto& split : g.splits) {
        const auto& convs = splits[split];
        auto samples = split == "train" ? train
                     : split == "val"   ? val
                                        : subsample(window_split(convs, cell.past_s, cell.future_s),
                                                    tc.max_eval_samples, cell.seed + 2);
        if (samples.empty())
            throw ConfigError("cell " + cell.model + ": split '" + split + "' has no samples for past " +
                              std::to_string(cell.past_s) + "s future " + std::to_string(cell.future_s) + "s");
        rows.push_back({cell.model, cell.modalities.label(), cell.prior, cell.past_s, cell.future_s, cell.seed, split,
                        evaluate_accuracy(*model, samples, opt, tc.eval_batch_size)});
    }
    return rows;
}

inline std::vector<ResultRow> run_cell(const GridCell& cell, const GridSpec& g, const SplitData& splits) {
    return g.train.precision == Precision::kFloat64 ? run_cell_typed<double>(cell, g, splits)
                                                    : run_cell_typed<float>(cell, g, splits);
}

struct GridOptions {
    std::size_t jobs = 1;
    /// Called after each finished cell with (done, total, cell).
    std::function<void(std::size_t, std::size_t, const GridCell&)> progress;
};

/// Trains and evaluates every cell with fresh parameters. Rows are appended
/// to `out_csv` as cells finish and the file is rewritten in grid order at
/// the end. Cells are independent, so results do not depend on `jobs`.
inline std::vector<ResultRow> run_grid(const GridSpec& g, const data::Dataset& ds, const std::filesystem::path& out_csv,
                                       const GridOptions& opt = {}) {
    ds.validate();
    const auto cells = expand_grid(g, ds);
    const auto splits = make_splits(ds, g.fractions, g.split_seed);
    for (const auto& s : g.splits)
        if (splits[s].empty()) throw ConfigError("grid spec: split '" + s + "' has no conversations");
    if (splits.train.empty()) throw ConfigError("grid spec: training split has no conversations");

    if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
    std::ofstream append(out_csv);
    if (!append) throw FormatError("cannot write " + out_csv.string());
    append << kResultsHeader << '\n' << std::flush;

    std::vector<std::vector<ResultRow>> results(cells.size());
    std::atomic<std::size_t> next{0}, done{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        while (!failed) {
            const std::size_t i = next++;
            if (i >= cells.size()) return;
            try {
                auto rows = run_cell(cells[i], g, splits);
                std::lock_guard lock(mu);
                for (const auto& r : rows) append << to_csv_line(r) << '\n';
                append.flush();
                results[i] = std::move(rows);
                const auto d = ++done;
                if (opt.progress) opt.progress(d, cells.size(), cells[i]);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, cells.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    append.close();
    if (error) std::rethrow_exception(error);
    std::vector<ResultRow> all;
    for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
    write_results(out_csv, all);
    return all;
}

} // namespace turnformer
