#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "turnformer/data/io.hpp"
#include "turnformer/data/synth.hpp"
#include "turnformer/training/grid.hpp"
#include "turnformer/training/report.hpp"
#include "turnformer/verify/gradient_suite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace turnformer;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInvalid = 2, kNumerical = 3 };

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw FormatError("cannot write " + path.string());
}

std::size_t default_jobs() {
    if (const char* env = std::getenv("TURNFORMER_JOBS")) {
        try {
            auto v = std::stoul(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("TURNFORMER_JOBS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

// ---- synth ----

struct SynthArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
};

int cmd_synth(const SynthArgs& a) {
    json j = a.config.empty() ? json::object() : read_json(a.config);
    if (a.preset) j["preset"] = *a.preset;
    if (a.seed) j["seed"] = *a.seed;
    auto cfg = data::synth_from_json(j);
    auto ds = data::synth_generate(cfg);
    data::save_dataset(ds, a.out);
    write_json(fs::path(a.out) / "effective_config.json", {{"command", "synth"}, {"synth", data::to_json(cfg)}});
    std::printf("wrote %zu conversations to %s\n", ds.conversations.size(), a.out.c_str());
    return kOk;
}

// ---- train / eval ----

struct RunConfig {
    std::string data;
    std::string preset = "3m:T>V|A>V";
    std::string modalities = "T+V+A";
    std::size_t past_s = 4;
    std::size_t future_s = 1;
    bool prior = false;
    std::uint64_t seed = 1;
    json model = json::object();  // overlay onto the default model spec
    TrainConfig train;
    data::SplitFractions fractions;
    std::uint64_t split_seed = 0;
    bool pool_seconds = false;
};

RunConfig run_config_from_json(const json& j) {
    static const std::set<std::string> known{"data",  "model_preset", "modalities",      "past_s",     "future_s",
                                             "prior", "seed",         "model",           "train",      "split_fractions",
                                             "split_seed", "pool_seconds", "command", "model_spec", "results"};
    for (auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("run config: unknown key '" + k + "'");
    RunConfig c;
    try {
        c.data = j.value("data", c.data);
        c.preset = j.value("model_preset", c.preset);
        c.modalities = j.value("modalities", c.modalities);
        c.past_s = j.value("past_s", c.past_s);
        c.future_s = j.value("future_s", c.future_s);
        c.prior = j.value("prior", c.prior);
        c.seed = j.value("seed", c.seed);
        if (j.contains("model")) c.model = j.at("model");
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("split_fractions")) {
            auto f = j.at("split_fractions").get<std::vector<double>>();
            if (f.size() != 3) throw ConfigError("split_fractions needs three values");
            c.fractions = {f[0], f[1], f[2]};
        }
        c.split_seed = j.value("split_seed", c.split_seed);
        c.pool_seconds = j.value("pool_seconds", c.pool_seconds);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

json to_json(const RunConfig& c) {
    return {{"data", c.data},
            {"model_preset", c.preset},
            {"modalities", c.modalities},
            {"past_s", c.past_s},
            {"future_s", c.future_s},
            {"prior", c.prior},
            {"seed", c.seed},
            {"model", c.model},
            {"train", turnformer::to_json(c.train)},
            {"split_fractions", {c.fractions.train, c.fractions.val, c.fractions.test}},
            {"split_seed", c.split_seed},
            {"pool_seconds", c.pool_seconds}};
}

ModelSpec resolve_spec(const RunConfig& c, const data::Dataset& ds) {
    auto base = spec_from_json(c.model);
    auto spec = cell_spec(c.preset, ModalitySet::parse(c.modalities), c.prior, base, ds);
    spec.config.dims.dropout = c.train.dropout;
    return spec;
}

struct Run {
    data::Dataset ds;
    SplitData splits;
    ModelSpec spec;
    data::BatchOptions opt;
};

Run prepare(const RunConfig& c) {
    if (c.data.empty()) throw ConfigError("no dataset given (--data)");
    if (c.past_s == 0 || c.future_s == 0) throw ConfigError("--past and --future must be >= 1");
    Run r{data::load_dataset(c.data), {}, {}, {}};
    r.splits = make_splits(r.ds, c.fractions, c.split_seed);
    r.spec = resolve_spec(c, r.ds);
    r.opt = {r.spec.used_modalities(), c.pool_seconds};
    return r;
}

template <typename T>
json train_typed(const RunConfig& c, Run& r, const fs::path& out) {
    auto model = make_model<T>(r.spec, c.seed);
    TrainConfig tc = c.train;
    tc.seed = c.seed;
    auto train = subsample(window_split(r.splits.train, c.past_s, c.future_s), tc.max_train_samples, c.seed);
    auto val = subsample(window_split(r.splits.val, c.past_s, c.future_s), tc.max_eval_samples, c.seed + 1);
    std::ofstream hist(out / "history.csv");
    hist << "epoch,train_loss,train_accuracy,val_accuracy\n";
    auto result = train_model(*model, train, val, tc, r.opt, [&](const EpochMetrics& m) {
        hist << m.epoch << ',' << m.train_loss << ',' << m.train_accuracy << ',' << m.val_accuracy << '\n';
        std::fprintf(stderr, "epoch %zu loss %.5f val %.4f\n", m.epoch, m.train_loss, m.val_accuracy);
    });
    save_checkpoint(model->parameters(), spec_digest(r.spec), (out / "model.ckpt").string());
    json metrics{{"epochs_run", result.history.size()},
                 {"best_epoch", result.best_epoch},
                 {"stopped_early", result.stopped_early},
                 {"train_samples", train.size()}};
    if (!val.empty()) metrics["val_top1"] = evaluate_accuracy(*model, val, r.opt, tc.eval_batch_size);
    auto test = subsample(window_split(r.splits.test, c.past_s, c.future_s), tc.max_eval_samples, c.seed + 2);
    if (!test.empty()) metrics["test_top1"] = evaluate_accuracy(*model, test, r.opt, tc.eval_batch_size);
    return metrics;
}

int cmd_train(RunConfig c, const std::string& out) {
    c.train.validate();
    auto r = prepare(c);
    const fs::path dir(out);
    fs::create_directories(dir);
    json eff = to_json(c);
    eff["command"] = "train";
    eff["model_spec"] = turnformer::to_json(r.spec);
    write_json(dir / "effective_config.json", eff);
    auto metrics = c.train.precision == Precision::kFloat64 ? train_typed<double>(c, r, dir) : train_typed<float>(c, r, dir);
    write_json(dir / "metrics.json", metrics);
    std::printf("%s\n", metrics.dump().c_str());
    return kOk;
}

template <typename T>
double eval_typed(const RunConfig& c, const Run& r, const fs::path& run, const std::string& split) {
    auto model = make_model<T>(r.spec, c.seed);
    load_checkpoint(model->parameters(), spec_digest(r.spec), (run / "model.ckpt").string());
    auto samples = subsample(window_split(r.splits[split], c.past_s, c.future_s), c.train.max_eval_samples,
                             c.seed + (split == "val" ? 1 : split == "test" ? 2 : 0));
    if (samples.empty()) throw ConfigError("split '" + split + "' has no samples");
    return evaluate_accuracy(*model, samples, r.opt, c.train.eval_batch_size);
}

int cmd_eval(const std::string& run_dir, const std::string& split, const std::string& data_override) {
    const fs::path run(run_dir);
    if (!fs::is_directory(run)) throw ConfigError("run directory not found: " + run_dir);
    auto c = run_config_from_json(read_json((run / "effective_config.json").string()));
    if (!data_override.empty()) c.data = data_override;
    auto r = prepare(c);
    const double acc = c.train.precision == Precision::kFloat64 ? eval_typed<double>(c, r, run, split)
                                                                : eval_typed<float>(c, r, run, split);
    write_json(run / ("eval_" + split + ".json"), {{"split", split}, {"top1", acc}, {"data", c.data}});
    std::printf("%s top1 %.6f\n", split.c_str(), acc);
    return kOk;
}

// ---- grid ----

fs::path sibling(const fs::path& csv, const std::string& suffix) {
    return csv.parent_path() / (csv.stem().string() + suffix);
}

int cmd_grid(const std::string& spec_path, const std::string& out, std::string data, std::optional<std::size_t> jobs) {
    const auto j = read_json(spec_path);
    auto g = grid_from_json(j);
    if (data.empty()) data = j.value("data", std::string());
    if (data.empty()) throw ConfigError("no dataset given (--data or \"data\" in the grid spec)");
    const std::size_t n_jobs = jobs ? *jobs : default_jobs();
    if (n_jobs == 0) throw ConfigError("--jobs must be >= 1");
    auto ds = data::load_dataset(data);
    const fs::path csv(out);
    auto eff = turnformer::to_json(g);
    eff["command"] = "grid";
    eff["data"] = data;
    eff["jobs"] = n_jobs;
    expand_grid(g, ds);
    write_json(sibling(csv, ".config.json"), eff);
    GridOptions opt;
    opt.jobs = n_jobs;
    opt.progress = [](std::size_t done, std::size_t total, const GridCell& c) {
        std::fprintf(stderr, "[%zu/%zu] %s %s prior=%d past=%zu future=%zu seed=%llu\n", done, total, c.model.c_str(),
                     c.modalities.label().c_str(), int(c.prior), c.past_s, c.future_s,
                     static_cast<unsigned long long>(c.seed));
    };
    auto rows = run_grid(g, ds, csv, opt);
    std::ofstream(sibling(csv, ".table2.txt")) << render(table2(rows, g.splits.back()));
    std::printf("wrote %zu rows to %s\n", rows.size(), out.c_str());
    return kOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const std::string& module) {
    std::vector<verify::SuiteModule> mods;
    if (module == "all") mods = {verify::SuiteModule::kNumerics, verify::SuiteModule::kBlocks, verify::SuiteModule::kModels};
    else if (module == "numerics") mods = {verify::SuiteModule::kNumerics};
    else if (module == "blocks") mods = {verify::SuiteModule::kBlocks};
    else if (module == "models") mods = {verify::SuiteModule::kModels};
    else throw ConfigError("unknown module '" + module + "' (all, numerics, blocks, models)");
    std::size_t failed = 0, total = 0;
    double worst = 0;
    for (auto m : mods)
        for (const auto& r : verify::run_suite(m)) {
            ++total;
            failed += !r.passed;
            worst = std::max(worst, r.max_rel_error);
            std::printf("%-4s %-8s %-28s max_rel_err %.3e coords %zu%s%s\n", r.passed ? "PASS" : "FAIL",
                        verify::module_name(m).c_str(), r.name.c_str(), r.max_rel_error, r.coords_checked,
                        r.passed ? "" : " worst ", r.passed ? "" : r.worst_location.c_str());
        }
    std::printf("%zu/%zu checks passed, max relative error %.3e\n", total - failed, total, worst);
    return failed ? kNumerical : kOk;
}

// ---- report ----

int cmd_report(const std::string& in, const std::string& style, const std::string& split, const std::string& format,
               const std::string& out) {
    auto rows = read_results(in);
    ReportTable t;
    if (style == "table2") t = table2(rows, split);
    else if (style == "table1") t = table1(rows, split);
    else throw ConfigError("unknown style '" + style + "' (table1, table2)");
    if (t.rows.empty()) throw ConfigError(in + ": no rows for split '" + split + "'");
    std::string text;
    if (format == "text") text = render(t);
    else if (format == "csv") text = render_csv(t);
    else throw ConfigError("unknown format '" + format + "' (text, csv)");
    if (out.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        std::ofstream f(out);
        f << text;
        if (!f) throw FormatError("cannot write " + out);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"turnformer: multimodal transformer turn-taking models"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
    s->add_option("--config", synth.config, "synthetic config (JSON)");
    s->add_option("--out", synth.out, "output dataset directory")->required();
    s->add_option("--seed", synth.seed, "override the config seed");
    s->add_option("--preset", synth.preset, "desk | egocom");

    std::string train_config, train_out;
    std::optional<std::string> t_data, t_model, t_modalities, t_precision;
    std::optional<std::size_t> t_past, t_future, t_epochs, t_batch, t_max_train, t_max_eval, t_d, t_heads, t_layers,
        t_dff, t_lout, t_patience;
    std::optional<std::uint64_t> t_seed, t_split_seed;
    std::optional<double> t_lr, t_wd, t_dropout;
    bool t_prior = false, t_no_prior = false, t_pool = false;
    auto* t = app.add_subcommand("train", "train one model");
    t->add_option("--config", train_config, "run config (JSON); flags override its values");
    t->add_option("--data", t_data, "dataset directory");
    t->add_option("--model", t_model, "model preset");
    t->add_option("--modalities", t_modalities, "baseline modality set, e.g. T+V");
    t->add_option("--past", t_past, "past seconds");
    t->add_option("--future", t_future, "future seconds");
    t->add_flag("--prior", t_prior, "condition on the current speaker");
    t->add_flag("--no-prior", t_no_prior, "likelihood model");
    t->add_option("--seed", t_seed);
    t->add_option("--out", train_out, "run directory")->required();
    t->add_option("--epochs", t_epochs);
    t->add_option("--batch-size", t_batch);
    t->add_option("--lr", t_lr);
    t->add_option("--weight-decay", t_wd);
    t->add_option("--dropout", t_dropout);
    t->add_option("--patience", t_patience);
    t->add_option("--precision", t_precision, "f32 | f64");
    t->add_option("--max-train-samples", t_max_train);
    t->add_option("--max-eval-samples", t_max_eval);
    t->add_option("--d-model", t_d);
    t->add_option("--heads", t_heads);
    t->add_option("--layers", t_layers);
    t->add_option("--d-ff", t_dff);
    t->add_option("--l-out", t_lout);
    t->add_option("--split-seed", t_split_seed);
    t->add_flag("--pool-seconds", t_pool, "average the windows of each past second");

    std::string e_run, e_split = "test", e_data;
    auto* e = app.add_subcommand("eval", "evaluate a trained run");
    e->add_option("--run", e_run, "run directory written by train")->required();
    e->add_option("--split", e_split, "train | val | test");
    e->add_option("--data", e_data, "evaluate on another dataset directory");

    std::string g_spec, g_out, g_data;
    std::optional<std::size_t> g_jobs;
    auto* g = app.add_subcommand("grid", "run a model x modality x prior x past x future grid");
    g->add_option("--spec", g_spec, "grid spec (JSON)")->required();
    g->add_option("--out", g_out, "results CSV")->required();
    g->add_option("--data", g_data, "dataset directory (overrides the spec)");
    g->add_option("--jobs", g_jobs, "parallel cells (default $TURNFORMER_JOBS or 1)");

    std::string gc_module = "all";
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--module", gc_module, "all | numerics | blocks | models");

    std::string r_in, r_style = "table2", r_split = "test", r_format = "text", r_out;
    auto* r = app.add_subcommand("report", "pivot a results CSV into a table");
    r->add_option("--in", r_in, "results CSV")->required();
    r->add_option("--style", r_style, "table1 | table2");
    r->add_option("--split", r_split, "which split's rows to use");
    r->add_option("--format", r_format, "text | csv");
    r->add_option("--out", r_out, "write to a file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        std::cerr << app.help();
        return kUsage;
    }

    try {
        if (*s) return cmd_synth(synth);
        if (*t) {
            if (t_prior && t_no_prior) throw CLI::ValidationError("--prior and --no-prior are exclusive");
            auto c = run_config_from_json(train_config.empty() ? json::object() : read_json(train_config));
            if (t_data) c.data = *t_data;
            if (t_model) c.preset = *t_model;
            if (t_modalities) c.modalities = *t_modalities;
            if (t_past) c.past_s = *t_past;
            if (t_future) c.future_s = *t_future;
            if (t_prior) c.prior = true;
            if (t_no_prior) c.prior = false;
            if (t_seed) c.seed = *t_seed;
            if (t_epochs) c.train.epochs = *t_epochs;
            if (t_batch) c.train.batch_size = *t_batch;
            if (t_lr) c.train.lr = *t_lr;
            if (t_wd) c.train.weight_decay = *t_wd;
            if (t_dropout) c.train.dropout = *t_dropout;
            if (t_patience) c.train.patience = *t_patience;
            if (t_precision) c.train.precision = precision_from_name(*t_precision);
            if (t_max_train) c.train.max_train_samples = *t_max_train;
            if (t_max_eval) c.train.max_eval_samples = *t_max_eval;
            if (t_d) c.model["dims"]["d_model"] = *t_d;
            if (t_heads) c.model["dims"]["n_heads"] = *t_heads;
            if (t_layers) c.model["dims"]["n_layers"] = *t_layers;
            if (t_dff) c.model["dims"]["d_ff"] = *t_dff;
            if (t_lout) c.model["l_out"] = *t_lout;
            if (t_split_seed) c.split_seed = *t_split_seed;
            if (t_pool) c.pool_seconds = true;
            return cmd_train(c, train_out);
        }
        if (*e) return cmd_eval(e_run, e_split, e_data);
        if (*g) return cmd_grid(g_spec, g_out, g_data, g_jobs);
        if (*gc) return cmd_gradcheck(gc_module);
        if (*r) return cmd_report(r_in, r_style, r_split, r_format, r_out);
    } catch (const CLI::ValidationError& ex) {
        std::cerr << "error: " << ex.what() << '\n' << app.help();
        return kUsage;
    } catch (const NumericalError& ex) {
        std::cerr << "numerical error: " << ex.what() << '\n';
        return kNumerical;
    } catch (const std::invalid_argument& ex) {  // ConfigError, DimensionError
        std::cerr << "error: " << ex.what() << '\n';
        return kInvalid;
    } catch (const FormatError& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return kInvalid;
    } catch (const ContractError& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return kInvalid;
    } catch (const fs::filesystem_error& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return kInvalid;
    }
    return kUsage;
}
