// Acceptance runner: one PASS/FAIL line per criterion. Optional arguments
// select criteria by id, e.g. `acceptance AC-3 AC-7`.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "turnformer/data/bayes.hpp"
#include "turnformer/data/synth.hpp"
#include "turnformer/training/grid.hpp"
#include "turnformer/verify/gradient_suite.hpp"
#include "../unit/param_oracle.hpp"

namespace fs = std::filesystem;
using namespace turnformer;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string id;
    std::string title;
    double limit_s;
    std::function<Verdict()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- AC-1 ----

Verdict gradient_suite() {
    std::size_t total = 0, failed = 0;
    double worst = 0;
    std::string worst_name, failures;
    for (auto m : {verify::SuiteModule::kNumerics, verify::SuiteModule::kBlocks, verify::SuiteModule::kModels})
        for (const auto& r : verify::run_suite(m)) {
            ++total;
            if (!r.passed) {
                ++failed;
                failures += " " + r.name;
            }
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                worst_name = r.name;
            }
        }
    return {failed == 0 && total > 0,
            fmt("%zu/%zu checks, max rel err %.2e (%s), tol 1e-4%s", total - failed, total, worst, worst_name.c_str(),
                failures.empty() ? "" : (" failed:" + failures).c_str())};
}

// ---- AC-2 ----

// softmax(Q K^T / sqrt(dk)) V written out for one head.
std::vector<double> attention_formula(const std::vector<double>& q, const std::vector<double>& k,
                                      const std::vector<double>& v, std::size_t n, std::size_t m, std::size_t dk,
                                      std::size_t dv) {
    std::vector<double> out(n * dv, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(m);
        double mx = -1e300;
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < dk; ++c) dot += q[i * dk + c] * k[j * dk + c];
            s[j] = dot / std::sqrt(double(dk));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += s[j] / z * v[j * dv + c];
    }
    return out;
}

Verdict attention_oracles() {
    std::mt19937_64 g(2024);
    std::uniform_int_distribution<std::size_t> size(1, 7);
    std::uniform_real_distribution<double> val(-2, 2);
    auto fill = [&](std::size_t n) {
        std::vector<double> x(n);
        for (auto& e : x) e = val(g);
        return x;
    };
    double formula_err = 0, perm_err = 0;
    bool single_exact = true;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = size(g), m = size(g), dk = size(g), dv = size(g);
        auto q = fill(n * dk), k = fill(m * dk), v = fill(m * dv);
        auto got = nn::scaled_dot_attention(Tensor<double>::from({1, n, dk}, q), Tensor<double>::from({1, m, dk}, k),
                                            Tensor<double>::from({1, m, dv}, v))
                       .to_vector();
        auto want = attention_formula(q, k, v, n, m, dk, dv);
        for (std::size_t i = 0; i < want.size(); ++i) formula_err = std::max(formula_err, std::abs(got[i] - want[i]));

        std::vector<std::size_t> perm(m);
        for (std::size_t j = 0; j < m; ++j) perm[j] = j;
        std::shuffle(perm.begin(), perm.end(), g);
        std::vector<double> kp(m * dk), vp(m * dv);
        for (std::size_t j = 0; j < m; ++j) {
            std::copy_n(&k[perm[j] * dk], dk, &kp[j * dk]);
            std::copy_n(&v[perm[j] * dv], dv, &vp[j * dv]);
        }
        auto permuted = nn::scaled_dot_attention(Tensor<double>::from({1, n, dk}, q),
                                                 Tensor<double>::from({1, m, dk}, kp),
                                                 Tensor<double>::from({1, m, dv}, vp))
                            .to_vector();
        for (std::size_t i = 0; i < got.size(); ++i) perm_err = std::max(perm_err, std::abs(got[i] - permuted[i]));

        auto k1 = fill(dk), v1 = fill(dv);
        auto one = nn::scaled_dot_attention(Tensor<double>::from({1, n, dk}, q), Tensor<double>::from({1, 1, dk}, k1),
                                            Tensor<double>::from({1, 1, dv}, v1))
                       .to_vector();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dv; ++c) single_exact = single_exact && one[i * dv + c] == v1[c];
    }
    return {formula_err <= 1e-6 && perm_err <= 1e-6 && single_exact,
            fmt("100 instances: formula err %.2e, permutation err %.2e (tol 1e-6), single key exact: %s", formula_err,
                perm_err, single_exact ? "yes" : "no")};
}

// ---- AC-3 ----

Verdict overfit() {
    data::SynthConfig sc;
    sc.windows_per_second = 4;
    sc.duration_s = 36;  // 36 - 4 past seconds = 32 anchors
    sc.n_conversations = 1;
    sc.seed = 3;
    auto ds = data::synth_generate(sc);
    auto samples = data::window_dataset(ds.conversations[0], 4, 1);
    ModelSpec spec;
    spec.config.dims = {32, 4, 64, 2, 0.0};
    spec.config.l_out = 4;
    spec.config.n_classes = ds.n_classes;
    spec.raw_dims = ds.dims;
    spec = apply_preset("3m:T>V|A>V", spec);
    auto model = make_model<float>(spec, 1);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 300;
    tc.batch_size = 32;
    tc.dropout = 0.0;
    tc.track_train_accuracy = true;
    tc.target_train_accuracy = 1.0;
    auto r = train_model(*model, samples, {}, tc, {});
    const double acc = evaluate_accuracy(*model, samples, {});
    return {samples.size() == 32 && acc == 1.0,
            fmt("%zu samples, train top-1 %.4f after %zu epochs (limit 300)", samples.size(), acc, r.history.size())};
}

// ---- AC-4 / AC-5 shared ----

struct StudyResult {
    std::vector<double> test;  // per seed
    double mean = 0;
    double majority = 0;
    double repeat_prior = 0;  // test accuracy of predicting the current speaker
};

/// Trains `preset` on a fixed dataset with several model seeds and reports
/// test top-1 per seed plus the majority-class baseline.
StudyResult study(const data::Dataset& ds, const std::string& preset, bool prior, std::size_t past, std::size_t future,
                  const ModelSpec& base, const TrainConfig& tc, const std::vector<std::uint64_t>& seeds) {
    auto splits = make_splits(ds, {}, 0);
    auto train = window_split(splits.train, past, future);
    auto val = window_split(splits.val, past, future);
    auto test = window_split(splits.test, past, future);
    auto spec = cell_spec(preset, ModalitySet::all(), prior, base, ds);
    spec.config.dims.dropout = tc.dropout;
    StudyResult out;
    for (auto seed : seeds) {
        auto cfg = tc;
        cfg.seed = seed;
        auto model = make_model<float>(spec, seed);
        train_model(*model, train, val, cfg, {spec.used_modalities(), false});
        out.test.push_back(evaluate_accuracy(*model, test, {spec.used_modalities(), false}));
    }
    for (double t : out.test) out.mean += t / double(out.test.size());
    std::vector<int> tr, te;
    for (const auto& s : train) tr.push_back(s.target);
    for (const auto& s : test) te.push_back(s.target);
    out.majority = majority_class_accuracy(tr, te, ds.n_classes);
    for (const auto& s : test) out.repeat_prior += double(s.prior == s.target) / double(test.size());
    return out;
}

std::string per_seed(const StudyResult& r) {
    std::string s;
    for (double t : r.test) s += fmt("%s%.3f", s.empty() ? "" : "/", t);
    return s;
}

ModelSpec tiny_3m_base() {
    ModelSpec s;
    s.config.dims = {32, 4, 64, 2, 0.1};
    s.config.l_out = 4;
    return s;
}

TrainConfig study_train() {
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 32;
    tc.epochs = 12;
    tc.patience = 4;
    tc.dropout = 0.1;
    return tc;
}

// ---- AC-4 ----

Verdict cross_modal() {
    data::SynthConfig sc;
    sc.p_stay = 0.85;
    sc.cue = data::CueConfig{Modality::kVideo, 2, 2.0};
    sc.duration_s = 60;
    sc.seed = 41;
    auto ds = data::synth_generate(sc);
    const std::size_t past = 4, future = 1;
    const double bayes = data::bayes_oracle(sc, past, future, true);
    const double bayes_no_cue =
        data::bayes_oracle(sc, past, future, true, ModalitySet::parse("T+A"));
    auto r = study(ds, "3m:T>V|A>V", true, past, future, tiny_3m_base(), study_train(), {1, 2, 3});
    const bool ok = r.mean >= 0.90 && r.mean - r.majority >= 0.30 && r.mean <= bayes + 0.02;
    return {ok, fmt("test top-1 %.4f (seeds %s) >= 0.90; majority %.4f (+%.1f pts, need 30); bayes %.4f, "
                    "bayes without V %.4f",
                    r.mean, per_seed(r).c_str(), r.majority, 100 * (r.mean - r.majority), bayes, bayes_no_cue)};
}

// ---- AC-5 ----

Verdict prior_advantage() {
    data::SynthConfig sc;
    sc.p_stay = 0.9;
    sc.signature_scale = 0.0;
    sc.duration_s = 150;
    sc.seed = 51;
    auto ds = data::synth_generate(sc);
    const std::size_t past = 4, future = 1;
    const double bayes_post = data::bayes_oracle(sc, past, future, true);
    const double bayes_like = data::bayes_oracle(sc, past, future, false);
    auto tc = study_train();
    auto post = study(ds, "3m:T>V|A>V", true, past, future, tiny_3m_base(), tc, {1, 2, 3});
    auto like = study(ds, "3m:T>V|A>V", false, past, future, tiny_3m_base(), tc, {1, 2, 3});
    const bool ok = post.mean - like.mean >= 0.10 && std::abs(post.mean - bayes_post) <= 0.03;
    return {ok, fmt("posterior %.4f (seeds %s), likelihood %.4f (seeds %s), gap %.1f pts (need 10); "
                    "bayes posterior %.4f (within 3 pts), bayes likelihood %.4f; test stay rate %.4f",
                    post.mean, per_seed(post).c_str(), like.mean, per_seed(like).c_str(),
                    100 * (post.mean - like.mean), bayes_post, bayes_like, post.repeat_prior)};
}

// ---- AC-6 ----

Verdict ablations() {
    ModelSpec base;
    base.config.dims = {8, 2, 16, 1, 0.1};
    base.config.l_out = 3;
    base.raw_dims = {6, 3, 5};
    std::mt19937_64 g(6);
    std::size_t ok = 0;
    std::string bad;
    for (const auto& p : ablation_presets()) {
        try {
            auto spec = apply_preset(p.name, base);
            auto model = make_model<float>(spec, 7);
            Batch<float> batch;
            for (auto m : kAllModalities) batch.tokens[index_of(m)] = random_tensor<float>({3, 8, spec.raw_dim(m)}, g);
            batch.prior = {0, 1, 2};
            batch.target = {3, 2, 1};
            Tape<float> tape;
            auto scope = tape.activate();
            Rng drop(8);
            auto loss = nll_loss(model->log_probs(batch, nn::ForwardContext::train(0.1, drop)), batch.target);
            tape.backward(loss);
            bool finite = std::isfinite(loss.item());
            for (const auto& e : model->parameters().entries()) {
                finite = finite && e.tensor.has_grad();
                if (e.tensor.has_grad())
                    for (auto v : e.tensor.grad()) finite = finite && std::isfinite(v);
            }
            if (finite && model->parameters().count() == oracle::expected_count(spec)) ++ok;
            else bad += " " + p.name;
        } catch (const std::exception& e) {
            bad += " " + p.name + "(" + e.what() + ")";
        }
    }
    auto soft_spec = apply_preset("3m:T>V|A>V", base), cat_spec = apply_preset("3m-concat:T>V|A>V", base);
    const auto soft = make_model<float>(soft_spec, 1)->parameters().count();
    const auto cat = make_model<float>(cat_spec, 1)->parameters().count();
    const auto want = oracle::expected_count(cat_spec) - oracle::expected_count(soft_spec);
    const bool fusion_ok = cat - soft == want && want > 0;
    return {ok == 15 && fusion_ok,
            fmt("%zu/15 presets forward+backward with oracle counts%s; concat-soft = %zu (oracle %zu)", ok,
                bad.empty() ? "" : (", failing:" + bad).c_str(), cat - soft, want)};
}

// ---- AC-7 ----

Verdict parameter_count() {
    const nn::ModelDims dims{512, 8, 2048, 1, 0.1};
    ParameterStore<float> ps;
    Rng rng(1);
    nn::EncoderLayer<float> layer(ps, "layer", dims, rng);
    const auto oracle_count = oracle::Counts{512, 2048, 4}.enc_layer();
    return {ps.count() == 3152384 && oracle_count == 3152384,
            fmt("encoder layer at 512/8/2048: %zu parameters (oracle %zu, expected 3,152,384)", ps.count(),
                oracle_count)};
}

// ---- AC-8 ----

struct Outcome {
    int code = -1;
    std::string output;
};

Outcome shell(const std::string& cmd) {
    Outcome o;
    FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
    if (!p) return o;
    std::array<char, 4096> buf;
    while (std::fgets(buf.data(), int(buf.size()), p)) o.output += buf.data();
    const int st = ::pclose(p);
    o.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return o;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

Verdict table_structure() {
    const std::string cli = TURNFORMER_CLI;
    const fs::path dir = fs::current_path() / "acceptance_table2";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "synth.json") << R"({"preset": "egocom", "n_conversations": 7, "duration_s": 42, "seed": 8})";
    std::ofstream(dir / "grid.json") << R"({
  "models": ["eft", "lft", "mlp", "3m:T>V|A>V"],
  "modalities": ["T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"],
  "prior": [false, true],
  "past_s": [4, 5, 10, 30],
  "future_s": [1, 3, 5, 10],
  "seeds": [1],
  "splits": ["test"],
  "model": {"dims": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16}, "l_out": 2, "mlp_hidden": 8},
  "train": {"epochs": 1, "batch_size": 8, "lr": 0.001, "max_train_samples": 8, "max_eval_samples": 8},
  "pool_seconds": true
})";
    const auto data = dir / "data";
    auto o = shell("'" + cli + "' synth --config '" + (dir / "synth.json").string() + "' --out '" + data.string() + "'");
    if (o.code != 0) return {false, "synth failed: " + o.output};
    auto manifest = nlohmann::json::parse(std::ifstream(data / "manifest.json"));
    const bool egocom_dims = manifest["windows_per_second"] == 12 && manifest["n_classes"] == 4 &&
                             manifest["modality_dims"]["text"] == 300 && manifest["modality_dims"]["audio"] == 64 &&
                             manifest["modality_dims"]["video"] == 2048;
    const auto csv = dir / "results.csv";
    o = shell("'" + cli + "' grid --spec '" + (dir / "grid.json").string() + "' --data '" + data.string() + "' --out '" +
              csv.string() + "'");
    if (o.code != 0) return {false, "grid failed: " + o.output.substr(0, 400)};
    o = shell("'" + cli + "' report --in '" + csv.string() + "' --style table2 --format csv");
    if (o.code != 0) return {false, "report failed: " + o.output};

    std::stringstream ss(o.output);
    std::string line;
    std::getline(ss, line);
    auto header = split_csv(line);
    std::vector<std::string> want_header{"Prior", "Modalities", "Model"};
    for (int p : {4, 5, 10, 30})
        for (int f : {1, 3, 5, 10}) want_header.push_back(fmt("p%d_f%d", p, f));
    std::vector<std::string> want_rows;
    for (const char* prior : {"False", "True"})
        for (const char* mods : {"T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"}) {
            std::vector<std::string> models{"LFT", "EFT", "MLP"};
            if (std::string(mods).size() == 1) models = {"EFT/LFT", "MLP"};
            if (std::string(mods) == "T+V+A") models.push_back("Our");
            for (const auto& m : models) want_rows.push_back(std::string(prior) + "," + mods + "," + m);
        }
    std::size_t rows = 0, label_mismatch = 0, bad_cells = 0;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != want_header.size()) {
            ++bad_cells;
            ++rows;
            continue;
        }
        if (rows >= want_rows.size() || cells[0] + "," + cells[1] + "," + cells[2] != want_rows[rows]) ++label_mismatch;
        for (std::size_t i = 3; i < cells.size(); ++i) {
            try {
                const double v = std::stod(cells[i]);
                if (!(v >= 0 && v <= 1)) ++bad_cells;
            } catch (const std::exception&) {
                ++bad_cells;
            }
        }
        ++rows;
    }
    const bool ok = egocom_dims && header == want_header && rows == 38 && label_mismatch == 0 && bad_cells == 0;
    return {ok, fmt("EgoCom-shaped data (2048/64/300, w=12, 4 classes): %s; %zu columns (16 past x future), %zu rows "
                    "(expect 38), %zu label mismatches, %zu bad cells",
                    egocom_dims ? "yes" : "no", header.size() >= 3 ? header.size() - 3 : 0, rows, label_mismatch,
                    bad_cells)};
}

} // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> all{
        {"AC-1", "gradient suite", 120, gradient_suite},
        {"AC-2", "attention oracles", 10, attention_oracles},
        {"AC-3", "overfit 32 samples", 120, overfit},
        {"AC-4", "cross-modal learnability", 600, cross_modal},
        {"AC-5", "prior advantage", 600, prior_advantage},
        {"AC-6", "ablation reachability", 60, ablations},
        {"AC-7", "encoder layer parameter count", 5, parameter_count},
        {"AC-8", "table 2 structure", 900, table_structure},
    };
    std::set<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit_s;
        const bool pass = v.pass && in_time;
        failures += !pass;
        std::printf("%s %s  %s: %s [%.1f s, limit %.0f s%s]\n", c.id.c_str(), pass ? "PASS" : "FAIL", c.title.c_str(),
                    v.detail.c_str(), secs, c.limit_s, in_time ? "" : ", over time");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
