#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "turnformer/data/synth.hpp"
#include "turnformer/training/grid.hpp"
#include "turnformer/training/report.hpp"

using namespace turnformer;

namespace {

data::Dataset small_dataset(std::size_t convs = 8, std::size_t seconds = 24) {
    data::SynthConfig c;
    c.windows_per_second = 2;
    c.duration_s = seconds;
    c.n_conversations = convs;
    c.dims = {6, 3, 5};
    c.seed = 11;
    return data::synth_generate(c);
}

ModelSpec small_base() {
    ModelSpec s;
    s.config.dims = {8, 2, 16, 1, 0.0};
    s.config.l_out = 2;
    s.mlp_hidden = 8;
    return s;
}

TrainConfig quick_train() {
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 16;
    t.dropout = 0.0;
    t.lr = 1e-3;
    t.max_train_samples = 48;
    t.max_eval_samples = 32;
    return t;
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("tf_training_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST(Loss, UniformPredictionCostsLogOfClassCount) {
    auto z = Tensor<double>::from({2, 4}, std::vector<double>(8, 0.3));
    EXPECT_NEAR(cross_entropy(z, std::vector<int>{0, 3}).item(), std::log(4.0), 1e-12);
}

TEST(Loss, CertainCorrectPredictionCostsNothing) {
    auto lp = Tensor<double>::from({1, 3}, {-1e300, 0.0, -1e300});
    EXPECT_EQ(nll_loss(lp, std::vector<int>{1}).item(), 0.0);
}

TEST(Metrics, Top1CountsArgmaxHits) {
    std::vector<std::vector<double>> p{{0.1, 0.9}, {0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}};
    EXPECT_DOUBLE_EQ(top1_accuracy(p, std::vector<int>{1, 0, 1, 0}), 1.0);
    EXPECT_DOUBLE_EQ(top1_accuracy(p, std::vector<int>{1, 0, 1, 1}), 0.75);
}

TEST(Metrics, TiesGoToLowestIndex) {
    std::vector<double> row{0.25, 0.25, 0.25, 0.25};
    EXPECT_EQ(argmax<double>(row), 0u);
    std::vector<std::vector<double>> p{{0.4, 0.4, 0.2}};
    EXPECT_DOUBLE_EQ(top1_accuracy(p, std::vector<int>{0}), 1.0);
    EXPECT_DOUBLE_EQ(top1_accuracy(p, std::vector<int>{1}), 0.0);
}

TEST(Metrics, EmptyOrMismatchedInputThrows) {
    EXPECT_THROW(top1_accuracy(std::vector<std::vector<double>>{}, std::vector<int>{}), ContractError);
    EXPECT_THROW(top1_accuracy(std::vector<std::vector<double>>{{1.0}}, std::vector<int>{0, 0}), ContractError);
}

TEST(Metrics, MajorityBaselineUsesTrainingCounts) {
    std::vector<int> train{2, 2, 1, 0, 2}, eval{2, 1, 2, 3};
    EXPECT_DOUBLE_EQ(majority_class_accuracy(train, eval, 4), 0.5);
    std::vector<int> tie{1, 3, 3, 1};
    EXPECT_DOUBLE_EQ(majority_class_accuracy(tie, eval, 4), 0.25);
}

TEST(TrainConfigTest, ZeroEpochsAndBadValuesRejected) {
    TrainConfig c;
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(train_config_from_json({{"epochs", 0}}), ConfigError);
    EXPECT_THROW(train_config_from_json({{"lr", -1.0}}), ConfigError);
    EXPECT_THROW(train_config_from_json({{"dropout", 1.0}}), ConfigError);
    EXPECT_THROW(train_config_from_json({{"learning_rate", 0.1}}), ConfigError);
    EXPECT_THROW(train_config_from_json({{"precision", "f16"}}), ConfigError);
}

TEST(TrainConfigTest, JsonRoundTrip) {
    TrainConfig c;
    c.lr = 3e-4;
    c.epochs = 7;
    c.precision = Precision::kFloat64;
    c.target_train_accuracy = 0.99;
    c.max_train_samples = 100;
    EXPECT_EQ(train_config_from_json(to_json(c)), c);
    EXPECT_EQ(train_config_from_json(to_json(TrainConfig{})), TrainConfig{});
}

TEST(Subsample, CapsKeepsOrderAndIsDeterministic) {
    auto ds = small_dataset(1, 30);
    auto all = data::window_dataset(ds.conversations[0], 4, 1);
    auto a = subsample(all, 10, 3), b = subsample(all, 10, 3);
    ASSERT_EQ(a.size(), 10u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].anchor_s, b[i].anchor_s);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1].anchor_s, a[i].anchor_s);
    EXPECT_EQ(subsample(all, 0, 3).size(), all.size());
}

class TrainingRun : public ::testing::Test {
protected:
    data::Dataset ds = small_dataset();
    SplitData splits = make_splits(ds, {0.5, 0.25, 0.25}, 0);

    ModelSpec spec(const std::string& preset, bool prior = false) const {
        return cell_spec(preset, ModalitySet::all(), prior, small_base(), ds);
    }
};

TEST_F(TrainingRun, SameSeedGivesIdenticalTrace) {
    auto s = spec("3m:T>V|A>V");
    auto train = subsample(window_split(splits.train, 4, 1), 40, 1);
    auto val = window_split(splits.val, 4, 1);
    auto cfg = quick_train();
    cfg.dropout = 0.1;
    cfg.track_train_accuracy = true;
    auto run = [&] {
        s.config.dims.dropout = cfg.dropout;
        auto m = make_model<float>(s, 5);
        auto r = train_model(*m, train, val, cfg, {});
        return std::make_pair(r.history, m->parameters().snapshot());
    };
    auto a = run(), b = run();
    ASSERT_EQ(a.first.size(), 2u);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST_F(TrainingRun, NonFiniteParameterAbortsWithDiagnostics) {
    auto m = make_model<float>(spec("3m:T>V|A>V"), 5);
    auto snap = m->parameters().snapshot();
    snap[0][0] = std::numeric_limits<float>::quiet_NaN();
    m->parameters().restore(snap);
    auto train = subsample(window_split(splits.train, 4, 1), 16, 1);
    try {
        train_model(*m, train, {}, quick_train(), {});
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find(m->parameters().entries()[0].name), std::string::npos) << msg;
    }
}

TEST_F(TrainingRun, FullBatchLossDoesNotIncreaseForAnyVariant) {
    auto samples = subsample(window_split(splits.train, 4, 1), 24, 2);
    for (const auto& preset : all_preset_names()) {
        for (bool prior : {false, true}) {
            auto s = spec(preset, prior);
            auto m = make_model<double>(s, 9);
            auto batch = data::make_batch<double>(samples, {s.used_modalities(), false});
            AdamState<double> adam(AdamOptions{1e-3, 0.9, 0.999, 1e-8, 0.0});
            double prev = std::numeric_limits<double>::infinity();
            for (int step = 0; step < 5; ++step) {
                Tape<double> tape;
                auto scope = tape.activate();
                auto loss = nll_loss(m->log_probs(batch, nn::ForwardContext::eval()), batch.target);
                EXPECT_LE(loss.item(), prev + 1e-12) << preset << " prior " << prior << " step " << step;
                prev = loss.item();
                tape.backward(loss);
                adam.step(m->parameters());
            }
        }
    }
}

TEST_F(TrainingRun, BestValidationParametersAreRestored) {
    auto s = spec("mlp");
    auto m = make_model<double>(s, 3);
    auto train = subsample(window_split(splits.train, 4, 1), 40, 1);
    auto val = window_split(splits.val, 4, 1);
    auto cfg = quick_train();
    cfg.epochs = 6;
    cfg.patience = 0;
    cfg.lr = 0.05;
    auto r = train_model(*m, train, val, cfg, {});
    ASSERT_EQ(r.history.size(), 6u);
    double best = -1;
    for (const auto& h : r.history) best = std::max(best, h.val_accuracy);
    EXPECT_DOUBLE_EQ(r.best_val_accuracy, best);
    EXPECT_DOUBLE_EQ(evaluate_accuracy(*m, val, {}), best);
}

TEST_F(TrainingRun, TargetTrainAccuracyStopsEarly) {
    auto m = make_model<double>(spec("mlp"), 3);
    auto train = subsample(window_split(splits.train, 4, 1), 40, 1);
    auto cfg = quick_train();
    cfg.epochs = 20;
    cfg.track_train_accuracy = true;
    cfg.target_train_accuracy = 0.0;
    auto r = train_model(*m, train, {}, cfg, {});
    EXPECT_EQ(r.history.size(), 1u);
}

TEST(Grid, ExpandsEveryAxisAndValidatesFirst) {
    auto ds = small_dataset();
    GridSpec g;
    g.models = {"eft", "lft", "mlp", "3m:T>V|A>V"};
    g.modalities = {"T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"};
    g.prior = {false, true};
    g.past_s = {4, 5};
    g.future_s = {1, 3};
    g.seeds = {1, 2};
    g.model = small_base();
    // 3 baselines x 7 sets + one 3M set, times 2 priors x 4 windows x 2 seeds
    EXPECT_EQ(expand_grid(g, ds).size(), (3u * 7u + 1u) * 2u * 4u * 2u);

    auto bad = g;
    bad.models.push_back("3m:Q>V");
    EXPECT_THROW(expand_grid(bad, ds), ConfigError);
    bad = g;
    bad.past_s = {30};
    EXPECT_THROW(expand_grid(bad, ds), ConfigError);
    bad = g;
    bad.splits = {"dev"};
    EXPECT_THROW(expand_grid(bad, ds), ConfigError);

    // A bad cell at the end must stop the grid before any training happens.
    auto dir = temp_dir("validate");
    bad = g;
    bad.models = {"mlp", "nonsense"};
    EXPECT_THROW(run_grid(bad, ds, dir / "r.csv"), ConfigError);
    EXPECT_FALSE(std::filesystem::exists(dir / "r.csv"));
    std::filesystem::remove_all(dir);
}

TEST(Grid, MissingModalityInDataIsConfigError) {
    data::SynthConfig c;
    c.windows_per_second = 2;
    c.duration_s = 12;
    c.n_conversations = 4;
    c.dims = {6, 3, 0};  // no video
    auto ds = data::synth_generate(c);
    GridSpec g;
    g.model = small_base();
    EXPECT_THROW(expand_grid(g, ds), ConfigError);
    g.models = {"eft"};
    g.modalities = {"T+A"};
    EXPECT_EQ(expand_grid(g, ds).size(), 1u);
}

TEST(Grid, RowsAreCompleteOrderedAndIndependentOfJobs) {
    auto ds = small_dataset();
    GridSpec g;
    g.models = {"mlp", "3m:V>A"};
    g.modalities = {"T", "T+V"};
    g.prior = {false, true};
    g.past_s = {4};
    g.future_s = {1, 2};
    g.splits = {"val", "test"};
    g.model = small_base();
    g.train = quick_train();
    g.train.epochs = 1;
    g.fractions = {0.5, 0.25, 0.25};
    auto dir = temp_dir("rows");
    auto one = run_grid(g, ds, dir / "a.csv", {1, {}});
    auto four = run_grid(g, ds, dir / "b.csv", {4, {}});
    // (2 mlp sets + 1 3M set) x 2 priors x 2 futures x 2 splits
    ASSERT_EQ(one.size(), 24u);
    EXPECT_EQ(one, four);
    EXPECT_EQ(read_results(dir / "a.csv"), one);
    EXPECT_EQ(one.front().model, "mlp");
    EXPECT_EQ(one.front().modalities, "T");
    EXPECT_EQ(one.front().split, "val");
    EXPECT_EQ(one.back().model, "3m:V>A");
    EXPECT_EQ(one.back().modalities, "V+A");
    for (const auto& r : one) {
        EXPECT_GE(r.top1, 0.0);
        EXPECT_LE(r.top1, 1.0);
    }
    std::filesystem::remove_all(dir);
}

TEST(Results, CsvRoundTripAndErrors) {
    auto dir = temp_dir("csv");
    std::vector<ResultRow> rows{{"3m:T>V|A>V", "T+V+A", true, 4, 1, 7, "test", 0.8125},
                                {"eft", "T", false, 30, 10, 1, "val", 0.0}};
    write_results(dir / "r.csv", rows);
    EXPECT_EQ(read_results(dir / "r.csv"), rows);
    {
        std::ofstream out(dir / "bad.csv");
        out << kResultsHeader << "\nmlp,T,1,4,1,1,test\n";
    }
    EXPECT_THROW(read_results(dir / "bad.csv"), FormatError);
    {
        std::ofstream out(dir / "bad2.csv");
        out << "model,top1\n";
    }
    EXPECT_THROW(read_results(dir / "bad2.csv"), FormatError);
    EXPECT_THROW(read_results(dir / "missing.csv"), FormatError);
    std::filesystem::remove_all(dir);
}

namespace {

std::vector<ResultRow> synthetic_table2_rows() {
    std::vector<ResultRow> rows;
    const std::vector<std::string> sets{"T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"};
    double v = 0.0;
    for (bool prior : {false, true})
        for (std::size_t p : {4, 5, 10, 30})
            for (std::size_t f : {1, 3, 5, 10})
                for (const auto& set : sets) {
                    for (const auto& m : {"eft", "lft", "mlp"})
                        for (std::uint64_t seed : {1, 2}) {
                            v = std::fmod(v + 0.0137, 1.0);
                            rows.push_back({m, set, prior, p, f, seed, "test", v});
                        }
                    if (set == "T+V+A") rows.push_back({"3m:T>V|A>V", set, prior, p, f, 1, "test", 0.5});
                }
    return rows;
}

} // namespace

TEST(Report, Table2HasThirtyEightRowsInPublishedOrder) {
    auto rows = synthetic_table2_rows();
    auto t = table2(rows);
    ASSERT_EQ(t.columns.size(), 16u);
    EXPECT_EQ(t.columns.front(), (std::pair<std::size_t, std::size_t>{4, 1}));
    EXPECT_EQ(t.columns[1], (std::pair<std::size_t, std::size_t>{4, 3}));
    EXPECT_EQ(t.columns.back(), (std::pair<std::size_t, std::size_t>{30, 10}));
    ASSERT_EQ(t.rows.size(), 38u);
    std::vector<std::string> expect;
    for (const auto* prior : {"False", "True"})
        for (const auto& set : {"T", "V", "A", "T+V", "T+A", "V+A", "T+V+A"}) {
            const bool single = std::string(set).size() == 1;
            std::vector<std::string> models =
                single ? std::vector<std::string>{"EFT/LFT", "MLP"} : std::vector<std::string>{"LFT", "EFT", "MLP"};
            if (std::string(set) == "T+V+A") models.push_back("Our");
            for (const auto& m : models) expect.push_back(std::string(prior) + "|" + set + "|" + m);
        }
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& l = t.rows[i].labels;
        EXPECT_EQ(l[0] + "|" + l[1] + "|" + l[2], expect[i]) << "row " << i;
        for (const auto& c : t.rows[i].cells) EXPECT_TRUE(c.has_value());
    }
}

TEST(Report, CellsAverageSeedsAndRenderAsPercent) {
    std::vector<ResultRow> rows{{"mlp", "V", true, 4, 1, 1, "test", 0.5},
                                {"mlp", "V", true, 4, 1, 2, "test", 0.75},
                                {"mlp", "V", true, 4, 3, 1, "test", 0.123456},
                                {"mlp", "V", true, 4, 3, 1, "val", 0.9}};
    auto t = table2(rows);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_DOUBLE_EQ(*t.rows[0].cells[0], 0.625);
    EXPECT_DOUBLE_EQ(*t.rows[0].cells[1], 0.123456);
    auto text = render(t);
    EXPECT_NE(text.find("62.50"), std::string::npos) << text;
    EXPECT_NE(text.find("12.35"), std::string::npos) << text;
    EXPECT_EQ(text.find("90.00"), std::string::npos) << text;

    rows.push_back({"eft", "T", true, 4, 1, 1, "test", 0.2});
    auto t2 = table2(rows);
    ASSERT_EQ(t2.rows.size(), 2u);
    EXPECT_FALSE(t2.rows[0].cells[1].has_value());
    EXPECT_NE(render(t2).find(" -"), std::string::npos);
}

TEST(Report, Table1ListsAblationsInOrderWithAverage) {
    std::vector<ResultRow> rows;
    for (std::size_t i = 0; i < ablation_presets().size(); ++i)
        for (std::size_t p : {4, 5, 10, 30})
            for (std::size_t f : {1, 3, 5, 10})
                rows.push_back({ablation_presets()[i].name, "T+V+A", true, p, f, 1, "test", double(i) / 20.0 + f / 100.0});
    rows.push_back({"3m:T>V", "T+V", false, 4, 1, 1, "test", 0.99});
    auto t = table1(rows);
    ASSERT_EQ(t.rows.size(), 15u);
    ASSERT_EQ(t.columns.size(), 16u);
    for (std::size_t i = 0; i < 15; ++i) {
        EXPECT_EQ(t.rows[i].labels[0], ablation_presets()[i].label);
        // mean over futures {1,3,5,10} of f/100 is 0.0475
        EXPECT_NEAR(*t.rows[i].average, double(i) / 20.0 + 0.0475, 1e-12);
    }
    auto csv = render_csv(t);
    EXPECT_NE(csv.find("Model,p4_f1"), std::string::npos);
    EXPECT_NE(csv.find(",average\n"), std::string::npos);
}
