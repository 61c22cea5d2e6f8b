#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "turnformer/data/window.hpp"
#include "turnformer/models/models.hpp"
#include "turnformer/numerics/adam.hpp"
#include "turnformer/training/metrics.hpp"

namespace turnformer {

enum class Precision { kFloat32, kFloat64 };

inline std::string precision_name(Precision p) { return p == Precision::kFloat32 ? "f32" : "f64"; }
inline Precision precision_from_name(const std::string& s) {
    if (s == "f32" || s == "float32") return Precision::kFloat32;
    if (s == "f64" || s == "float64") return Precision::kFloat64;
    throw ConfigError("unknown precision '" + s + "' (f32, f64)");
}

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 1e-7;
    double dropout = 0.1;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    Precision precision = Precision::kFloat32;
    /// Epochs without a validation improvement before stopping (0 = never).
    std::size_t patience = 10;
    std::size_t eval_batch_size = 256;
    /// Evaluate training accuracy (eval mode) after every epoch.
    bool track_train_accuracy = false;
    /// Stop once tracked training accuracy reaches this value.
    std::optional<double> target_train_accuracy;
    /// Caps on samples per split (0 = all), drawn with the run seed.
    std::size_t max_train_samples = 0;
    std::size_t max_eval_samples = 0;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
        if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }

    bool operator==(const TrainConfig&) const = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"dropout", c.dropout},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"precision", precision_name(c.precision)},
                     {"patience", c.patience},
                     {"eval_batch_size", c.eval_batch_size},
                     {"track_train_accuracy", c.track_train_accuracy},
                     {"max_train_samples", c.max_train_samples},
                     {"max_eval_samples", c.max_eval_samples}};
    j["target_train_accuracy"] = c.target_train_accuracy ? nlohmann::json(*c.target_train_accuracy) : nlohmann::json();
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    static const std::set<std::string> known{"lr",        "weight_decay",     "dropout",         "epochs",
                                             "batch_size", "seed",            "precision",       "patience",
                                             "eval_batch_size", "track_train_accuracy", "target_train_accuracy",
                                             "max_train_samples", "max_eval_samples"};
    for (auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError("train config: unknown key '" + k + "'");
    try {
        if (j.contains("lr")) c.lr = j.at("lr").get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
        if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("precision")) c.precision = precision_from_name(j.at("precision").get<std::string>());
        if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
        if (j.contains("eval_batch_size")) c.eval_batch_size = j.at("eval_batch_size").get<std::size_t>();
        if (j.contains("track_train_accuracy")) c.track_train_accuracy = j.at("track_train_accuracy").get<bool>();
        if (j.contains("target_train_accuracy")) {
            const auto& v = j.at("target_train_accuracy");
            c.target_train_accuracy = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        }
        if (j.contains("max_train_samples")) c.max_train_samples = j.at("max_train_samples").get<std::size_t>();
        if (j.contains("max_eval_samples")) c.max_eval_samples = j.at("max_eval_samples").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0;
    double train_accuracy = std::numeric_limits<double>::quiet_NaN();
    double val_accuracy = std::numeric_limits<double>::quiet_NaN();
    bool operator==(const EpochMetrics& o) const {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return epoch == o.epoch && same(train_loss, o.train_loss) && same(train_accuracy, o.train_accuracy) &&
               same(val_accuracy, o.val_accuracy);
    }
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
    double best_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    bool stopped_early = false;
};

/// A deterministic subset of at most `cap` samples (0 = keep all), order kept.
inline std::vector<data::Sample> subsample(std::vector<data::Sample> samples, std::size_t cap, std::uint64_t seed) {
    if (cap == 0 || samples.size() <= cap) return samples;
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<data::Sample> out;
    for (auto i : idx) out.push_back(samples[i]);
    return out;
}

/// Eval-mode class probabilities for every sample.
template <typename T>
std::vector<std::vector<T>> predict_samples(const Model<T>& model, std::span<const data::Sample> samples,
                                            const data::BatchOptions& opt, std::size_t batch_size = 256) {
    std::vector<std::vector<T>> out;
    for (std::size_t i = 0; i < samples.size(); i += batch_size) {
        auto chunk = samples.subspan(i, std::min(batch_size, samples.size() - i));
        auto p = model.predict(data::make_batch<T>(chunk, opt));
        out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    return out;
}

template <typename T>
double evaluate_accuracy(const Model<T>& model, std::span<const data::Sample> samples, const data::BatchOptions& opt,
                         std::size_t batch_size = 256) {
    if (samples.empty()) throw ContractError("evaluate_accuracy: no samples");
    std::vector<int> targets;
    for (const auto& s : samples) targets.push_back(s.target);
    return top1_accuracy(predict_samples(model, samples, opt, batch_size), targets);
}

namespace detail {

template <typename T>
std::string parameter_norm_report(const ParameterStore<T>& store) {
    double total = 0, worst = -1;
    std::string worst_name;
    for (const auto& e : store.entries()) {
        double sq = 0;
        for (auto v : e.tensor.data()) sq += double(v) * double(v);
        if (!std::isfinite(sq) || std::sqrt(sq) > worst) {
            worst = std::isfinite(sq) ? std::sqrt(sq) : std::numeric_limits<double>::infinity();
            worst_name = e.name;
        }
        total += sq;
    }
    std::ostringstream os;
    os << "parameter norm " << std::sqrt(total) << ", largest '" << worst_name << "' norm " << worst;
    return os.str();
}

} // namespace detail

/// Mini-batch Adam with dropout in training mode, per-epoch validation, early
/// stopping on validation accuracy and best-validation parameters restored at
/// the end. Deterministic in cfg.seed.
template <typename T>
TrainResult train_model(Model<T>& model, std::span<const data::Sample> train, std::span<const data::Sample> val,
                        const TrainConfig& cfg, const data::BatchOptions& opt,
                        const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) throw ConfigError("training split is empty");
    auto& store = model.parameters();
    AdamState<T> adam(AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng shuffle_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1), dropout_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);
    std::vector<data::Sample> order(train.begin(), train.end());
    std::vector<data::Sample> batch_samples;

    TrainResult result;
    auto best = store.snapshot();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        std::size_t batch_index = 0;
        for (std::size_t i = 0; i < order.size(); i += cfg.batch_size, ++batch_index) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - i);
            batch_samples.assign(order.begin() + long(i), order.begin() + long(i + n));
            auto batch = data::make_batch<T>(batch_samples, opt);
            Tape<T> tape;
            auto scope = tape.activate();
            auto loss = nll_loss(model.log_probs(batch, nn::ForwardContext::train(cfg.dropout, dropout_rng)),
                                 batch.target);
            const double value = double(loss.item());
            if (!std::isfinite(value))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index) + ": " + detail::parameter_norm_report(store));
            tape.backward(loss);
            adam.step(store);
            loss_sum += value * double(n);
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / double(order.size());
        if (cfg.track_train_accuracy) m.train_accuracy = evaluate_accuracy(model, train, opt, cfg.eval_batch_size);
        if (!val.empty()) m.val_accuracy = evaluate_accuracy(model, val, opt, cfg.eval_batch_size);
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);

        if (val.empty() || result.best_epoch == 0 || m.val_accuracy > result.best_val_accuracy) {
            result.best_epoch = epoch;
            result.best_val_accuracy = m.val_accuracy;
            best = store.snapshot();
            since_best = 0;
        } else {
            ++since_best;
        }
        if (cfg.target_train_accuracy && m.train_accuracy >= *cfg.target_train_accuracy) break;
        if (!val.empty() && cfg.patience > 0 && since_best >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    store.restore(best);
    return result;
}

} // namespace turnformer
