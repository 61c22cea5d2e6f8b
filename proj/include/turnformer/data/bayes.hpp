#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "turnformer/data/synth.hpp"

namespace turnformer::data {

/// What an ideal predictor can observe about the speaker chain.
struct BayesQuery {
    std::size_t n_states = 4;
    double p_stay = 0.9;
    std::size_t past_s = 4;
    std::size_t future_s = 1;
    /// Lead of a perfectly readable cue, if one is planted.
    std::optional<std::size_t> cue_lead_s;
    /// Whether the current speaker is known (given as prior or readable from
    /// speaker signatures in the features).
    bool knows_current = false;
};

/// P(label after k steps == label now) for the symmetric chain.
inline double stay_after(std::size_t n_states, double p_stay, std::size_t k) {
    const double n = double(n_states);
    const double lambda = (n * p_stay - 1.0) / (n - 1.0);
    return 1.0 / n + (n - 1.0) / n * std::pow(lambda, double(k));
}

/// Accuracy of the Bayes-optimal predictor of the target-second label.
///
/// Seconds are counted relative to the anchor t: the target is second f - 1,
/// the current speaker is second -1, and a cue with lead l seen in past
/// second s in [-p, -1] reveals whether second s + l changed speaker and, if
/// so, to whom. The predictor's belief is tracked exactly as a joint over
/// (target label, current label) for every distinct observation history;
/// histories with the same posterior are merged.
inline double bayes_accuracy(const BayesQuery& q) {
    const std::size_t n = q.n_states;
    if (n < 2) throw ConfigError("bayes oracle needs >= 2 states");
    if (q.past_s == 0 || q.future_s == 0) throw ConfigError("bayes oracle needs past_s, future_s >= 1");
    const long p = long(q.past_s), tau = long(q.future_s) - 1;
    const bool cue = q.cue_lead_s.has_value();
    const long lead = cue ? long(*q.cue_lead_s) : 0;
    const long obs_lo = lead - p, obs_hi = lead - 1;
    const long lo = cue ? std::min(-1L, obs_lo - 1) : -1;
    const long hi = cue ? std::max(tau, obs_hi) : tau;
    const double stay = q.p_stay, move = (1.0 - q.p_stay) / double(n - 1);

    using Joint = std::vector<double>;  // [target * n + current], unnormalised
    auto at = [n](Joint& j, std::size_t a, std::size_t b) -> double& { return j[a * n + b]; };

    std::vector<Joint> beliefs;
    Joint init(n * n, 0.0);
    for (std::size_t x = 0; x < n; ++x) at(init, x, x) = 1.0 / double(n);
    beliefs.push_back(init);

    auto merge = [](const std::vector<Joint>& in) {
        std::map<std::vector<long long>, Joint> groups;
        for (const auto& j : in) {
            double total = 0;
            for (auto v : j) total += v;
            if (total <= 0) continue;
            std::vector<long long> key(j.size());
            for (std::size_t i = 0; i < j.size(); ++i) key[i] = std::llround(j[i] / total * 1e12);
            auto [it, fresh] = groups.try_emplace(key, j);
            if (!fresh)
                for (std::size_t i = 0; i < j.size(); ++i) it->second[i] += j[i];
        }
        std::vector<Joint> out;
        for (auto& [k, v] : groups) out.push_back(std::move(v));
        return out;
    };

    auto reveal_current = [&](const std::vector<Joint>& in) {
        std::vector<Joint> split;
        for (const auto& j : in)
            for (std::size_t x = 0; x < n; ++x) {
                Joint k(n * n, 0.0);
                for (std::size_t a = 0; a < n; ++a) at(k, a, x) = j[a * n + x];
                split.push_back(std::move(k));
            }
        return split;
    };
    if (lo == -1 && q.knows_current) beliefs = merge(reveal_current(beliefs));

    for (long c = lo + 1; c <= hi; ++c) {
        const bool tracking = c <= tau;  // target label still follows the chain
        std::vector<Joint> next;
        for (const auto& j : beliefs) {
            Joint same(n * n, 0.0);
            std::vector<Joint> changed(n, Joint(n * n, 0.0));
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b) {
                    const double v = j[a * n + b];
                    if (v == 0) continue;
                    for (std::size_t y = 0; y < n; ++y) {
                        const std::size_t ta = tracking ? y : a;
                        if (y == b) at(same, ta, y) += v * stay;
                        else at(changed[y], ta, y) += v * move;
                    }
                }
            if (cue && c >= obs_lo && c <= obs_hi) {
                next.push_back(std::move(same));
                for (auto& ch : changed) next.push_back(std::move(ch));
            } else {
                for (auto& ch : changed)
                    for (std::size_t i = 0; i < same.size(); ++i) same[i] += ch[i];
                next.push_back(std::move(same));
            }
        }
        if (c == -1 && q.knows_current) next = reveal_current(next);
        beliefs = merge(next);
    }
    double acc = 0;
    for (const auto& j : beliefs) {
        double best = 0;
        for (std::size_t a = 0; a < n; ++a) {
            double s = 0;
            for (std::size_t b = 0; b < n; ++b) s += j[a * n + b];
            best = std::max(best, s);
        }
        acc += best;
    }
    return acc;
}

/// Bayes bound for a generator configuration, assuming every planted signal
/// is decoded perfectly. Speaker signatures make the current speaker known
/// even without the prior.
inline double bayes_oracle(const SynthConfig& cfg, std::size_t past_s, std::size_t future_s, bool use_prior,
                           ModalitySet visible = ModalitySet::all()) {
    cfg.validate();
    BayesQuery q;
    q.n_states = cfg.n_states();
    q.p_stay = cfg.p_stay;
    q.past_s = past_s;
    q.future_s = future_s;
    bool signatures_visible = false;
    for (auto m : visible.members()) signatures_visible = signatures_visible || cfg.dims[index_of(m)] > 0;
    q.knows_current = use_prior || (cfg.signature_scale > 0 && signatures_visible);
    if (cfg.cue && visible.contains(cfg.cue->modality)) q.cue_lead_s = cfg.cue->lead_s;
    return bayes_accuracy(q);
}

} // namespace turnformer::data
