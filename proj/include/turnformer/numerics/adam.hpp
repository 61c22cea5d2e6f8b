#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "turnformer/numerics/parameters.hpp"

namespace turnformer {

struct AdamOptions {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-7;
};

/// Per-parameter moments for Adam with bias correction. Weight decay is the
/// coupled L2 form: wd * θ is added to the gradient before the moment update.
template <typename T>
class AdamState {
public:
    explicit AdamState(AdamOptions options = {}) : options_(options) {}

    const AdamOptions& options() const { return options_; }
    std::size_t step_count() const { return t_; }
    std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
    std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

    /// One update over parallel lists of parameters and gradients. A missing
    /// gradient (empty span) is treated as zero.
    void step(std::span<std::span<T>> params, std::span<const std::span<const T>> grads) {
        if (params.size() != grads.size()) throw ContractError("adam_step: parameter/gradient list length mismatch");
        if (m_.empty()) {
            for (auto p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].size() != m_[i].size() || (!grads[i].empty() && grads[i].size() != params[i].size()))
                throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i];
            auto g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = (g.empty() ? 0.0 : double(g[j])) + options_.weight_decay * double(p[j]);
                m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
                v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
                const double mhat = m[j] / c1;
                const double vhat = v[j] / c2;
                p[j] = T(double(p[j]) - options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
            }
        }
    }

    /// Updates every parameter in `store` from its accumulated gradient and
    /// clears the gradients.
    void step(ParameterStore<T>& store) {
        std::vector<std::span<T>> ps;
        std::vector<std::span<const T>> gs;
        for (auto& e : store.entries()) {
            ps.push_back(e.tensor.mutable_data());
            gs.push_back(e.tensor.has_grad() ? e.tensor.grad() : std::span<const T>());
        }
        step(ps, gs);
        store.zero_grad();
    }

private:
    AdamOptions options_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace turnformer
