#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "turnformer/numerics/tensor.hpp"

namespace turnformer {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParameter {
    std::string name;
    Tensor<T> tensor;
};

/// Ordered registry of a model's trainable tensors. Registration order is
/// stable and defines the checkpoint layout and optimizer state order.
template <typename T>
class ParameterStore {
public:
    Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
        if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
        auto t = Tensor<T>::parameter(std::move(shape), std::move(values));
        index_[name] = params_.size();
        params_.push_back({name, t});
        return t;
    }

    /// Glorot-uniform matrix in ±sqrt(6 / (fan_in + fan_out)).
    Tensor<T> add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        std::vector<T> v(fan_in * fan_out);
        for (auto& x : v) x = T(dist(rng));
        return add(name, {fan_in, fan_out}, std::move(v));
    }

    Tensor<T> add_constant(const std::string& name, Shape shape, T fill) {
        auto n = shape_numel(shape);
        return add(name, std::move(shape), std::vector<T>(n, fill));
    }

    const std::vector<NamedParameter<T>>& entries() const { return params_; }
    std::vector<NamedParameter<T>>& entries() { return params_; }
    std::size_t size() const { return params_.size(); }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return params_[it->second].tensor;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.tensor.to_vector());
        return out;
    }

    void restore(const std::vector<std::vector<T>>& values) {
        if (values.size() != params_.size()) throw ContractError("restore: parameter count mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto dst = params_[i].tensor.mutable_data();
            if (dst.size() != values[i].size()) throw ContractError("restore: size mismatch for " + params_[i].name);
            std::copy(values[i].begin(), values[i].end(), dst.begin());
        }
    }

private:
    std::vector<NamedParameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace turnformer
