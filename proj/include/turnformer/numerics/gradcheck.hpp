#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "turnformer/numerics/ops.hpp"
#include "turnformer/numerics/parameters.hpp"

namespace turnformer {

struct GradCheckOptions {
    double eps = 1e-5;
    double tolerance = 1e-4;
    /// Relative error denominators are floored at magnitude_floor * max(1, |loss|),
    /// the scale of central-difference roundoff on structurally zero gradients.
    double magnitude_floor = 1e-6;
    /// Checks at most this many coordinates per tensor (0 = all), chosen
    /// uniformly at random with `seed`.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst_location;
    bool passed = false;
};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences, perturbing every (or a sample of) coordinates of `inputs`.
/// `loss_fn` must build its scalar from the current values of `inputs`.
inline GradCheckResult check_gradients(const std::string& name, std::vector<NamedParameter<double>> inputs,
                                       const std::function<Tensor<double>()>& loss_fn,
                                       const GradCheckOptions& options = {}) {
    GradCheckResult result;
    result.name = name;
    for (auto& in : inputs) in.tensor.zero_grad();
    double loss_scale = 1.0;
    {
        Tape<double> tape;
        Tensor<double> loss;
        {
            auto scope = tape.activate();
            loss = loss_fn();
        }
        loss_scale = std::max(1.0, std::abs(loss.item()));
        tape.backward(loss);
    }
    const double floor = options.magnitude_floor * loss_scale;
    std::mt19937_64 rng(options.seed);
    for (auto& in : inputs) {
        auto values = in.tensor.mutable_data();
        std::vector<double> analytic(values.size(), 0.0);
        if (in.tensor.has_grad()) std::copy(in.tensor.grad().begin(), in.tensor.grad().end(), analytic.begin());
        std::vector<std::size_t> coords(values.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        for (auto i : coords) {
            const double orig = values[i];
            values[i] = orig + options.eps;
            const double up = loss_fn().item();
            values[i] = orig - options.eps;
            const double down = loss_fn().item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * options.eps);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
            const double rel = std::abs(numeric - analytic[i]) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error || !std::isfinite(rel)) {
                result.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                result.worst_location = in.name + "[" + std::to_string(i) + "] analytic=" +
                                        std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
            }
        }
        in.tensor.zero_grad();
    }
    result.passed = result.max_rel_error < options.tolerance;
    return result;
}

/// Random tensor with entries uniform in [lo, hi).
template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool trainable = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = T(dist(rng));
    return trainable ? Tensor<T>::parameter(std::move(shape), std::move(v)) : Tensor<T>::from(std::move(shape), std::move(v));
}

/// Scalar probe sum(out ⊙ weights) with fixed weights, so that every output
/// coordinate contributes a distinct gradient.
template <typename T>
Tensor<T> probe(const Tensor<T>& out, const Tensor<T>& weights) {
    return sum(mul(out, weights));
}

} // namespace turnformer
