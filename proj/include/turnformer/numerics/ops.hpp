#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "turnformer/numerics/kernels.hpp"
#include "turnformer/numerics/tensor.hpp"

// Differentiable tensor operations. Every op validates extents, computes its
// value eagerly and, while a Tape is active and some input requires a
// gradient, records a closure that pushes the output gradient to its inputs.

namespace turnformer {

namespace detail {

inline std::string two_shapes(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

template <typename T>
void accumulate(Node<T>* node, std::span<const T> delta) {
    auto& g = node->grad_buffer();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

inline std::size_t last_dim(const Shape& s) { return s.back(); }
inline std::size_t leading_rows(const Shape& s) { return shape_numel(s) / s.back(); }

} // namespace detail

/// Matrix product. Accepts [m,k]x[k,n], batched [B,m,k]x[B,k,n], and
/// [B,m,k]x[k,n] with a shared right operand.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    std::size_t batch = 1, m, k, n;
    bool shared_rhs = false;
    if (as.size() == 2 && bs.size() == 2) {
        m = as[0], k = as[1], n = bs[1];
        if (bs[0] != k) throw DimensionError(detail::two_shapes("matmul", as, bs));
    } else if (as.size() == 3 && bs.size() == 3) {
        batch = as[0], m = as[1], k = as[2], n = bs[2];
        if (bs[0] != batch || bs[1] != k) throw DimensionError(detail::two_shapes("matmul", as, bs));
    } else if (as.size() == 3 && bs.size() == 2) {
        shared_rhs = true;
        batch = 1, m = as[0] * as[1], k = as[2], n = bs[1];
        if (bs[0] != k) throw DimensionError(detail::two_shapes("matmul", as, bs));
    } else {
        throw DimensionError(detail::two_shapes("matmul", as, bs));
    }
    Shape out_shape = as.size() == 2 ? Shape{m, n} : Shape{as[0], as[1], n};
    std::vector<T> out(batch * m * n, T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (std::size_t z = 0; z < batch; ++z)
        kernels::gemm_nn(m, n, k, ad + z * m * k, bd + z * k * n, out.data() + z * m * n);

    return detail::record_op<T>(std::move(out_shape), std::move(out), {a, b},
                                [an = a.shared_node(), bn = b.shared_node(), batch, m, n, k, shared_rhs](
                                    detail::Node<T>* self) {
        return [an, bn, batch, m, n, k, shared_rhs, self]() {
            const T* g = self->grad.data();
            if (an->requires_grad) {
                T* ga = an->grad_buffer().data();
                for (std::size_t z = 0; z < batch; ++z)
                    kernels::gemm_nt(m, k, n, g + z * m * n, bn->value.data() + (shared_rhs ? 0 : z * k * n),
                                     ga + z * m * k);
            }
            if (bn->requires_grad) {
                T* gb = bn->grad_buffer().data();
                for (std::size_t z = 0; z < batch; ++z)
                    kernels::gemm_tn(k, n, m, an->value.data() + z * m * k, g + z * m * n, gb + z * k * n);
            }
        };
    });
}

/// a · bᵀ for [m,k]x[n,k] or batched [B,m,k]x[B,n,k].
template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    std::size_t batch = 1, m, k, n;
    if (as.size() == 2 && bs.size() == 2) {
        m = as[0], k = as[1], n = bs[0];
        if (bs[1] != k) throw DimensionError(detail::two_shapes("matmul_transposed", as, bs));
    } else if (as.size() == 3 && bs.size() == 3) {
        batch = as[0], m = as[1], k = as[2], n = bs[1];
        if (bs[0] != batch || bs[2] != k) throw DimensionError(detail::two_shapes("matmul_transposed", as, bs));
    } else {
        throw DimensionError(detail::two_shapes("matmul_transposed", as, bs));
    }
    Shape out_shape = as.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
    std::vector<T> out(batch * m * n, T(0));
    for (std::size_t z = 0; z < batch; ++z)
        kernels::gemm_nt(m, n, k, a.data().data() + z * m * k, b.data().data() + z * n * k,
                         out.data() + z * m * n);

    return detail::record_op<T>(std::move(out_shape), std::move(out), {a, b},
                                [an = a.shared_node(), bn = b.shared_node(), batch, m, n, k](detail::Node<T>* self) {
        return [an, bn, batch, m, n, k, self]() {
            const T* g = self->grad.data();
            if (an->requires_grad) {
                T* ga = an->grad_buffer().data();
                for (std::size_t z = 0; z < batch; ++z)
                    kernels::gemm_nn(m, k, n, g + z * m * n, bn->value.data() + z * n * k, ga + z * m * k);
            }
            if (bn->requires_grad) {
                T* gb = bn->grad_buffer().data();
                for (std::size_t z = 0; z < batch; ++z)
                    kernels::gemm_tn(n, k, m, g + z * m * n, an->value.data() + z * m * k, gb + z * n * k);
            }
        };
    });
}

/// Affine map over the last axis: x[..., in] · w[in, out] + bias[out].
/// `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    const auto& xs = x.shape();
    if (w.rank() != 2 || xs.back() != w.dim(0)) throw DimensionError(detail::two_shapes("linear", xs, w.shape()));
    const std::size_t in = w.dim(0), out_w = w.dim(1), rows = detail::leading_rows(xs);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_w))
        throw DimensionError(detail::two_shapes("linear bias", w.shape(), bias.shape()));
    Shape out_shape = xs;
    out_shape.back() = out_w;
    std::vector<T> out(rows * out_w, T(0));
    if (bias.defined()) {
        const T* bd = bias.data().data();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bd, bd + out_w, out.begin() + r * out_w);
    }
    kernels::gemm_nn(rows, out_w, in, x.data().data(), w.data().data(), out.data());

    std::vector<Tensor<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return detail::record_op<T>(std::move(out_shape), std::move(out), std::span<const Tensor<T>>(inputs),
                                [xn = x.shared_node(), wn = w.shared_node(),
                                 bn = bias.defined() ? bias.shared_node() : nullptr, rows, in,
                                 out_w](detail::Node<T>* self) {
        return [xn, wn, bn, rows, in, out_w, self]() {
            const T* g = self->grad.data();
            if (xn->requires_grad) kernels::gemm_nt(rows, in, out_w, g, wn->value.data(), xn->grad_buffer().data());
            if (wn->requires_grad) kernels::gemm_tn(in, out_w, rows, xn->value.data(), g, wn->grad_buffer().data());
            if (bn && bn->requires_grad) {
                T* gb = bn->grad_buffer().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_w; ++j) gb[j] += g[r * out_w + j];
            }
        };
    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return linear(x, w, Tensor<T>());
}

/// Element-wise sum. `b` may also have a shape equal to a trailing suffix of
/// `a`'s shape, in which case it is repeated over the leading axes.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
        throw DimensionError(detail::two_shapes("add", as, bs));
    const std::size_t nb = b.numel(), reps = a.numel() / nb;
    std::vector<T> out(a.data().begin(), a.data().end());
    const T* bd = b.data().data();
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < nb; ++i) out[r * nb + i] += bd[i];
    return detail::record_op<T>(as, std::move(out), {a, b},
                                [an = a.shared_node(), bn = b.shared_node(), nb, reps](detail::Node<T>* self) {
        return [an, bn, nb, reps, self]() {
            const auto& g = self->grad;
            if (an->requires_grad) detail::accumulate<T>(an.get(), g);
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t r = 0; r < reps; ++r)
                    for (std::size_t i = 0; i < nb; ++i) gb[i] += g[r * nb + i];
            }
        };
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError(detail::two_shapes("sub", a.shape(), b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::record_op<T>(a.shape(), std::move(out), {a, b},
                                [an = a.shared_node(), bn = b.shared_node()](detail::Node<T>* self) {
        return [an, bn, self]() {
            const auto& g = self->grad;
            if (an->requires_grad) detail::accumulate<T>(an.get(), g);
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    });
}

/// Element-wise (Hadamard) product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError(detail::two_shapes("mul", a.shape(), b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::record_op<T>(a.shape(), std::move(out), {a, b},
                                [an = a.shared_node(), bn = b.shared_node()](detail::Node<T>* self) {
        return [an, bn, self]() {
            const auto& g = self->grad;
            if (an->requires_grad) {
                auto& ga = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
            }
        };
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
    return detail::record_op<T>(a.shape(), std::move(out), {a}, [an = a.shared_node(), c](detail::Node<T>* self) {
        return [an, c, self]() {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self->grad[i] * c;
        };
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
    return detail::record_op<T>(a.shape(), std::move(out), {a}, [an = a.shared_node()](detail::Node<T>* self) {
        return [an, self]() {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (an->value[i] > T(0)) ga[i] += self->grad[i];
        };
    });
}

/// Softmax over the last axis, with the row maximum subtracted first.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const std::size_t n = detail::last_dim(x.shape()), rows = detail::leading_rows(x.shape());
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * n;
        T* yr = out.data() + r * n;
        const T mx = *std::max_element(xr, xr + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) total += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
    }
    return detail::record_op<T>(x.shape(), std::move(out), {x},
                                [xn = x.shared_node(), rows, n](detail::Node<T>* self) {
        return [xn, rows, n, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self->value.data() + r * n;
                const T* g = self->grad.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
            }
        };
    });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
    const std::size_t n = detail::last_dim(x.shape()), rows = detail::leading_rows(x.shape());
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * n;
        T* yr = out.data() + r * n;
        const T mx = *std::max_element(xr, xr + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] - lse;
    }
    return detail::record_op<T>(x.shape(), std::move(out), {x},
                                [xn = x.shared_node(), rows, n](detail::Node<T>* self) {
        return [xn, rows, n, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self->value.data() + r * n;
                const T* g = self->grad.data() + r * n;
                T gsum = T(0);
                for (std::size_t j = 0; j < n; ++j) gsum += g[j];
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    });
}

/// Normalizes each last-axis vector to zero mean and unit variance, then
/// applies gamma * x̂ + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t n = detail::last_dim(x.shape()), rows = detail::leading_rows(x.shape());
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
        throw DimensionError(detail::two_shapes("layer_norm", x.shape(), gamma.shape()));
    std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * n;
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= T(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= T(n);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (xr[j] - mean) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gamma[j] + beta[j];
        }
    }
    return detail::record_op<T>(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn = x.shared_node(), gn = gamma.shared_node(), bn = beta.shared_node(), xhat = std::move(xhat),
         inv_std = std::move(inv_std), rows, n](detail::Node<T>* self) mutable {
            return [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n, self]() {
                const T* g = self->grad.data();
                if (gn->requires_grad || bn->requires_grad) {
                    auto& gg = gn->grad_buffer();
                    auto& gb = bn->grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < n; ++j) {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                            gb[j] += g[r * n + j];
                        }
                }
                if (xn->requires_grad) {
                    auto& gx = xn->grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                        T sum_d = T(0), sum_dx = T(0);
                        for (std::size_t j = 0; j < n; ++j) {
                            const T d = g[r * n + j] * gn->value[j];
                            sum_d += d;
                            sum_dx += d * xhat[r * n + j];
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                            const T d = g[r * n + j] * gn->value[j];
                            gx[r * n + j] += inv_std[r] / T(n) * (T(n) * d - sum_d - xhat[r * n + j] * sum_dx);
                        }
                    }
                }
            };
        });
}

/// Inverted dropout: zeroes each entry with probability p and rescales the
/// survivors by 1/(1-p). Identity when p == 0.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must lie in [0,1), got " + std::to_string(p));
    if (p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const T factor = T(1.0 / (1.0 - p));
    std::vector<T> mask(x.numel());
    for (auto& v : mask) v = keep(rng) ? factor : T(0);
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return detail::record_op<T>(x.shape(), std::move(out), {x},
                                [xn = x.shared_node(), mask = std::move(mask)](detail::Node<T>* self) mutable {
        return [xn, mask = std::move(mask), self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self->grad[i] * mask[i];
        };
    });
}

/// [B, L, H*dk] -> [B*H, L, dk]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0)
        throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " + std::to_string(heads) +
                             " heads");
    const std::size_t b = x.dim(0), len = x.dim(1), d = x.dim(2), dk = d / heads;
    std::vector<T> out(x.numel());
    for (std::size_t z = 0; z < b; ++z)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                std::copy_n(x.data().data() + (z * len + l) * d + h * dk, dk,
                            out.data() + ((z * heads + h) * len + l) * dk);
    return detail::record_op<T>({b * heads, len, dk}, std::move(out), {x},
                                [xn = x.shared_node(), b, heads, len, d, dk](detail::Node<T>* self) {
        return [xn, b, heads, len, d, dk, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t z = 0; z < b; ++z)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t l = 0; l < len; ++l) {
                        const T* src = self->grad.data() + ((z * heads + h) * len + l) * dk;
                        T* dst = gx.data() + (z * len + l) * d + h * dk;
                        for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
                    }
        };
    });
}

/// [B*H, L, dk] -> [B, L, H*dk]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0)
        throw DimensionError("merge_heads: cannot merge " + shape_str(x.shape()) + " over " + std::to_string(heads) +
                             " heads");
    const std::size_t b = x.dim(0) / heads, len = x.dim(1), dk = x.dim(2), d = dk * heads;
    std::vector<T> out(x.numel());
    for (std::size_t z = 0; z < b; ++z)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                std::copy_n(x.data().data() + ((z * heads + h) * len + l) * dk, dk,
                            out.data() + (z * len + l) * d + h * dk);
    return detail::record_op<T>({b, len, d}, std::move(out), {x},
                                [xn = x.shared_node(), b, heads, len, d, dk](detail::Node<T>* self) {
        return [xn, b, heads, len, d, dk, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t z = 0; z < b; ++z)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t l = 0; l < len; ++l) {
                        const T* src = self->grad.data() + (z * len + l) * d + h * dk;
                        T* dst = gx.data() + ((z * heads + h) * len + l) * dk;
                        for (std::size_t j = 0; j < dk; ++j) dst[j] += src[j];
                    }
        };
    });
}

/// Concatenates along the last axis; leading extents must agree.
template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        pl.pop_back();
        if (pl != lead) throw DimensionError(detail::two_shapes("concat_last", parts[0].shape(), p.shape()));
        widths.push_back(p.shape().back());
        total += widths.back();
    }
    const std::size_t rows = shape_numel(lead.empty() ? Shape{1} : lead);
    std::vector<T> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const T* src = parts[i].data().data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src + r * widths[i], widths[i], out.data() + r * total + offset);
        offset += widths[i];
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.shared_node());
    return detail::record_op<T>(std::move(out_shape), std::move(out), parts,
                                [nodes = std::move(nodes), widths, rows, total](detail::Node<T>* self) mutable {
        return [nodes = std::move(nodes), widths = std::move(widths), rows, total, self]() {
            std::size_t off = 0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (nodes[i]->requires_grad) {
                    auto& g = nodes[i]->grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < widths[i]; ++j)
                            g[r * widths[i] + j] += self->grad[r * total + off + j];
                }
                off += widths[i];
            }
        };
    });
}

template <typename T>
Tensor<T> concat_last(std::initializer_list<Tensor<T>> parts) {
    return concat_last<T>(std::span<const Tensor<T>>(parts.begin(), parts.size()));
}

/// Chunk boundaries used by chunk_mean: chunk c covers
/// [floor(c*L/n), max(floor((c+1)*L/n), floor(c*L/n)+1)).
inline std::pair<std::size_t, std::size_t> chunk_bounds(std::size_t c, std::size_t len, std::size_t n) {
    std::size_t lo = c * len / n;
    std::size_t hi = std::max((c + 1) * len / n, lo + 1);
    return {lo, std::min(hi, len)};
}

/// Averages equal contiguous chunks of the sequence axis:
/// [B, L, d] -> [B, n, d]. When L < n, tokens are repeated.
template <typename T>
Tensor<T> chunk_mean(const Tensor<T>& x, std::size_t n) {
    if (x.rank() != 3 || n == 0) throw DimensionError("chunk_mean: expected [B,L,d], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), len = x.dim(1), d = x.dim(2);
    std::vector<T> out(b * n * d, T(0));
    for (std::size_t z = 0; z < b; ++z)
        for (std::size_t c = 0; c < n; ++c) {
            auto [lo, hi] = chunk_bounds(c, len, n);
            const T inv = T(1) / T(hi - lo);
            T* dst = out.data() + (z * n + c) * d;
            for (std::size_t l = lo; l < hi; ++l) {
                const T* src = x.data().data() + (z * len + l) * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
            for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
        }
    return detail::record_op<T>({b, n, d}, std::move(out), {x},
                                [xn = x.shared_node(), b, len, d, n](detail::Node<T>* self) {
        return [xn, b, len, d, n, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t z = 0; z < b; ++z)
                for (std::size_t c = 0; c < n; ++c) {
                    auto [lo, hi] = chunk_bounds(c, len, n);
                    const T inv = T(1) / T(hi - lo);
                    const T* src = self->grad.data() + (z * n + c) * d;
                    for (std::size_t l = lo; l < hi; ++l)
                        for (std::size_t j = 0; j < d; ++j) gx[(z * len + l) * d + j] += src[j] * inv;
                }
        };
    });
}

/// Repeats x over a new leading batch axis.
template <typename T>
Tensor<T> expand_batch(const Tensor<T>& x, std::size_t batch) {
    if (batch == 0) throw DimensionError("expand_batch: batch must be positive");
    const std::size_t n = x.numel();
    std::vector<T> out(batch * n);
    for (std::size_t z = 0; z < batch; ++z) std::copy(x.data().begin(), x.data().end(), out.begin() + z * n);
    Shape s{batch};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return detail::record_op<T>(std::move(s), std::move(out), {x},
                                [xn = x.shared_node(), batch, n](detail::Node<T>* self) {
        return [xn, batch, n, self]() {
            auto& gx = xn->grad_buffer();
            for (std::size_t z = 0; z < batch; ++z)
                for (std::size_t i = 0; i < n; ++i) gx[i] += self->grad[z * n + i];
        };
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError(detail::two_shapes("reshape", x.shape(), shape));
    return detail::record_op<T>(std::move(shape), x.to_vector(), {x}, [xn = x.shared_node()](detail::Node<T>* self) {
        return [xn, self]() { detail::accumulate<T>(xn.get(), self->grad); };
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (auto v : x.data()) total += v;
    return detail::record_op<T>({1}, {total}, {x}, [xn = x.shared_node()](detail::Node<T>* self) {
        return [xn, self]() {
            auto& gx = xn->grad_buffer();
            for (auto& g : gx) g += self->grad[0];
        };
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

/// Mean negative log-likelihood of integer targets under row-wise
/// log-probabilities [B, C].
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& log_probs, std::span<const int> targets) {
    if (log_probs.rank() != 2 || log_probs.dim(0) != targets.size())
        throw DimensionError("nll_loss: log-probabilities " + shape_str(log_probs.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    const std::size_t b = log_probs.dim(0), c = log_probs.dim(1);
    std::vector<int> tgt(targets.begin(), targets.end());
    T total = T(0);
    for (std::size_t i = 0; i < b; ++i) {
        if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= c)
            throw ContractError("nll_loss: target " + std::to_string(tgt[i]) + " outside [0," + std::to_string(c) +
                                ")");
        total -= log_probs[i * c + tgt[i]];
    }
    return detail::record_op<T>({1}, {total / T(b)}, {log_probs},
                                [ln = log_probs.shared_node(), tgt = std::move(tgt), c](detail::Node<T>* self) mutable {
        return [ln, tgt = std::move(tgt), c, self]() {
            auto& g = ln->grad_buffer();
            const T w = self->grad[0] / T(tgt.size());
            for (std::size_t i = 0; i < tgt.size(); ++i) g[i * c + tgt[i]] -= w;
        };
    });
}

/// Softmax cross-entropy from logits, fused through log-softmax.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
    return nll_loss(log_softmax_rows(logits), targets);
}

/// Element-wise log((1/M) Σ_m exp(x_m)) over M equally shaped tensors.
template <typename T>
Tensor<T> log_mean_exp(std::span<const Tensor<T>> xs) {
    if (xs.empty()) throw DimensionError("log_mean_exp: no inputs");
    for (const auto& x : xs)
        if (x.shape() != xs[0].shape()) throw DimensionError(detail::two_shapes("log_mean_exp", xs[0].shape(), x.shape()));
    const std::size_t n = xs[0].numel(), m = xs.size();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (const auto& x : xs) mx = std::max(mx, x[i]);
        T total = T(0);
        for (const auto& x : xs) total += std::exp(x[i] - mx);
        out[i] = mx + std::log(total / T(m));
    }
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (const auto& x : xs) nodes.push_back(x.shared_node());
    return detail::record_op<T>(xs[0].shape(), std::move(out), xs,
                                [nodes = std::move(nodes), n, m](detail::Node<T>* self) mutable {
        return [nodes = std::move(nodes), n, m, self]() {
            for (auto& node : nodes) {
                if (!node->requires_grad) continue;
                auto& g = node->grad_buffer();
                // d out / d x_m = exp(x_m) / (M exp(out))
                for (std::size_t i = 0; i < n; ++i)
                    g[i] += self->grad[i] * std::exp(node->value[i] - self->value[i]) / T(m);
            }
        };
    });
}

template <typename T>
Tensor<T> log_mean_exp(std::initializer_list<Tensor<T>> xs) {
    return log_mean_exp<T>(std::span<const Tensor<T>>(xs.begin(), xs.size()));
}

} // namespace turnformer
