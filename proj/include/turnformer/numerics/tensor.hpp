#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "turnformer/numerics/errors.hpp"

namespace turnformer {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
    Node(Shape s, std::vector<T> v) : shape(std::move(s)), value(std::move(v)) {}

    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::uint64_t tape_id = 0;  // 0 for leaves and constants
    std::function<void()> backward;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

} // namespace detail

/// Dense row-major array. Values are immutable once created, except for
/// parameter leaves which the optimizer and checkpoint loader update in place
/// between steps.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> values) {
        validate(shape, values.size());
        return Tensor(std::make_shared<detail::Node<T>>(std::move(shape), std::move(values)));
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(Shape shape, T fill) {
        auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, fill));
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    /// Leaf that accumulates gradients during backward.
    static Tensor parameter(Shape shape, std::vector<T> values) {
        auto t = from(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return node_->tape_id == 0; }

    std::span<const T> data() const { return node_->value; }
    std::vector<T> to_vector() const { return node_->value; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value[i]; }

    /// Writable view for parameter leaves only.
    std::span<T> mutable_data() {
        if (!is_leaf()) throw ContractError("mutable_data() on a recorded tensor");
        return node_->value;
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    detail::Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node<T>>& shared_node() const { return node_; }

private:
    static void validate(const Shape& shape, std::size_t n) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        if (shape_numel(shape) != n)
            throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) +
                                 " values");
    }

    std::shared_ptr<detail::Node<T>> node_;
};

/// Define-by-run record of one forward pass. Nodes are appended in creation
/// order, which is a topological order by construction.
template <typename T>
class Tape {
public:
    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() {
        if (active_ == this) active_ = previous_;
    }

    class Scope {
    public:
        explicit Scope(Tape& tape) : tape_(tape), previous_(active_) {
            tape_.previous_ = previous_;
            active_ = &tape_;
        }
        ~Scope() { active_ = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape& tape_;
        Tape* previous_;
    };

    Scope activate() { return Scope(*this); }

    static Tape* active() { return active_; }

    std::uint64_t id() const { return id_; }
    std::size_t size() const { return nodes_.size(); }

    void record(const std::shared_ptr<detail::Node<T>>& node) {
        node->tape_id = id_;
        nodes_.push_back(node);
    }

    /// Propagates d(loss)/d(.) into every requires_grad leaf reachable from
    /// `loss`, then releases the recorded graph.
    void backward(const Tensor<T>& loss) {
        if (!loss.defined()) throw ContractError("backward: undefined loss");
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
        if (loss.node()->tape_id == 0 || loss.node()->tape_id != id_)
            throw ContractError("backward: loss was not recorded on this tape");
        loss.node()->grad_buffer()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& n = **it;
            if (!n.grad.empty() && n.backward) n.backward();
        }
        clear();
    }

    void clear() {
        // Release newest first so closures drop references in reverse order.
        while (!nodes_.empty()) {
            nodes_.back()->backward = nullptr;
            nodes_.back()->tape_id = 0;
            nodes_.pop_back();
        }
    }

private:
    static std::uint64_t next_id() {
        static thread_local std::uint64_t counter = 0;
        return ++counter;
    }

    inline static thread_local Tape* active_ = nullptr;

    std::uint64_t id_;
    Tape* previous_ = nullptr;
    std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
};

namespace detail {

/// Creates the result node of an op and, when recording, wires its backward
/// closure. `make_backward(out)` must return a callable that reads out->grad.
template <typename T, typename MakeBackward>
Tensor<T> record_op(Shape shape, std::vector<T> value, std::span<const Tensor<T>> inputs,
                    MakeBackward&& make_backward) {
    auto node = std::make_shared<Node<T>>(std::move(shape), std::move(value));
    Tape<T>* tape = Tape<T>::active();
    bool needs_grad =
        tape && std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
    if (needs_grad) {
        node->requires_grad = true;
        node->backward = make_backward(node.get());
        tape->record(node);
    }
    return Tensor<T>(std::move(node));
}

template <typename T, typename MakeBackward>
Tensor<T> record_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                    MakeBackward&& make_backward) {
    return record_op<T>(std::move(shape), std::move(value), std::span<const Tensor<T>>(inputs.begin(), inputs.size()),
                        std::forward<MakeBackward>(make_backward));
}

} // namespace detail

} // namespace turnformer
