#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maekit/errors.hpp"

namespace maekit {

using Shape = std::vector<std::size_t>;

enum class Precision { single, double_ };

template <class T>
inline constexpr Precision precision_of =
    std::is_same_v<T, double> ? Precision::double_ : Precision::single;

template <class T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

inline thread_local bool grad_mode_enabled = true;

/// Ops whose backward rule is deliberately broken; used only by the
/// gradient-check harness to prove it can fail.
inline std::set<std::string, std::less<>>& corrupted_backward_ops() {
    static std::set<std::string, std::less<>> ops;
    return ops;
}

template <Scalar T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node&)> backward;

    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T{0});
        return grad;
    }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Dense row-major tensor participating in a reverse-mode graph.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Values of
/// non-leaf tensors never change after construction; only gradients accumulate.
template <Scalar T>
class Tensor {
public:
    using value_type = T;
    using NodeT = detail::Node<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<NodeT>()) {
        if (numel_of(shape) != values.size()) {
            throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                                 std::to_string(numel_of(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor shape " + to_string(shape) + " has a zero dimension");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// In-place access for leaves (optimizer updates, finite differences).
    std::span<T> mutable_data() { return node_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

    /// Same values, cut off from the graph.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    std::string_view op() const { return node_->op; }

    /// Identity of the underlying node.
    const void* id() const { return node_.get(); }

    /// Backpropagate from this scalar through every recorded ancestor.
    void backward() const;

    const std::shared_ptr<NodeT>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<NodeT> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<NodeT> node_;
};

namespace detail {

/// Build an op result. The backward closure is only kept when grad mode is on
/// and at least one parent requires a gradient.
template <Scalar T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::string_view op,
                      std::initializer_list<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool track = false;
    if (grad_mode_enabled) {
        for (const auto& p : parents) track = track || p.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

template <Scalar T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::string_view op,
                      const std::vector<Tensor<T>>& parents,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool track = false;
    if (grad_mode_enabled) {
        for (const auto& p : parents) track = track || p.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

template <Scalar T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar output, got shape " + to_string(shape()));
    }
    if (!requires_grad()) return;

    // Iterative post-order DFS; reversed, it is a valid reverse-topological order.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (NodeT* n : order) {
        if (n->backward) n->grad.assign(n->data.size(), T{0});
    }
    node_->grad_buffer()[0] += T{1};

    const auto& corrupted = detail::corrupted_backward_ops();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (!n->backward) continue;
        if (!corrupted.empty() && corrupted.contains(n->op)) {
            for (auto& g : n->grad) g *= T{2};
        }
        n->backward(*n);
    }
}

}  // namespace maekit
