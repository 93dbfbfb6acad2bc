// Copyright 2026 The Visage Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense double-precision tensors with a dynamically recorded graph for
// reverse-mode differentiation.
//
// Every op produces a new node that keeps shared ownership of its inputs and
// a closure that pushes its output gradient back into them. `backward()`
// orders the graph reachable from a scalar loss, runs the closures once in
// reverse topological order and then releases the graph.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "visage/error.hpp"

namespace visage::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            os << 'x';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // leaves: allocated up front; interior: lazily
    bool requires_grad = false;
    bool leaf = true;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer()
    {
        if (grad.empty()) {
            grad.assign(value.size(), 0.0);
        }
        return grad;
    }
};

inline bool& grad_mode()
{
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false)
    {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape "
                             + shape_str(shape));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        if (requires_grad) {
            node->grad.assign(node->value.size(), 0.0);
        }
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        std::vector<double> values(shape_numel(shape), 0.0);
        return from(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor full(Shape shape, double value)
    {
        std::vector<double> values(shape_numel(shape), value);
        return from(std::move(shape), std::move(values));
    }

    static Tensor scalar(double value) { return from({1}, {value}); }

    /// A trainable leaf. Its gradient buffer exists from creation, so a leaf
    /// that is not reachable from the loss simply keeps a zero gradient.
    static Tensor parameter(Shape shape, std::vector<double> values)
    {
        return from(std::move(shape), std::move(values), true);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.size() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.back(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }

    std::span<const double> data() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
    double item() const
    {
        if (numel() != 1) {
            throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
        }
        return node_->value[0];
    }

    /// In-place access for optimizers and checkpoint loading. Only leaves may
    /// be written; interior values are owned by the graph.
    std::span<double> mutable_data()
    {
        if (!node_->leaf) {
            throw Error("mutable_data: only leaf tensors can be modified in place");
        }
        return node_->value;
    }

    /// Empty span when no gradient has been accumulated.
    std::span<const double> grad() const { return node_->grad; }

    void zero_grad()
    {
        if (node_->requires_grad) {
            std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
        }
    }

    /// Value copy detached from any graph.
    Tensor detach() const { return from(node_->shape, node_->value); }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }

    /// Builds an op result. The closure is recorded only when grad mode is on
    /// and at least one input requires a gradient.
    static Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                              std::initializer_list<const Tensor*> inputs,
                              std::function<void(detail::Node&)> backward)
    {
        std::vector<const Tensor*> list(inputs);
        return make_result(op, std::move(shape), std::move(values), std::span<const Tensor* const>(list),
                           std::move(backward));
    }

    static Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                              std::span<const Tensor* const> inputs,
                              std::function<void(detail::Node&)> backward)
    {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->op = op;
        node->leaf = false;
        if (grad_enabled()) {
            bool any = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor* t) { return t->requires_grad(); });
            if (any) {
                node->requires_grad = true;
                node->parents.reserve(inputs.size());
                for (const Tensor* t : inputs) {
                    node->parents.push_back(t->node_);
                }
                node->backward = std::move(backward);
            }
        }
        return Tensor(std::move(node));
    }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

/// Nodes reachable from `root` that take part in differentiation, ordered so
/// every node appears after all of its parents.
inline std::vector<detail::Node*> graph_order(const Tensor& root)
{
    std::vector<detail::Node*> order;
    if (!root.requires_grad()) {
        return order;
    }
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }
    return order;
}

/// Accumulates d(loss)/d(leaf) into every trainable leaf reachable from
/// `loss`, then releases the graph. A second call on the same graph throws.
inline void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape "
                         + (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    detail::Node* root = loss.node();
    if (root->consumed) {
        throw Error("backward: graph already consumed by a previous backward call");
    }
    if (!root->requires_grad) {
        return;
    }
    auto order = graph_order(loss);
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
    for (detail::Node* node : order) {
        if (!node->leaf) {
            node->consumed = true;
            node->backward = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

} // namespace visage::numerics
