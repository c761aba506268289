#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msann/common.hpp"
#include "msann/rng.hpp"

namespace msann {

// One node of the dynamically taped computation graph. Values are stored
// densely in row-major order, always as 64-bit floats. A node is a leaf when
// it has no backward function; only leaves retain accumulated gradients
// across backward() calls.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

// Scope guard that disables taping; forwards run as pure value computations.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Value-semantics handle to a graph node. Copies share the underlying node.
class Tensor {
public:
    Tensor() : node_(std::make_shared<Node>()) {}

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        const auto count = static_cast<std::size_t>(shape_numel(shape));
        n->data.resize(count);
        for (auto& x : n->data) x = rng.normal(0.0, stddev);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& data() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) {
        if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
        node_->requires_grad = rg;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) throw ContractError("tensor has no gradient; call backward() first");
        return node_->grad;
    }
    std::vector<double>& grad_ref() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
        return node_->grad;
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar, got shape " + shape_str(shape()));
        return node_->data[0];
    }

    const std::shared_ptr<Node>& node() const { return node_; }

    // Reverse-mode sweep from a scalar. Gradients of leaves accumulate across
    // calls; intermediate gradients are rebuilt every time.
    void backward() const {
        if (numel() != 1)
            throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
        if (!node_->requires_grad) return;

        // Iterative post-order DFS over parents; reversed it gives a valid
        // topological order for the backward sweep.
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        for (Node* n : order) {
            if (n->grad.empty())
                n->grad.assign(n->data.size(), 0.0);
            else if (!n->is_leaf())
                std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
        node_->grad[0] += 1.0;

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Builds the result node of an op: taping is skipped entirely when gradients
// are globally disabled or no input requires them.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<std::shared_ptr<Node>> parents,
                          std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p->requires_grad) needs = true;
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

}  // namespace msann
