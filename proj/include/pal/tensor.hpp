#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pal/error.hpp"

namespace pal {

template <typename T>
struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // numel-sized once the node participates in a backward pass
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

// Value-semantics handle onto a graph node. Copying shares the node.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        auto node = std::make_shared<TensorNode<T>>();
        node->data.assign(shape_numel(shape), T(0));
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor full(std::vector<int64_t> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.data()) v = value;
        return t;
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<T> data,
                            bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<TensorNode<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t rank() const { return node_->shape.size(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) {
        node_->requires_grad = v;
        if (v) node_->ensure_grad();
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) {
            throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(shape()));
        }
        return node_->data[0];
    }

    TensorNode<T>* node() const { return node_.get(); }
    const NodePtr<T>& node_ptr() const { return node_; }

private:
    NodePtr<T> node_;
};

// Populates grad fields of every requires_grad ancestor of `loss`. Visits each
// node once, in reverse topological order; contributions at fan-out nodes sum.
// Leaf grads are not cleared here, so repeated calls accumulate.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    TensorNode<T>* root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS over requires_grad parents.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<T>* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate grad buffers are transient per pass; only leaf grads carry
    // over between calls. Without the reset a second backward on the same graph
    // would re-read stale intermediate grads and over-count.
    for (TensorNode<T>* node : order) {
        if (!node->leaf) node->grad.assign(node->data.size(), T(0));
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
    for (auto& p : params) p.zero_grad();
}

// Shared constructor for op results: requires_grad is inherited from parents,
// and the backprop closure is only installed when some parent needs it.
template <typename T>
Tensor<T> make_op_node(std::vector<int64_t> shape, std::vector<Tensor<T>> parents,
                       std::function<void(TensorNode<T>&)> backprop) {
    auto node = std::make_shared<TensorNode<T>>();
    node->data.assign(shape_numel(shape), T(0));
    node->shape = std::move(shape);
    node->leaf = false;
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    node->requires_grad = needs;
    if (needs) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(node));
}

}  // namespace pal
