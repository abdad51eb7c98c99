// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "plora/common.hpp"

namespace plora {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

// One record of the reverse-mode graph. Nodes are created by the ops in
// ops.hpp; leaves are parameters or constant inputs. The graph is implicit:
// each node keeps shared ownership of its parents, and backward() walks the
// DAG from a scalar root in reverse topological order.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a backward pass reaches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::vector<std::vector<T>> saved;  // per-op forward intermediates
    bool backward_ran = false;          // set on the root after backward()
    std::uint64_t visit_stamp = 0;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

inline std::uint64_t next_visit_stamp() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

// Value handle over a graph node. Copies share the node; tensor values are
// treated as immutable once an op has consumed them. Mutable access to the
// raw buffer exists for leaves only (init, optimizer, checkpoint loader).
template <typename T>
class Tensor {
  public:
    using Node = detail::Node<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), T(0));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError("non-finite value in tensor construction");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }

    std::span<T> values() { return node_->value; }
    std::span<const T> values() const { return node_->value; }
    T item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    const char* op_name() const { return node_->op; }
    Node* node() const { return node_.get(); }
    std::shared_ptr<Node> ptr() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

// Runs reverse-mode differentiation from a scalar loss. Populates a gradient
// on every requires_grad leaf reachable from the root. A second call on the
// same root is rejected so gradients can never silently accumulate twice.
template <typename T>
void backward(const Tensor<T>& loss) {
    using Node = detail::Node<T>;
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward requires a scalar loss");
    Node* root = loss.node();
    if (root->backward_ran)
        throw ContractError("backward already ran on this graph");
    root->backward_ran = true;
    if (!root->requires_grad) return;

    const std::uint64_t stamp = detail::next_visit_stamp();
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    root->visit_stamp = stamp;
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].get();
            ++idx;
            if (p->requires_grad && p->visit_stamp != stamp) {
                p->visit_stamp = stamp;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace plora
