#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "pcvs/common.hpp"

namespace pcvs {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over dense tensors.
//
// A Tensor is a shared handle to a graph node holding a value buffer, an
// optional gradient buffer, and a backward closure that scatters the node's
// gradient into its parents. Graphs are built eagerly by the op functions in
// ops.hpp and torn down when the last handle goes away. Nodes carry a global
// creation sequence number; running backward closures in descending sequence
// order is a valid topological order and makes backward fully deterministic.
// ---------------------------------------------------------------------------

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily; same length as value once present
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

namespace detail {
inline std::uint64_t next_seq() {
    static std::uint64_t counter = 0;
    return ++counter;
}
}  // namespace detail

template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<T>>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        n->seq = detail::next_seq();
        return Tensor(n);
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            shape_fail("tensor_from", shape);
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->seq = detail::next_seq();
        return Tensor(n);
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    std::size_t numel() const { return n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    std::vector<T>& value() { return n_->value; }
    const std::vector<T>& value() const { return n_->value; }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad_ref() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }
    void zero_grad() { n_->zero_grad(); }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        return n_->value[0];
    }

    T at(std::size_t i) const { return n_->value[i]; }

    TensorNode<T>* node() const { return n_.get(); }
    const std::shared_ptr<TensorNode<T>>& node_ptr() const { return n_; }

    /// Value copy with no graph linkage.
    Tensor detach() const {
        return Tensor::from(n_->shape, n_->value, false);
    }

private:
    std::shared_ptr<TensorNode<T>> n_;
};

/// Create an op output node. requires_grad is inherited from parents; when no
/// parent needs gradients the parents and closure are dropped so dead graph
/// segments free immediately.
template <typename T>
Tensor<T> make_op_node(const char* op, Shape shape,
                       std::vector<std::shared_ptr<TensorNode<T>>> parents,
                       std::function<void(TensorNode<T>&)> backward) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->op = op;
    n->seq = detail::next_seq();
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Tensor<T>(n);
}

/// Populate gradients of every requires_grad leaf reachable from `loss`.
/// Leaf gradients accumulate across calls; interior gradients are reset per
/// call. Throws unless `loss` is scalar.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    // Collect reachable nodes (iterative DFS).
    std::vector<TensorNode<T>*> nodes;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<TensorNode<T>*> stack{loss.node()};
    seen.insert(loss.node());
    while (!stack.empty()) {
        TensorNode<T>* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }

    // Interior (op) nodes get fresh gradients each pass; leaves accumulate.
    for (TensorNode<T>* n : nodes) {
        if (!n->parents.empty() || n->backward) {
            n->grad.assign(n->value.size(), T(0));
        } else {
            n->ensure_grad();
        }
    }
    loss.node()->grad[0] = T(1);

    // Descending creation order is a topological order of the DAG.
    std::sort(nodes.begin(), nodes.end(),
              [](const TensorNode<T>* a, const TensorNode<T>* b) { return a->seq > b->seq; });
    for (TensorNode<T>* n : nodes) {
        if (n->backward && n->requires_grad) n->backward(*n);
    }
}

}  // namespace pcvs
