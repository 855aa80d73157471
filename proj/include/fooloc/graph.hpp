#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fooloc/tensor.hpp"

namespace fooloc {

using NodeId = std::size_t;
using GradientMap = std::map<NodeId, Tensor>;

enum class OpKind {
    input,
    parameter,
    matmul,
    add,
    sub,
    mul,
    affine,
    relu,
    sigmoid,
    tanh,
    hinge,
    mean,
    sum,
    l2_norm,
    row_l2_norm,
    adjacent_diff,
    minmax_rows,
    swap_last_axes,
    reshape,
    tanh_reparam,
};

const char* op_name(OpKind kind);

/**
 * Define-then-run computation graph with reverse-mode differentiation.
 *
 * Nodes are appended in evaluation order, so the graph is acyclic by
 * construction. Leaves (inputs and parameters) hold values that can be
 * replaced between evaluations; a graph is therefore built once per model
 * and re-evaluated for every mini-batch.
 *
 * Binary elementwise ops (add, sub, mul) accept either equal shapes or a
 * right operand whose shape is a suffix of the left operand's shape, in
 * which case it is broadcast over the leading axes.
 */
class Graph {
public:
    NodeId input(Tensor value, std::string label = {});
    NodeId parameter(Tensor value, std::string label = {});

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    /// scale * a + shift, with constant scale and shift.
    NodeId affine(NodeId a, double scale, double shift);
    NodeId relu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    /// max(a, 0) elementwise.
    NodeId hinge(NodeId a);
    NodeId mean(NodeId a);
    NodeId sum(NodeId a);
    /// Euclidean norm over all elements; the gradient at the origin is taken as zero.
    NodeId l2_norm(NodeId a);
    /// Euclidean norm over the last axis, dropping that axis.
    NodeId row_l2_norm(NodeId a);
    /// out[..., i] = a[..., i + 1] - a[..., i] along the last axis.
    NodeId adjacent_diff(NodeId a);
    /// Min-max scaling of every last-axis row to [0, 1]; constant rows become 0.5.
    NodeId minmax_rows(NodeId a);
    /// Swaps the last two axes of a tensor of rank >= 2.
    NodeId swap_last_axes(NodeId a);
    /// A single 0 entry in shape is inferred from the input size.
    NodeId reshape(NodeId a, Shape shape);

    /**
     * tanh(xi) * delta_max + 1, requires 0 < delta_max < 1. The result is kept
     * strictly inside (1 - delta_max, 1 + delta_max) even where tanh rounds to +-1.
     */
    NodeId tanh_reparam(NodeId xi, double delta_max);

    void set_value(NodeId leaf, Tensor value);
    const Tensor& value(NodeId id) const;
    OpKind kind(NodeId id) const;
    const std::string& label(NodeId id) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const noexcept { return parameters_; }

    /// Forward pass over the ancestors of root; caches every intermediate.
    const Tensor& evaluate(NodeId root);

    /**
     * Reverse-mode pass from a scalar root evaluated by the latest evaluate().
     * Returns a gradient for every parameter node; parameters the root does not
     * depend on get zeros of matching shape.
     */
    GradientMap backward(NodeId root);

    /// Gradient of the last backward() with respect to any node on a path to a parameter.
    const Tensor* gradient(NodeId id) const;

private:
    friend void sgd_step(Graph& graph, const GradientMap& grads, double eta);

    struct Node {
        OpKind kind;
        std::vector<NodeId> inputs;
        Tensor value;
        double scale = 1.0;
        double shift = 0.0;
        Shape target_shape;
        std::string label;
        bool requires_grad = false;
        std::size_t generation = 0;
    };

    NodeId push(OpKind kind, std::vector<NodeId> inputs);
    void check_id(NodeId id) const;
    [[noreturn]] void fail(NodeId id, const std::string& what) const;
    std::vector<bool> ancestors(NodeId root) const;
    void forward(NodeId id);
    void propagate(NodeId id, const Tensor& upstream);

    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;
    std::vector<Tensor> grads_;
    std::size_t generation_ = 1;
};

/// Plain gradient descent: every parameter p of the graph becomes p - eta * grad(p).
void sgd_step(Graph& graph, const GradientMap& grads, double eta);

/// Value-level form of the bounded reparameterization used by the attack.
Tensor tanh_reparam(const Tensor& xi, double delta_max);

} // namespace fooloc
