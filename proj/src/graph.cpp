#include "fooloc/graph.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "fooloc/error.hpp"

namespace fooloc {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

bool is_suffix(const Shape& full, const Shape& tail)
{
    if (tail.size() > full.size()) {
        return false;
    }
    return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

double stable_sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Sums a tensor of shape full over its leading axes down to the given suffix size.
void reduce_into(std::span<const double> full, std::span<double> out, double sign)
{
    const std::size_t inner = out.size();
    for (std::size_t base = 0; base < full.size(); base += inner) {
        for (std::size_t j = 0; j < inner; ++j) {
            out[j] += sign * full[base + j];
        }
    }
}

double bounded_weight(double xi, double delta_max)
{
    const double lo = std::nextafter(1.0 - delta_max, 2.0);
    const double hi = std::nextafter(1.0 + delta_max, 0.0);
    return std::clamp(std::tanh(xi) * delta_max + 1.0, lo, hi);
}

} // namespace

const char* op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::hinge: return "hinge";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::l2_norm: return "l2_norm";
    case OpKind::row_l2_norm: return "row_l2_norm";
    case OpKind::adjacent_diff: return "adjacent_diff";
    case OpKind::minmax_rows: return "minmax_rows";
    case OpKind::swap_last_axes: return "swap_last_axes";
    case OpKind::reshape: return "reshape";
    case OpKind::tanh_reparam: return "tanh_reparam";
    }
    return "unknown";
}

NodeId Graph::push(OpKind kind, std::vector<NodeId> inputs)
{
    bool needs_grad = false;
    for (NodeId in : inputs) {
        check_id(in);
        needs_grad = needs_grad || nodes_[in].requires_grad;
    }
    Node node;
    node.kind = kind;
    node.inputs = std::move(inputs);
    node.requires_grad = needs_grad;
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

void Graph::check_id(NodeId id) const
{
    if (id >= nodes_.size()) {
        throw StructuralError("unknown node id " + std::to_string(id));
    }
}

void Graph::fail(NodeId id, const std::string& what) const
{
    const Node& node = nodes_[id];
    std::string name = "node " + std::to_string(id) + " (" + op_name(node.kind);
    if (!node.label.empty()) {
        name += " '" + node.label + "'";
    }
    throw StructuralError(name + "): " + what);
}

NodeId Graph::input(Tensor value, std::string label)
{
    const NodeId id = push(OpKind::input, {});
    nodes_[id].value = std::move(value);
    nodes_[id].label = std::move(label);
    return id;
}

NodeId Graph::parameter(Tensor value, std::string label)
{
    const NodeId id = push(OpKind::parameter, {});
    nodes_[id].value = std::move(value);
    nodes_[id].label = std::move(label);
    nodes_[id].requires_grad = true;
    parameters_.push_back(id);
    return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(OpKind::matmul, {a, b}); }
NodeId Graph::add(NodeId a, NodeId b) { return push(OpKind::add, {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(OpKind::sub, {a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(OpKind::mul, {a, b}); }
NodeId Graph::relu(NodeId a) { return push(OpKind::relu, {a}); }
NodeId Graph::sigmoid(NodeId a) { return push(OpKind::sigmoid, {a}); }
NodeId Graph::tanh(NodeId a) { return push(OpKind::tanh, {a}); }
NodeId Graph::hinge(NodeId a) { return push(OpKind::hinge, {a}); }
NodeId Graph::mean(NodeId a) { return push(OpKind::mean, {a}); }
NodeId Graph::sum(NodeId a) { return push(OpKind::sum, {a}); }
NodeId Graph::l2_norm(NodeId a) { return push(OpKind::l2_norm, {a}); }
NodeId Graph::row_l2_norm(NodeId a) { return push(OpKind::row_l2_norm, {a}); }
NodeId Graph::adjacent_diff(NodeId a) { return push(OpKind::adjacent_diff, {a}); }
NodeId Graph::minmax_rows(NodeId a) { return push(OpKind::minmax_rows, {a}); }
NodeId Graph::swap_last_axes(NodeId a) { return push(OpKind::swap_last_axes, {a}); }

NodeId Graph::affine(NodeId a, double scale, double shift)
{
    const NodeId id = push(OpKind::affine, {a});
    nodes_[id].scale = scale;
    nodes_[id].shift = shift;
    return id;
}

NodeId Graph::reshape(NodeId a, Shape shape)
{
    require(std::count(shape.begin(), shape.end(), std::size_t{0}) <= 1, "reshape accepts at most one inferred axis");
    const NodeId id = push(OpKind::reshape, {a});
    nodes_[id].target_shape = std::move(shape);
    return id;
}

NodeId Graph::tanh_reparam(NodeId xi, double delta_max)
{
    require(delta_max > 0.0 && delta_max < 1.0,
            "delta_max must lie in (0, 1), got " + std::to_string(delta_max));
    const NodeId id = push(OpKind::tanh_reparam, {xi});
    nodes_[id].scale = delta_max;
    return id;
}

void Graph::set_value(NodeId leaf, Tensor value)
{
    check_id(leaf);
    Node& node = nodes_[leaf];
    if (node.kind != OpKind::input && node.kind != OpKind::parameter) {
        fail(leaf, "only input and parameter nodes accept values");
    }
    node.value = std::move(value);
    ++generation_;
}

const Tensor& Graph::value(NodeId id) const
{
    check_id(id);
    return nodes_[id].value;
}

OpKind Graph::kind(NodeId id) const
{
    check_id(id);
    return nodes_[id].kind;
}

const std::string& Graph::label(NodeId id) const
{
    check_id(id);
    return nodes_[id].label;
}

std::vector<bool> Graph::ancestors(NodeId root) const
{
    std::vector<bool> mark(nodes_.size(), false);
    std::vector<NodeId> stack{root};
    mark[root] = true;
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        for (NodeId in : nodes_[id].inputs) {
            if (!mark[in]) {
                mark[in] = true;
                stack.push_back(in);
            }
        }
    }
    return mark;
}

const Tensor& Graph::evaluate(NodeId root)
{
    check_id(root);
    const std::vector<bool> mark = ancestors(root);
    for (NodeId id = 0; id <= root; ++id) {
        if (mark[id]) {
            forward(id);
            nodes_[id].generation = generation_;
        }
    }
    return nodes_[root].value;
}

void Graph::forward(NodeId id)
{
    Node& node = nodes_[id];
    if (node.kind == OpKind::input || node.kind == OpKind::parameter) {
        return;
    }
    const Tensor& a = nodes_[node.inputs[0]].value;
    const auto elementwise = [&](auto fn) {
        Tensor out(a.shape());
        const auto src = a.data();
        auto dst = out.data();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = fn(src[i]);
        }
        node.value = std::move(out);
    };

    switch (node.kind) {
    case OpKind::matmul: {
        const Tensor& b = nodes_[node.inputs[1]].value;
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
            fail(id, "cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
        }
        Tensor out(Shape{a.dim(0), b.dim(1)});
        MatrixMap(out.data().data(), a.dim(0), b.dim(1)).noalias() =
            ConstMatrixMap(a.data().data(), a.dim(0), a.dim(1)) *
            ConstMatrixMap(b.data().data(), b.dim(0), b.dim(1));
        node.value = std::move(out);
        break;
    }
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul: {
        const Tensor& b = nodes_[node.inputs[1]].value;
        if (!is_suffix(a.shape(), b.shape()) || b.size() == 0) {
            fail(id, "cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
        }
        Tensor out(a.shape());
        const auto x = a.data();
        const auto y = b.data();
        auto dst = out.data();
        const std::size_t inner = y.size();
        const auto broadcast = [&](auto fn) {
            for (std::size_t base = 0; base < x.size(); base += inner) {
                for (std::size_t j = 0; j < inner; ++j) {
                    dst[base + j] = fn(x[base + j], y[j]);
                }
            }
        };
        if (node.kind == OpKind::add) {
            broadcast([](double l, double r) { return l + r; });
        } else if (node.kind == OpKind::sub) {
            broadcast([](double l, double r) { return l - r; });
        } else {
            broadcast([](double l, double r) { return l * r; });
        }
        node.value = std::move(out);
        break;
    }
    case OpKind::affine: {
        const double scale = node.scale;
        const double shift = node.shift;
        elementwise([=](double v) { return scale * v + shift; });
        break;
    }
    case OpKind::relu:
        elementwise([](double v) { return v > 0.0 ? v : 0.0; });
        break;
    case OpKind::hinge:
        elementwise([](double v) { return std::max(v, 0.0); });
        break;
    case OpKind::sigmoid:
        elementwise(stable_sigmoid);
        break;
    case OpKind::tanh:
        elementwise([](double v) { return std::tanh(v); });
        break;
    case OpKind::tanh_reparam: {
        const double delta = node.scale;
        elementwise([=](double v) { return bounded_weight(v, delta); });
        break;
    }
    case OpKind::mean:
    case OpKind::sum: {
        if (a.size() == 0) {
            fail(id, "reduction over an empty tensor");
        }
        double total = 0.0;
        for (double v : a.data()) {
            total += v;
        }
        node.value = Tensor::scalar(node.kind == OpKind::mean ? total / static_cast<double>(a.size()) : total);
        break;
    }
    case OpKind::l2_norm: {
        double total = 0.0;
        for (double v : a.data()) {
            total += v * v;
        }
        node.value = Tensor::scalar(std::sqrt(total));
        break;
    }
    case OpKind::row_l2_norm: {
        if (a.rank() == 0) {
            fail(id, "row norm needs rank >= 1");
        }
        const std::size_t cols = a.shape().back();
        Shape shape(a.shape().begin(), a.shape().end() - 1);
        Tensor out(shape);
        const auto x = a.data();
        for (std::size_t r = 0; r < out.size(); ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                total += x[r * cols + c] * x[r * cols + c];
            }
            out[r] = std::sqrt(total);
        }
        node.value = std::move(out);
        break;
    }
    case OpKind::adjacent_diff: {
        if (a.rank() == 0 || a.shape().back() < 2) {
            fail(id, "adjacent difference needs a last axis of length >= 2, got " + shape_string(a.shape()));
        }
        const std::size_t cols = a.shape().back();
        Shape shape = a.shape();
        shape.back() = cols - 1;
        Tensor out(shape);
        const auto x = a.data();
        const std::size_t rows = a.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c + 1 < cols; ++c) {
                out[r * (cols - 1) + c] = x[r * cols + c + 1] - x[r * cols + c];
            }
        }
        node.value = std::move(out);
        break;
    }
    case OpKind::minmax_rows: {
        if (a.rank() == 0 || a.shape().back() == 0) {
            fail(id, "min-max normalization needs a non-empty last axis");
        }
        const std::size_t cols = a.shape().back();
        Tensor out(a.shape());
        const auto x = a.data();
        const std::size_t rows = a.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const auto row = x.subspan(r * cols, cols);
            const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
            const double range = *hi - *lo;
            for (std::size_t c = 0; c < cols; ++c) {
                out[r * cols + c] = range > 0.0 ? (row[c] - *lo) / range : 0.5;
            }
        }
        node.value = std::move(out);
        break;
    }
    case OpKind::swap_last_axes: {
        if (a.rank() < 2) {
            fail(id, "axis swap needs rank >= 2, got " + shape_string(a.shape()));
        }
        const std::size_t rows = a.shape()[a.rank() - 2];
        const std::size_t cols = a.shape()[a.rank() - 1];
        Shape shape = a.shape();
        std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
        Tensor out(shape);
        const std::size_t block = rows * cols;
        const std::size_t blocks = a.size() / std::max<std::size_t>(block, 1);
        for (std::size_t b = 0; b < blocks; ++b) {
            MatrixMap(out.data().data() + b * block, cols, rows) =
                ConstMatrixMap(a.data().data() + b * block, rows, cols).transpose();
        }
        node.value = std::move(out);
        break;
    }
    case OpKind::reshape: {
        Shape target = node.target_shape;
        const auto wildcard = std::find(target.begin(), target.end(), std::size_t{0});
        if (wildcard != target.end()) {
            std::size_t known = 1;
            for (std::size_t d : target) {
                known *= d == 0 ? 1 : d;
            }
            if (a.size() % known != 0) {
                fail(id, "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(node.target_shape));
            }
            *wildcard = a.size() / known;
        }
        if (shape_size(target) != a.size()) {
            fail(id, "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(node.target_shape));
        }
        node.value = a.reshaped(target);
        break;
    }
    case OpKind::input:
    case OpKind::parameter:
        break;
    }
}

GradientMap Graph::backward(NodeId root)
{
    check_id(root);
    if (nodes_[root].generation != generation_) {
        throw ContractError("backward() requires evaluate() on the same root after the last set_value()");
    }
    if (nodes_[root].value.size() != 1) {
        throw ContractError("backward() root must be scalar, got shape " +
                            shape_string(nodes_[root].value.shape()));
    }
    const std::vector<bool> mark = ancestors(root);
    grads_.assign(nodes_.size(), Tensor{});
    grads_[root] = Tensor(nodes_[root].value.shape(), 1.0);
    for (NodeId id = root + 1; id-- > 0;) {
        if (!mark[id] || grads_[id].size() == 0 || !nodes_[id].requires_grad) {
            continue;
        }
        if (nodes_[id].kind != OpKind::input && nodes_[id].kind != OpKind::parameter) {
            propagate(id, grads_[id]);
        }
    }

    GradientMap out;
    for (NodeId p : parameters_) {
        out.emplace(p, grads_[p].size() ? grads_[p] : Tensor(nodes_[p].value.shape()));
    }
    return out;
}

const Tensor* Graph::gradient(NodeId id) const
{
    if (id >= grads_.size() || grads_[id].size() == 0) {
        return nullptr;
    }
    return &grads_[id];
}

void Graph::propagate(NodeId id, const Tensor& upstream)
{
    const Node& node = nodes_[id];
    const NodeId ia = node.inputs[0];
    const Tensor& a = nodes_[ia].value;
    const auto g = upstream.data();

    const auto accumulator = [&](NodeId target) -> std::span<double> {
        if (grads_[target].size() == 0) {
            grads_[target] = Tensor(nodes_[target].value.shape());
        }
        return grads_[target].data();
    };
    const auto wants = [&](NodeId target) { return nodes_[target].requires_grad; };

    switch (node.kind) {
    case OpKind::matmul: {
        const NodeId ib = node.inputs[1];
        const Tensor& b = nodes_[ib].value;
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        const ConstMatrixMap dc(g.data(), m, n);
        if (wants(ia)) {
            MatrixMap(accumulator(ia).data(), m, k).noalias() +=
                dc * ConstMatrixMap(b.data().data(), k, n).transpose();
        }
        if (wants(ib)) {
            MatrixMap(accumulator(ib).data(), k, n).noalias() +=
                ConstMatrixMap(a.data().data(), m, k).transpose() * dc;
        }
        break;
    }
    case OpKind::add:
    case OpKind::sub: {
        const NodeId ib = node.inputs[1];
        if (wants(ia)) {
            auto da = accumulator(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i];
            }
        }
        if (wants(ib)) {
            reduce_into(g, accumulator(ib), node.kind == OpKind::add ? 1.0 : -1.0);
        }
        break;
    }
    case OpKind::mul: {
        const NodeId ib = node.inputs[1];
        const auto x = a.data();
        const auto y = nodes_[ib].value.data();
        const std::size_t inner = y.size();
        if (wants(ia)) {
            auto da = accumulator(ia);
            for (std::size_t base = 0; base < g.size(); base += inner) {
                for (std::size_t j = 0; j < inner; ++j) {
                    da[base + j] += g[base + j] * y[j];
                }
            }
        }
        if (wants(ib)) {
            auto db = accumulator(ib);
            for (std::size_t base = 0; base < g.size(); base += inner) {
                for (std::size_t j = 0; j < inner; ++j) {
                    db[j] += g[base + j] * x[base + j];
                }
            }
        }
        break;
    }
    case OpKind::affine: {
        auto da = accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += node.scale * g[i];
        }
        break;
    }
    case OpKind::relu:
    case OpKind::hinge: {
        auto da = accumulator(ia);
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) {
                da[i] += g[i];
            }
        }
        break;
    }
    case OpKind::sigmoid: {
        auto da = accumulator(ia);
        const auto y = node.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
    }
    case OpKind::tanh: {
        auto da = accumulator(ia);
        const auto y = node.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i] * (1.0 - y[i] * y[i]);
        }
        break;
    }
    case OpKind::tanh_reparam: {
        auto da = accumulator(ia);
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = std::tanh(x[i]);
            da[i] += g[i] * node.scale * (1.0 - t * t);
        }
        break;
    }
    case OpKind::mean:
    case OpKind::sum: {
        auto da = accumulator(ia);
        const double scale = node.kind == OpKind::mean ? g[0] / static_cast<double>(a.size()) : g[0];
        for (double& v : da) {
            v += scale;
        }
        break;
    }
    case OpKind::l2_norm: {
        const double norm = node.value.item();
        if (norm > 0.0) {
            auto da = accumulator(ia);
            const auto x = a.data();
            for (std::size_t i = 0; i < x.size(); ++i) {
                da[i] += g[0] * x[i] / norm;
            }
        }
        break;
    }
    case OpKind::row_l2_norm: {
        auto da = accumulator(ia);
        const auto x = a.data();
        const std::size_t cols = a.shape().back();
        for (std::size_t r = 0; r < g.size(); ++r) {
            const double norm = node.value[r];
            if (norm > 0.0) {
                for (std::size_t c = 0; c < cols; ++c) {
                    da[r * cols + c] += g[r] * x[r * cols + c] / norm;
                }
            }
        }
        break;
    }
    case OpKind::adjacent_diff: {
        auto da = accumulator(ia);
        const std::size_t cols = a.shape().back();
        const std::size_t rows = a.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c + 1 < cols; ++c) {
                const double gi = g[r * (cols - 1) + c];
                da[r * cols + c + 1] += gi;
                da[r * cols + c] -= gi;
            }
        }
        break;
    }
    case OpKind::minmax_rows: {
        auto da = accumulator(ia);
        const auto x = a.data();
        const auto y = node.value.data();
        const std::size_t cols = a.shape().back();
        const std::size_t rows = a.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const auto row = x.subspan(r * cols, cols);
            const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
            const double range = *hi - *lo;
            if (!(range > 0.0)) {
                continue;
            }
            const std::size_t arg_lo = static_cast<std::size_t>(lo - row.begin());
            const std::size_t arg_hi = static_cast<std::size_t>(hi - row.begin());
            double to_lo = 0.0;
            double to_hi = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                const double gi = g[r * cols + c];
                const double yi = y[r * cols + c];
                da[r * cols + c] += gi / range;
                to_lo += gi * (yi - 1.0) / range;
                to_hi -= gi * yi / range;
            }
            da[r * cols + arg_lo] += to_lo;
            da[r * cols + arg_hi] += to_hi;
        }
        break;
    }
    case OpKind::swap_last_axes: {
        auto da = accumulator(ia);
        const std::size_t rows = a.shape()[a.rank() - 2];
        const std::size_t cols = a.shape()[a.rank() - 1];
        const std::size_t block = rows * cols;
        const std::size_t blocks = a.size() / std::max<std::size_t>(block, 1);
        for (std::size_t b = 0; b < blocks; ++b) {
            MatrixMap(da.data() + b * block, rows, cols) +=
                ConstMatrixMap(g.data() + b * block, cols, rows).transpose();
        }
        break;
    }
    case OpKind::reshape: {
        auto da = accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] += g[i];
        }
        break;
    }
    case OpKind::input:
    case OpKind::parameter:
        break;
    }
}

void sgd_step(Graph& graph, const GradientMap& grads, double eta)
{
    require(eta > 0.0, "learning rate must be positive");
    for (NodeId p : graph.parameters_) {
        const auto it = grads.find(p);
        if (it == grads.end()) {
            throw ContractError("missing gradient for parameter node " + std::to_string(p));
        }
        const Tensor& grad = it->second;
        Tensor& value = graph.nodes_[p].value;
        require(grad.shape() == value.shape(), "gradient shape mismatch for parameter node " + std::to_string(p));
        for (std::size_t i = 0; i < value.size(); ++i) {
            value[i] -= eta * grad[i];
        }
    }
    ++graph.generation_;
}

Tensor tanh_reparam(const Tensor& xi, double delta_max)
{
    require(delta_max > 0.0 && delta_max < 1.0,
            "delta_max must lie in (0, 1), got " + std::to_string(delta_max));
    Tensor gamma(xi.shape());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        gamma[i] = bounded_weight(xi[i], delta_max);
    }
    return gamma;
}

} // namespace fooloc
