#pragma once

// Reverse-mode differentiation over dense row-major 2-D tensors.
//
// A Graph records every node created through it in creation order, which is a
// valid topological order, so backward() is a single reverse sweep. Graphs are
// confined to one thread; Parameters may be read by many graphs at once, and
// each graph keeps its own gradient buffers until accumulate_into_parameters().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rollcast::diff {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, Shape a, Shape b);
    ShapeError(const std::string& op, const std::string& what);
};

/// A named trainable (or frozen) tensor owned outside any graph.
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Shape s, bool train = true)
        : name(std::move(n)), shape(s), value(s.size(), 0.0), grad(s.size(), 0.0), trainable(train) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Graph;

/// Lightweight handle to a node inside a Graph.
class Var {
public:
    Var() = default;
    Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::uint32_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

    const Shape& shape() const;
    std::size_t rows() const { return shape().rows; }
    std::size_t cols() const { return shape().cols; }
    std::span<const double> value() const;
    std::span<const double> grad() const;
    double item() const;
    bool requires_grad() const;

private:
    Graph* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&)>;

    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Shape shape, std::vector<double> values);
    Var constant(Shape shape, std::span<const double> values);
    Var zeros(Shape shape);
    /// Leaf bound to a parameter. Frozen when the parameter is not trainable
    /// or when `frozen` is set; frozen leaves never receive adjoints.
    Var param(Parameter& p, bool frozen = false);

    /// Generic node constructor used by the primitive library and by tests
    /// that need a hand-written adjoint.
    Var make(Shape shape, std::vector<double> value, bool requires_grad, BackwardFn backward);

    void backward(Var loss);
    /// Adds leaf gradients into their bound Parameter::grad.
    void accumulate_into_parameters() const;

    Node& node(Var v) { return nodes_[v.id()]; }
    const Node& node(Var v) const { return nodes_[v.id()]; }
    std::vector<double>& grad_of(Var v);
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All shapes are explicit; only the *_bias / *_broadcast variants
// replicate an operand, and they say so in their name.

Var matmul(Var a, Var b);     // [m,k]x[k,n]
Var matmul_nt(Var a, Var b);  // [m,k]x[n,k]^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_bias(Var a, Var bias);           // [m,n] + [1,n] per row
Var mul_row_broadcast(Var a, Var row);   // [m,n] * [1,n] per row
Var mul_col_broadcast(Var a, Var col);   // [m,n] * [m,1] per column
Var repeat_rows(Var a, std::size_t times);  // [b,n] -> [b*times,n], row r copied `times` times
Var square(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var gelu(Var a);  // tanh approximation
Var softmax(Var a, int axis = 1);
Var layer_norm(Var a, double eps = 1e-6);  // over each row, no affine
Var cross_entropy(Var p, Var q, double floor = 1e-12);  // -sum p log max(q, floor)
Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, int axis);  // axis 0 -> [1,n], axis 1 -> [m,1]
Var mean_axis(Var a, int axis);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var a, int axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
Var embedding_lookup(Var table, std::span<const std::size_t> indices);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var scatter_rows(Var a, std::span<const std::size_t> rows, std::size_t total_rows);
Var gather_cols(Var a, std::span<const std::size_t> idx, std::size_t k);  // idx is [m,k]
Var scatter_cols(Var a, std::span<const std::size_t> idx, std::size_t total_cols);
Var detach(Var a);

/// Indices of the k largest entries, largest first; ties go to the lower index.
/// Not differentiable.
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k);

}  // namespace rollcast::diff
