// Tape-based reverse-mode autodiff over dense double tensors.
//
// A Graph records primitive applications in topological (insertion) order.
// evaluate() runs the forward pass and caches every node value; backward()
// walks the tape in reverse and accumulates d(output)/d(param) into each
// Parameter's grad. Accumulation is additive: callers reset grads explicitly.
// A graph instance is single-threaded; distinct graphs may share Parameters
// read-only.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vdm/tensor.hpp"

namespace vdm::ad {

struct Parameter {
    Tensor value;
    Tensor grad;
    std::string name;

    Parameter(Tensor v, std::string n) : value(std::move(v)), name(std::move(n)) {
        grad = Tensor(value.rows, value.cols);
    }
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

using ParamPtr = std::shared_ptr<Parameter>;

inline ParamPtr make_param(Tensor v, std::string name) {
    return std::make_shared<Parameter>(std::move(v), std::move(name));
}

struct NodeRef {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op {
    Param,
    Const,
    Placeholder,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Scale,
    Exp,
    Log,
    Expm1,
    Softplus,
    Sigmoid,
    Sin,
    Cos,
    Square,
    Abs,
    Sqrt,
    Sum,
    Mean,
    RowSum,
    ConcatCols,
};

class Graph {
   public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeRef param(const ParamPtr& p);
    NodeRef constant(Tensor t);
    NodeRef constant(double v) { return constant(Tensor::scalar(v)); }
    NodeRef placeholder(const std::string& name, std::size_t rows, std::size_t cols);

    NodeRef add(NodeRef a, NodeRef b) { return binary(Op::Add, a, b); }
    NodeRef sub(NodeRef a, NodeRef b) { return binary(Op::Sub, a, b); }
    NodeRef mul(NodeRef a, NodeRef b) { return binary(Op::Mul, a, b); }
    NodeRef div(NodeRef a, NodeRef b) { return binary(Op::Div, a, b); }
    NodeRef matmul(NodeRef a, NodeRef b);
    NodeRef scale(NodeRef a, double c);
    NodeRef exp(NodeRef a) { return unary(Op::Exp, a); }
    NodeRef log(NodeRef a) { return unary(Op::Log, a); }
    NodeRef expm1(NodeRef a) { return unary(Op::Expm1, a); }
    NodeRef softplus(NodeRef a) { return unary(Op::Softplus, a); }
    NodeRef sigmoid(NodeRef a) { return unary(Op::Sigmoid, a); }
    NodeRef sin(NodeRef a) { return unary(Op::Sin, a); }
    NodeRef cos(NodeRef a) { return unary(Op::Cos, a); }
    NodeRef square(NodeRef a) { return unary(Op::Square, a); }
    NodeRef abs(NodeRef a) { return unary(Op::Abs, a); }
    NodeRef sqrt(NodeRef a) { return unary(Op::Sqrt, a); }
    NodeRef sum(NodeRef a);
    NodeRef mean(NodeRef a);
    NodeRef row_sum(NodeRef a);
    NodeRef concat_cols(NodeRef a, NodeRef b);
    NodeRef concat_cols(const std::vector<NodeRef>& parts);

    // x * sigmoid(x); the smooth nonlinearity used by the denoiser.
    NodeRef silu(NodeRef a) { return mul(a, sigmoid(a)); }

    std::size_t node_rows(NodeRef r) const;
    std::size_t node_cols(NodeRef r) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Forward pass. Recomputes all nodes up to `out` in insertion order and
    // caches the intermediates. Placeholders take values from `bindings`;
    // an unbound placeholder raises a missing-input error.
    const Tensor& evaluate(NodeRef out);
    const Tensor& evaluate(NodeRef out, const std::map<std::string, Tensor>& bindings);

    // Reverse pass from a scalar output. Adds into Parameter::grad.
    void backward(NodeRef out);

    // Reverse pass seeded with explicit adjoints at the given nodes. Used to
    // route a second objective through a cheap subgraph (e.g. the schedule
    // network) without re-running the full forward model.
    void backward_from(const std::vector<std::pair<NodeRef, Tensor>>& seeds);

    const Tensor& value(NodeRef r) const;
    // Adjoint of a node from the most recent backward pass.
    const Tensor& adjoint(NodeRef r) const;

   private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        std::size_t rows = 0;
        std::size_t cols = 0;
        double scalar = 0.0;  // Scale factor
        ParamPtr param;
        std::string name;  // placeholder key
        Tensor value;
        Tensor grad;
        bool has_value = false;
    };

    NodeRef push(Node n);
    NodeRef unary(Op op, NodeRef a);
    NodeRef binary(Op op, NodeRef a, NodeRef b);
    const Node& at(NodeRef r) const;
    void forward_node(Node& n, const std::map<std::string, Tensor>* bindings);
    void backward_node(int id);
    void run_backward(int from);

    std::vector<Node> nodes_;
    int last_forward_ = -1;
};

// Max over coordinates of |analytic - central difference| / (|analytic| +
// |central| + 1e-12) for a scalar-valued function of `point`, where `build`
// turns the point node into the scalar output node.
double finite_difference_check(const std::function<NodeRef(Graph&, NodeRef)>& build,
                               const Tensor& point, double step);

// Same check against a set of existing Parameters: `build` constructs the
// scalar loss from whatever state it closes over (which must include the
// listed params). Returns the max relative error over all coordinates of all
// params.
double finite_difference_check_params(const std::function<NodeRef(Graph&)>& build,
                                      const std::vector<ParamPtr>& params, double step);

}  // namespace vdm::ad
