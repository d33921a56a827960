#include "vdm/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace vdm::ad {
namespace {

double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Shapes broadcast when each dimension matches or is 1.
bool broadcastable(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc,
                   std::size_t& orows, std::size_t& ocols) {
    if (ar != br && ar != 1 && br != 1) return false;
    if (ac != bc && ac != 1 && bc != 1) return false;
    orows = std::max(ar, br);
    ocols = std::max(ac, bc);
    return true;
}

// Accumulate `g` (shaped orows x ocols) into `dst` (possibly broadcast from a
// smaller shape), summing over broadcast dimensions.
void reduce_accumulate(Tensor& dst, const Tensor& g) {
    if (dst.same_shape(g)) {
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
        return;
    }
    for (std::size_t i = 0; i < g.rows; ++i) {
        const std::size_t di = dst.rows == 1 ? 0 : i;
        for (std::size_t j = 0; j < g.cols; ++j) {
            const std::size_t dj = dst.cols == 1 ? 0 : j;
            dst(di, dj) += g(i, j);
        }
    }
}

}  // namespace

NodeRef Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeRef{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::at(NodeRef r) const {
    if (!r.valid() || r.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("invalid node reference");
    return nodes_[r.id];
}

NodeRef Graph::param(const ParamPtr& p) {
    if (!p) throw std::invalid_argument("null parameter");
    Node n;
    n.op = Op::Param;
    n.rows = p->value.rows;
    n.cols = p->value.cols;
    n.param = p;
    return push(std::move(n));
}

NodeRef Graph::constant(Tensor t) {
    Node n;
    n.op = Op::Const;
    n.rows = t.rows;
    n.cols = t.cols;
    n.value = std::move(t);
    n.has_value = true;
    return push(std::move(n));
}

NodeRef Graph::placeholder(const std::string& name, std::size_t rows, std::size_t cols) {
    Node n;
    n.op = Op::Placeholder;
    n.rows = rows;
    n.cols = cols;
    n.name = name;
    return push(std::move(n));
}

NodeRef Graph::unary(Op op, NodeRef a) {
    const Node& na = at(a);
    Node n;
    n.op = op;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    return push(std::move(n));
}

NodeRef Graph::binary(Op op, NodeRef a, NodeRef b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    if (!broadcastable(na.rows, na.cols, nb.rows, nb.cols, n.rows, n.cols))
        throw std::invalid_argument("elementwise shape mismatch " +
                                    Tensor(na.rows, na.cols).shape_str() + " vs " +
                                    Tensor(nb.rows, nb.cols).shape_str());
    return push(std::move(n));
}

NodeRef Graph::matmul(NodeRef a, NodeRef b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.cols != nb.rows)
        throw std::invalid_argument("matmul shape mismatch " +
                                    Tensor(na.rows, na.cols).shape_str() + " * " +
                                    Tensor(nb.rows, nb.cols).shape_str());
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.rows = na.rows;
    n.cols = nb.cols;
    return push(std::move(n));
}

NodeRef Graph::scale(NodeRef a, double c) {
    NodeRef r = unary(Op::Scale, a);
    nodes_[r.id].scalar = c;
    return r;
}

NodeRef Graph::sum(NodeRef a) {
    NodeRef r = unary(Op::Sum, a);
    nodes_[r.id].rows = nodes_[r.id].cols = 1;
    return r;
}

NodeRef Graph::mean(NodeRef a) {
    NodeRef r = unary(Op::Mean, a);
    nodes_[r.id].rows = nodes_[r.id].cols = 1;
    return r;
}

NodeRef Graph::row_sum(NodeRef a) {
    NodeRef r = unary(Op::RowSum, a);
    nodes_[r.id].cols = 1;
    return r;
}

NodeRef Graph::concat_cols(NodeRef a, NodeRef b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.rows != nb.rows)
        throw std::invalid_argument("concat_cols row mismatch");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.rows = na.rows;
    n.cols = na.cols + nb.cols;
    return push(std::move(n));
}

NodeRef Graph::concat_cols(const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
    NodeRef acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_cols(acc, parts[i]);
    return acc;
}

std::size_t Graph::node_rows(NodeRef r) const { return at(r).rows; }
std::size_t Graph::node_cols(NodeRef r) const { return at(r).cols; }

void Graph::forward_node(Node& n, const std::map<std::string, Tensor>* bindings) {
    switch (n.op) {
        case Op::Param:
            n.value = n.param->value;
            break;
        case Op::Const:
            break;  // value fixed at construction
        case Op::Placeholder: {
            if (bindings == nullptr)
                throw std::invalid_argument("missing input: placeholder '" + n.name +
                                            "' with no bindings");
            auto it = bindings->find(n.name);
            if (it == bindings->end())
                throw std::invalid_argument("missing input: placeholder '" + n.name + "'");
            if (it->second.rows != n.rows || it->second.cols != n.cols)
                throw std::invalid_argument("placeholder '" + n.name + "' shape mismatch");
            n.value = it->second;
            break;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            n.value = Tensor(n.rows, n.cols);
            for (std::size_t i = 0; i < n.rows; ++i) {
                const std::size_t ia = va.rows == 1 ? 0 : i;
                const std::size_t ib = vb.rows == 1 ? 0 : i;
                for (std::size_t j = 0; j < n.cols; ++j) {
                    const std::size_t ja = va.cols == 1 ? 0 : j;
                    const std::size_t jb = vb.cols == 1 ? 0 : j;
                    const double x = va(ia, ja), y = vb(ib, jb);
                    double r;
                    switch (n.op) {
                        case Op::Add: r = x + y; break;
                        case Op::Sub: r = x - y; break;
                        case Op::Mul: r = x * y; break;
                        default: r = x / y; break;
                    }
                    n.value(i, j) = r;
                }
            }
            break;
        }
        case Op::MatMul:
            vdm::matmul(nodes_[n.a].value, nodes_[n.b].value, n.value);
            break;
        case Op::Scale: {
            const Tensor& va = nodes_[n.a].value;
            n.value = Tensor(n.rows, n.cols);
            for (std::size_t i = 0; i < va.size(); ++i) n.value.data[i] = n.scalar * va.data[i];
            break;
        }
        case Op::Exp:
        case Op::Log:
        case Op::Expm1:
        case Op::Softplus:
        case Op::Sigmoid:
        case Op::Sin:
        case Op::Cos:
        case Op::Square:
        case Op::Abs:
        case Op::Sqrt: {
            const Tensor& va = nodes_[n.a].value;
            n.value = Tensor(n.rows, n.cols);
            for (std::size_t i = 0; i < va.size(); ++i) {
                const double x = va.data[i];
                double r;
                switch (n.op) {
                    case Op::Exp: r = std::exp(x); break;
                    case Op::Log: r = std::log(x); break;
                    case Op::Expm1: r = std::expm1(x); break;
                    case Op::Softplus: r = stable_softplus(x); break;
                    case Op::Sigmoid: r = stable_sigmoid(x); break;
                    case Op::Sin: r = std::sin(x); break;
                    case Op::Cos: r = std::cos(x); break;
                    case Op::Square: r = x * x; break;
                    case Op::Abs: r = std::fabs(x); break;
                    default: r = std::sqrt(x); break;
                }
                n.value.data[i] = r;
            }
            break;
        }
        case Op::Sum:
        case Op::Mean: {
            const Tensor& va = nodes_[n.a].value;
            double acc = 0.0;
            for (double v : va.data) acc += v;
            if (n.op == Op::Mean) acc /= static_cast<double>(va.size());
            n.value = Tensor::scalar(acc);
            break;
        }
        case Op::RowSum: {
            const Tensor& va = nodes_[n.a].value;
            n.value = Tensor(n.rows, 1);
            for (std::size_t i = 0; i < va.rows; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < va.cols; ++j) acc += va(i, j);
                n.value(i, 0) = acc;
            }
            break;
        }
        case Op::ConcatCols: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            n.value = Tensor(n.rows, n.cols);
            for (std::size_t i = 0; i < n.rows; ++i) {
                for (std::size_t j = 0; j < va.cols; ++j) n.value(i, j) = va(i, j);
                for (std::size_t j = 0; j < vb.cols; ++j) n.value(i, va.cols + j) = vb(i, j);
            }
            break;
        }
    }
    n.has_value = true;
}

const Tensor& Graph::evaluate(NodeRef out) {
    static const std::map<std::string, Tensor> kEmpty;
    return evaluate(out, kEmpty);
}

const Tensor& Graph::evaluate(NodeRef out, const std::map<std::string, Tensor>& bindings) {
    at(out);
    for (int i = 0; i <= out.id; ++i) forward_node(nodes_[i], &bindings);
    last_forward_ = out.id;
    return nodes_[out.id].value;
}

void Graph::backward_node(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) return;  // no adjoint reached this node
    switch (n.op) {
        case Op::Param:
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad.data[i] += n.grad.data[i];
            break;
        case Op::Const:
        case Op::Placeholder:
            break;
        case Op::Add:
            reduce_accumulate(nodes_[n.a].grad, n.grad);
            reduce_accumulate(nodes_[n.b].grad, n.grad);
            break;
        case Op::Sub: {
            reduce_accumulate(nodes_[n.a].grad, n.grad);
            Tensor neg = n.grad;
            for (double& v : neg.data) v = -v;
            reduce_accumulate(nodes_[n.b].grad, neg);
            break;
        }
        case Op::Mul:
        case Op::Div: {
            const Tensor& va = nodes_[n.a].value;
            const Tensor& vb = nodes_[n.b].value;
            Tensor ga(n.rows, n.cols), gb(n.rows, n.cols);
            for (std::size_t i = 0; i < n.rows; ++i) {
                const std::size_t ia = va.rows == 1 ? 0 : i;
                const std::size_t ib = vb.rows == 1 ? 0 : i;
                for (std::size_t j = 0; j < n.cols; ++j) {
                    const std::size_t ja = va.cols == 1 ? 0 : j;
                    const std::size_t jb = vb.cols == 1 ? 0 : j;
                    const double g = n.grad(i, j);
                    const double x = va(ia, ja), y = vb(ib, jb);
                    if (n.op == Op::Mul) {
                        ga(i, j) = g * y;
                        gb(i, j) = g * x;
                    } else {
                        ga(i, j) = g / y;
                        gb(i, j) = -g * x / (y * y);
                    }
                }
            }
            reduce_accumulate(nodes_[n.a].grad, ga);
            reduce_accumulate(nodes_[n.b].grad, gb);
            break;
        }
        case Op::MatMul: {
            Tensor ga, gb;
            matmul_nt(n.grad, nodes_[n.b].value, ga);
            matmul_tn(nodes_[n.a].value, n.grad, gb);
            reduce_accumulate(nodes_[n.a].grad, ga);
            reduce_accumulate(nodes_[n.b].grad, gb);
            break;
        }
        case Op::Scale: {
            Tensor ga = n.grad;
            for (double& v : ga.data) v *= n.scalar;
            reduce_accumulate(nodes_[n.a].grad, ga);
            break;
        }
        case Op::Exp:
        case Op::Log:
        case Op::Expm1:
        case Op::Softplus:
        case Op::Sigmoid:
        case Op::Sin:
        case Op::Cos:
        case Op::Square:
        case Op::Abs:
        case Op::Sqrt: {
            const Tensor& va = nodes_[n.a].value;
            Tensor ga(n.rows, n.cols);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double x = va.data[i];
                const double y = n.value.data[i];
                const double g = n.grad.data[i];
                double d;
                switch (n.op) {
                    case Op::Exp: d = y; break;
                    case Op::Log: d = 1.0 / x; break;
                    case Op::Expm1: d = y + 1.0; break;
                    case Op::Softplus: d = stable_sigmoid(x); break;
                    case Op::Sigmoid: d = y * (1.0 - y); break;
                    case Op::Sin: d = std::cos(x); break;
                    case Op::Cos: d = -std::sin(x); break;
                    case Op::Square: d = 2.0 * x; break;
                    case Op::Abs: d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); break;
                    default: d = 0.5 / y; break;
                }
                ga.data[i] = g * d;
            }
            reduce_accumulate(nodes_[n.a].grad, ga);
            break;
        }
        case Op::Sum:
        case Op::Mean: {
            Node& src = nodes_[n.a];
            const double g = n.op == Op::Sum
                                 ? n.grad.data[0]
                                 : n.grad.data[0] / static_cast<double>(src.value.size());
            if (src.grad.size() == 0) src.grad = Tensor(src.rows, src.cols);
            for (double& v : src.grad.data) v += g;
            break;
        }
        case Op::RowSum: {
            Node& src = nodes_[n.a];
            if (src.grad.size() == 0) src.grad = Tensor(src.rows, src.cols);
            for (std::size_t i = 0; i < src.rows; ++i)
                for (std::size_t j = 0; j < src.cols; ++j) src.grad(i, j) += n.grad(i, 0);
            break;
        }
        case Op::ConcatCols: {
            Node& sa = nodes_[n.a];
            Node& sb = nodes_[n.b];
            if (sa.grad.size() == 0) sa.grad = Tensor(sa.rows, sa.cols);
            if (sb.grad.size() == 0) sb.grad = Tensor(sb.rows, sb.cols);
            for (std::size_t i = 0; i < n.rows; ++i) {
                for (std::size_t j = 0; j < sa.cols; ++j) sa.grad(i, j) += n.grad(i, j);
                for (std::size_t j = 0; j < sb.cols; ++j) sb.grad(i, j) += n.grad(i, sa.cols + j);
            }
            break;
        }
    }
}

void Graph::run_backward(int from) {
    for (int i = from; i >= 0; --i) backward_node(i);
}

void Graph::backward(NodeRef out) {
    const Node& nout = at(out);
    if (!nout.has_value || last_forward_ < out.id)
        throw std::logic_error("backward before forward");
    if (nout.rows != 1 || nout.cols != 1)
        throw std::invalid_argument("backward output must be scalar; got " +
                                    Tensor(nout.rows, nout.cols).shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    for (int i = 0; i <= out.id; ++i) {
        Node& n = nodes_[i];
        n.grad = Tensor(n.rows, n.cols);
    }
    nodes_[out.id].grad.data[0] = 1.0;
    run_backward(out.id);
}

void Graph::backward_from(const std::vector<std::pair<NodeRef, Tensor>>& seeds) {
    if (seeds.empty()) throw std::invalid_argument("backward_from: no seeds");
    int top = -1;
    for (const auto& [ref, seed] : seeds) {
        const Node& n = at(ref);
        if (!n.has_value) throw std::logic_error("backward_from before forward");
        if (seed.rows != n.rows || seed.cols != n.cols)
            throw std::invalid_argument("seed shape mismatch at node " + std::to_string(ref.id));
        top = std::max(top, ref.id);
    }
    for (Node& n : nodes_) n.grad = Tensor();
    for (int i = 0; i <= top; ++i) nodes_[i].grad = Tensor(nodes_[i].rows, nodes_[i].cols);
    for (const auto& [ref, seed] : seeds)
        for (std::size_t i = 0; i < seed.size(); ++i) nodes_[ref.id].grad.data[i] += seed.data[i];
    run_backward(top);
}

const Tensor& Graph::value(NodeRef r) const {
    const Node& n = at(r);
    if (!n.has_value) throw std::logic_error("node not evaluated");
    return n.value;
}

const Tensor& Graph::adjoint(NodeRef r) const {
    const Node& n = at(r);
    if (n.grad.size() == 0) throw std::logic_error("node has no adjoint; run backward first");
    return n.grad;
}

double finite_difference_check(const std::function<NodeRef(Graph&, NodeRef)>& build,
                               const Tensor& point, double step) {
    if (step <= 0.0) throw std::invalid_argument("step must be positive");
    ParamPtr x = make_param(point, "fd_point");

    Graph g;
    NodeRef out = build(g, g.param(x));
    const Tensor& v = g.evaluate(out);
    if (!all_finite(v)) throw std::runtime_error("non-finite function value at point");
    x->zero_grad();
    g.backward(out);
    const Tensor analytic = x->grad;

    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = x->value.data[i];
        x->value.data[i] = orig + step;
        const double fp = g.evaluate(out).data[0];
        x->value.data[i] = orig - step;
        const double fm = g.evaluate(out).data[0];
        x->value.data[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("non-finite function value during differencing");
        const double central = (fp - fm) / (2.0 * step);
        const double an = analytic.data[i];
        const double err = std::fabs(an - central) / (std::fabs(an) + std::fabs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

double finite_difference_check_params(const std::function<NodeRef(Graph&)>& build,
                                      const std::vector<ParamPtr>& params, double step) {
    if (step <= 0.0) throw std::invalid_argument("step must be positive");
    Graph g;
    NodeRef out = build(g);
    g.evaluate(out);
    for (const ParamPtr& p : params) p->zero_grad();
    g.backward(out);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const ParamPtr& p : params) analytic.push_back(p->grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + step;
            const double fp = g.evaluate(out).data[0];
            p.value.data[i] = orig - step;
            const double fm = g.evaluate(out).data[0];
            p.value.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("non-finite function value during differencing");
            const double central = (fp - fm) / (2.0 * step);
            const double an = analytic[pi].data[i];
            const double err =
                std::fabs(an - central) / (std::fabs(an) + std::fabs(central) + 1e-12);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace vdm::ad
