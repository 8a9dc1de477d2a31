#include "rollcast/diff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rollcast/diff/kernels.hpp"

namespace rollcast::diff {

std::string Shape::str() const {
    std::ostringstream os;
    os << '[' << rows << ',' << cols << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string& op, Shape a, Shape b)
    : std::invalid_argument(op + ": shape mismatch " + a.str() + " vs " + b.str()) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument(op + ": " + what) {}

// --- Var ---------------------------------------------------------------------

const Shape& Var::shape() const { return graph_->node(*this).shape; }
std::span<const double> Var::value() const { return graph_->node(*this).value; }
std::span<const double> Var::grad() const { return graph_->node(*this).grad; }
bool Var::requires_grad() const { return graph_->node(*this).requires_grad; }

double Var::item() const {
    const auto& n = graph_->node(*this);
    if (n.shape.size() != 1) throw ShapeError("item", "tensor is not a scalar " + n.shape.str());
    return n.value[0];
}

// --- Graph -------------------------------------------------------------------

Var Graph::make(Shape shape, std::vector<double> value, bool requires_grad, BackwardFn backward) {
    if (value.size() != shape.size())
        throw ShapeError("make", "value length " + std::to_string(value.size()) + " for shape " + shape.str());
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) {
        n.grad.assign(shape.size(), 0.0);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Shape shape, std::vector<double> values) {
    return make(shape, std::move(values), false, nullptr);
}

Var Graph::constant(Shape shape, std::span<const double> values) {
    return make(shape, std::vector<double>(values.begin(), values.end()), false, nullptr);
}

Var Graph::zeros(Shape shape) { return make(shape, std::vector<double>(shape.size(), 0.0), false, nullptr); }

Var Graph::param(Parameter& p, bool frozen) {
    const bool train = p.trainable && !frozen;
    Var v = make(p.shape, p.value, train, nullptr);
    nodes_.back().param = train ? &p : nullptr;
    return v;
}

std::vector<double>& Graph::grad_of(Var v) { return nodes_[v.id()].grad; }

void Graph::backward(Var loss) {
    if (&loss.graph() != this) throw std::logic_error("backward: variable from another graph");
    auto& root = nodes_[loss.id()];
    if (root.shape.size() != 1)
        throw ShapeError("backward", "loss must be scalar, got " + root.shape.str());
    if (!root.requires_grad) return;
    root.grad[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward(*this);
    }
}

void Graph::accumulate_into_parameters() const {
    for (const auto& n : nodes_) {
        if (n.param == nullptr) continue;
        auto& g = n.param->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
}

// --- primitives --------------------------------------------------------------

namespace {

Graph& same_graph(Var a, Var b, const char* op) {
    if (&a.graph() != &b.graph()) throw std::logic_error(std::string(op) + ": operands from different graphs");
    return a.graph();
}

void require_same(const char* op, Var a, Var b) {
    if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

std::uint32_t id(Var v) { return v.id(); }

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
    Graph& g = a.graph();
    const auto x = a.value();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const auto ia = id(a);
    const bool rg = a.requires_grad();
    Var out = g.make(a.shape(), std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [ia, io, df](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& no = gr.node(Var(&gr, io));
            for (std::size_t i = 0; i < na.grad.size(); ++i)
                na.grad[i] += no.grad[i] * df(na.value[i], no.value[i]);
        };
    }
    return out;
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b, "matmul");
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.cols != sb.rows) throw ShapeError("matmul", sa, sb);
    const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
    std::vector<double> c(m * n, 0.0);
    kernels::gemm_nn(m, n, k, a.value(), b.value(), c);
    const bool rg = a.requires_grad() || b.requires_grad();
    const auto ia = id(a), ib = id(b);
    Var out = g.make({m, n}, std::move(c), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nb = gr.node(Var(&gr, ib));
            const auto& go = gr.node(Var(&gr, io)).grad;
            if (na.requires_grad) kernels::gemm_nt(m, k, n, go, nb.value, na.grad);
            if (nb.requires_grad) kernels::gemm_tn(k, n, m, na.value, go, nb.grad);
        };
    }
    return out;
}

Var matmul_nt(Var a, Var b) {
    Graph& g = same_graph(a, b, "matmul_nt");
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.cols != sb.cols) throw ShapeError("matmul_nt", sa, sb);
    const std::size_t m = sa.rows, k = sa.cols, n = sb.rows;
    std::vector<double> c(m * n, 0.0);
    kernels::gemm_nt(m, n, k, a.value(), b.value(), c);
    const bool rg = a.requires_grad() || b.requires_grad();
    const auto ia = id(a), ib = id(b);
    Var out = g.make({m, n}, std::move(c), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nb = gr.node(Var(&gr, ib));
            const auto& go = gr.node(Var(&gr, io)).grad;
            // dA = dC * B, dB = dC^T * A
            if (na.requires_grad) kernels::gemm_nn(m, k, n, go, nb.value, na.grad);
            if (nb.requires_grad) kernels::gemm_tn(n, k, m, go, na.value, nb.grad);
        };
    }
    return out;
}

Var transpose(Var a) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    const auto x = a.value();
    std::vector<double> y(s.size());
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) y[j * s.rows + i] = x[i * s.cols + j];
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({s.cols, s.rows}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t j = 0; j < s.cols; ++j) na.grad[i * s.cols + j] += go[j * s.rows + i];
        };
    }
    return out;
}

namespace {

template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
    Graph& g = same_graph(a, b, op);
    require_same(op, a, b);
    const auto x = a.value(), y = b.value();
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = f(x[i], y[i]);
    const bool rg = a.requires_grad() || b.requires_grad();
    const auto ia = id(a), ib = id(b);
    Var out = g.make(a.shape(), std::move(z), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nb = gr.node(Var(&gr, ib));
            const auto& go = gr.node(Var(&gr, io)).grad;
            if (na.requires_grad)
                for (std::size_t i = 0; i < go.size(); ++i) na.grad[i] += go[i] * da(na.value[i], nb.value[i]);
            if (nb.requires_grad)
                for (std::size_t i = 0; i < go.size(); ++i) nb.grad[i] += go[i] * db(na.value[i], nb.value[i]);
        };
    }
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                  [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                  [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                  [](double x, double) { return x; });
}

Var scale(Var a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var gelu(Var a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
        [](double x, double) {
            const double u = c * (x + k * x * x * x);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * k * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Var add_bias(Var a, Var bias) {
    Graph& g = same_graph(a, bias, "add_bias");
    const Shape s = a.shape();
    if (bias.shape() != Shape{1, s.cols}) throw ShapeError("add_bias", s, bias.shape());
    std::vector<double> y(a.value().begin(), a.value().end());
    const auto bv = bias.value();
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) y[i * s.cols + j] += bv[j];
    const bool rg = a.requires_grad() || bias.requires_grad();
    const auto ia = id(a), ib = id(bias);
    Var out = g.make(s, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nb = gr.node(Var(&gr, ib));
            const auto& go = gr.node(Var(&gr, io)).grad;
            if (na.requires_grad)
                for (std::size_t i = 0; i < go.size(); ++i) na.grad[i] += go[i];
            if (nb.requires_grad)
                for (std::size_t i = 0; i < s.rows; ++i)
                    for (std::size_t j = 0; j < s.cols; ++j) nb.grad[j] += go[i * s.cols + j];
        };
    }
    return out;
}

Var mul_row_broadcast(Var a, Var row) {
    Graph& g = same_graph(a, row, "mul_row_broadcast");
    const Shape s = a.shape();
    if (row.shape() != Shape{1, s.cols}) throw ShapeError("mul_row_broadcast", s, row.shape());
    const auto x = a.value();
    const auto r = row.value();
    std::vector<double> y(s.size());
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) y[i * s.cols + j] = x[i * s.cols + j] * r[j];
    const bool rg = a.requires_grad() || row.requires_grad();
    const auto ia = id(a), ir = id(row);
    Var out = g.make(s, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nr = gr.node(Var(&gr, ir));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t j = 0; j < s.cols; ++j) {
                    const std::size_t e = i * s.cols + j;
                    if (na.requires_grad) na.grad[e] += go[e] * nr.value[j];
                    if (nr.requires_grad) nr.grad[j] += go[e] * na.value[e];
                }
        };
    }
    return out;
}

Var mul_col_broadcast(Var a, Var col) {
    Graph& g = same_graph(a, col, "mul_col_broadcast");
    const Shape s = a.shape();
    if (col.shape() != Shape{s.rows, 1}) throw ShapeError("mul_col_broadcast", s, col.shape());
    const auto x = a.value();
    const auto c = col.value();
    std::vector<double> y(s.size());
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) y[i * s.cols + j] = x[i * s.cols + j] * c[i];
    const bool rg = a.requires_grad() || col.requires_grad();
    const auto ia = id(a), ic = id(col);
    Var out = g.make(s, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            auto& nc = gr.node(Var(&gr, ic));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t j = 0; j < s.cols; ++j) {
                    const std::size_t e = i * s.cols + j;
                    if (na.requires_grad) na.grad[e] += go[e] * nc.value[i];
                    if (nc.requires_grad) nc.grad[i] += go[e] * na.value[e];
                }
        };
    }
    return out;
}

Var repeat_rows(Var a, std::size_t times) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    const auto x = a.value();
    std::vector<double> y(s.size() * times);
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(x.data() + r * s.cols, s.cols, y.data() + (r * times + t) * s.cols);
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({s.rows * times, s.cols}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t r = 0; r < s.rows; ++r)
                for (std::size_t t = 0; t < times; ++t)
                    for (std::size_t j = 0; j < s.cols; ++j)
                        na.grad[r * s.cols + j] += go[(r * times + t) * s.cols + j];
        };
    }
    return out;
}

Var softmax(Var a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("softmax", "axis must be 0 or 1");
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    Graph& g = a.graph();
    const Shape s = a.shape();
    std::vector<double> y(s.size());
    kernels::softmax_rows(s.rows, s.cols, a.value(), y);
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make(s, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& no = gr.node(Var(&gr, io));
            for (std::size_t i = 0; i < s.rows; ++i) {
                const double* yr = no.value.data() + i * s.cols;
                const double* gr_ = no.grad.data() + i * s.cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < s.cols; ++j) dot += yr[j] * gr_[j];
                for (std::size_t j = 0; j < s.cols; ++j) na.grad[i * s.cols + j] += yr[j] * (gr_[j] - dot);
            }
        };
    }
    return out;
}

Var layer_norm(Var a, double eps) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    std::vector<double> y(s.size());
    std::vector<double> inv_std(s.rows);
    kernels::layer_norm_rows(s.rows, s.cols, eps, a.value(), y, inv_std);
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make(s, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=, inv = std::move(inv_std)](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& no = gr.node(Var(&gr, io));
            const double n = static_cast<double>(s.cols);
            for (std::size_t i = 0; i < s.rows; ++i) {
                const double* xh = no.value.data() + i * s.cols;
                const double* dy = no.grad.data() + i * s.cols;
                double mdy = 0.0, mdyx = 0.0;
                for (std::size_t j = 0; j < s.cols; ++j) {
                    mdy += dy[j];
                    mdyx += dy[j] * xh[j];
                }
                mdy /= n;
                mdyx /= n;
                for (std::size_t j = 0; j < s.cols; ++j)
                    na.grad[i * s.cols + j] += inv[i] * (dy[j] - mdy - xh[j] * mdyx);
            }
        };
    }
    return out;
}

Var cross_entropy(Var p, Var q, double floor) {
    Graph& g = same_graph(p, q, "cross_entropy");
    require_same("cross_entropy", p, q);
    const auto pv = p.value(), qv = q.value();
    double h = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) h -= pv[i] * std::log(std::max(qv[i], floor));
    const bool rg = p.requires_grad() || q.requires_grad();
    const auto ip = id(p), iq = id(q);
    Var out = g.make({1, 1}, {h}, rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& np = gr.node(Var(&gr, ip));
            auto& nq = gr.node(Var(&gr, iq));
            const double go = gr.node(Var(&gr, io)).grad[0];
            for (std::size_t i = 0; i < np.value.size(); ++i) {
                const double qi = nq.value[i];
                if (np.requires_grad) np.grad[i] -= go * std::log(std::max(qi, floor));
                // The floored branch is constant in q.
                if (nq.requires_grad && qi > floor) nq.grad[i] -= go * np.value[i] / qi;
            }
        };
    }
    return out;
}

Var sum(Var a) {
    Graph& g = a.graph();
    const auto x = a.value();
    const double t = std::accumulate(x.begin(), x.end(), 0.0);
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({1, 1}, {t}, rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const double go = gr.node(Var(&gr, io)).grad[0];
            for (auto& v : na.grad) v += go;
        };
    }
    return out;
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.shape().size())); }

Var sum_axis(Var a, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis", "axis must be 0 or 1");
    Graph& g = a.graph();
    const Shape s = a.shape();
    const auto x = a.value();
    const Shape so = axis == 0 ? Shape{1, s.cols} : Shape{s.rows, 1};
    std::vector<double> y(so.size(), 0.0);
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) y[axis == 0 ? j : i] += x[i * s.cols + j];
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make(so, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t j = 0; j < s.cols; ++j) na.grad[i * s.cols + j] += go[axis == 0 ? j : i];
        };
    }
    return out;
}

Var mean_axis(Var a, int axis) {
    const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return scale(sum_axis(a, axis), 1.0 / n);
}

Var concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat", "no operands");
    if (axis != 0 && axis != 1) throw ShapeError("concat", "axis must be 0 or 1");
    Graph& g = parts.front().graph();
    const Shape s0 = parts.front().shape();
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (axis == 0 && s.cols != s0.cols) throw ShapeError("concat", s0, s);
        if (axis == 1 && s.rows != s0.rows) throw ShapeError("concat", s0, s);
        total += axis == 0 ? s.rows : s.cols;
        rg = rg || p.requires_grad();
    }
    const Shape so = axis == 0 ? Shape{total, s0.cols} : Shape{s0.rows, total};
    std::vector<double> y(so.size());
    std::vector<std::uint32_t> ids;
    std::vector<Shape> shapes;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        const auto x = p.value();
        for (std::size_t i = 0; i < s.rows; ++i)
            for (std::size_t j = 0; j < s.cols; ++j) {
                if (axis == 0) y[(offset + i) * so.cols + j] = x[i * s.cols + j];
                else y[i * so.cols + offset + j] = x[i * s.cols + j];
            }
        offset += axis == 0 ? s.rows : s.cols;
        ids.push_back(id(p));
        shapes.push_back(s);
    }
    Var out = g.make(so, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            const auto& go = gr.node(Var(&gr, io)).grad;
            std::size_t off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                auto& np = gr.node(Var(&gr, ids[k]));
                const Shape s = shapes[k];
                if (np.requires_grad)
                    for (std::size_t i = 0; i < s.rows; ++i)
                        for (std::size_t j = 0; j < s.cols; ++j)
                            np.grad[i * s.cols + j] +=
                                axis == 0 ? go[(off + i) * so.cols + j] : go[i * so.cols + off + j];
                off += axis == 0 ? s.rows : s.cols;
            }
        };
    }
    return out;
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
    if (axis != 0 && axis != 1) throw ShapeError("slice", "axis must be 0 or 1");
    Graph& g = a.graph();
    const Shape s = a.shape();
    const std::size_t extent = axis == 0 ? s.rows : s.cols;
    if (begin > end || end > extent)
        throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") outside " + s.str());
    const Shape so = axis == 0 ? Shape{end - begin, s.cols} : Shape{s.rows, end - begin};
    const auto x = a.value();
    std::vector<double> y(so.size());
    for (std::size_t i = 0; i < so.rows; ++i)
        for (std::size_t j = 0; j < so.cols; ++j)
            y[i * so.cols + j] = axis == 0 ? x[(begin + i) * s.cols + j] : x[i * s.cols + begin + j];
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make(so, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < so.rows; ++i)
                for (std::size_t j = 0; j < so.cols; ++j) {
                    const std::size_t src = axis == 0 ? (begin + i) * s.cols + j : i * s.cols + begin + j;
                    na.grad[src] += go[i * so.cols + j];
                }
        };
    }
    return out;
}

Var reshape(Var a, Shape shape) {
    if (shape.size() != a.shape().size()) throw ShapeError("reshape", a.shape(), shape);
    Graph& g = a.graph();
    std::vector<double> y(a.value().begin(), a.value().end());
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make(shape, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < go.size(); ++i) na.grad[i] += go[i];
        };
    }
    return out;
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    const auto x = a.value();
    std::vector<double> y(rows.size() * s.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= s.rows)
            throw ShapeError("gather_rows", "row " + std::to_string(rows[r]) + " outside " + s.str());
        std::copy_n(x.data() + rows[r] * s.cols, s.cols, y.data() + r * s.cols);
    }
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({rows.size(), s.cols}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=, idx = std::vector<std::size_t>(rows.begin(), rows.end())](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < s.cols; ++j) na.grad[idx[r] * s.cols + j] += go[r * s.cols + j];
        };
    }
    return out;
}

Var embedding_lookup(Var table, std::span<const std::size_t> indices) {
    return gather_rows(table, indices);
}

Var scatter_rows(Var a, std::span<const std::size_t> rows, std::size_t total_rows) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    if (rows.size() != s.rows) throw ShapeError("scatter_rows", "index count does not match " + s.str());
    const auto x = a.value();
    std::vector<double> y(total_rows * s.cols, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= total_rows) throw ShapeError("scatter_rows", "row index out of range");
        for (std::size_t j = 0; j < s.cols; ++j) y[rows[r] * s.cols + j] += x[r * s.cols + j];
    }
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({total_rows, s.cols}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=, idx = std::vector<std::size_t>(rows.begin(), rows.end())](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < s.cols; ++j) na.grad[r * s.cols + j] += go[idx[r] * s.cols + j];
        };
    }
    return out;
}

Var gather_cols(Var a, std::span<const std::size_t> idx, std::size_t k) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    if (idx.size() != s.rows * k) throw ShapeError("gather_cols", "index table must be rows x k");
    const auto x = a.value();
    std::vector<double> y(s.rows * k);
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t c = idx[i * k + t];
            if (c >= s.cols) throw ShapeError("gather_cols", "column index out of range for " + s.str());
            y[i * k + t] = x[i * s.cols + c];
        }
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({s.rows, k}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=, ix = std::vector<std::size_t>(idx.begin(), idx.end())](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t t = 0; t < k; ++t) na.grad[i * s.cols + ix[i * k + t]] += go[i * k + t];
        };
    }
    return out;
}

Var scatter_cols(Var a, std::span<const std::size_t> idx, std::size_t total_cols) {
    Graph& g = a.graph();
    const Shape s = a.shape();
    const std::size_t k = s.cols;
    if (idx.size() != s.rows * k) throw ShapeError("scatter_cols", "index table must match " + s.str());
    const auto x = a.value();
    std::vector<double> y(s.rows * total_cols, 0.0);
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t c = idx[i * k + t];
            if (c >= total_cols) throw ShapeError("scatter_cols", "column index out of range");
            y[i * total_cols + c] += x[i * k + t];
        }
    const bool rg = a.requires_grad();
    const auto ia = id(a);
    Var out = g.make({s.rows, total_cols}, std::move(y), rg, nullptr);
    if (rg) {
        const auto io = id(out);
        g.node(out).backward = [=, ix = std::vector<std::size_t>(idx.begin(), idx.end())](Graph& gr) {
            auto& na = gr.node(Var(&gr, ia));
            const auto& go = gr.node(Var(&gr, io)).grad;
            for (std::size_t i = 0; i < s.rows; ++i)
                for (std::size_t t = 0; t < k; ++t) na.grad[i * k + t] += go[i * total_cols + ix[i * k + t]];
        };
    }
    return out;
}

Var detach(Var a) { return a.graph().constant(a.shape(), a.value()); }

std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
    if (k == 0 || k > values.size())
        throw std::invalid_argument("top_k: k=" + std::to_string(k) + " with " + std::to_string(values.size()) +
                                    " values");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (values[a] != values[b]) return values[a] > values[b];
                          return a < b;
                      });
    order.resize(k);
    return order;
}

}  // namespace rollcast::diff
