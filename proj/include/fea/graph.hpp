// Reverse-mode autodiff over dense row-major matrices.
//
// A Graph is an arena of eagerly evaluated nodes: creating an operation
// computes its value immediately and records the edge, so creation order is a
// valid topological order. backward() walks nodes in reverse creation order
// and accumulates gradients additively across fan-out. One graph instance is
// single-threaded; distinct graphs are independent.
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fea/matrix.hpp"

namespace fea {

constexpr double kLogFloor = 1e-12;

enum class Op {
    leaf,
    matmul,
    transpose,
    add,
    sub,
    mul,
    scalar_mul,
    add_rowvec,
    exp_op,
    log_op,
    log_clamped,
    relu,
    softmax_rows,
    l2norm_rows,
    logsumexp_rows,
    sum,
    mean,
    rowsum,
    colsum,
    concat_cols,
    slice_rows,
    pick
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::add: return "add";
        case Op::sub: return "subtract";
        case Op::mul: return "multiply";
        case Op::scalar_mul: return "scalar-multiply";
        case Op::add_rowvec: return "add-rowvec";
        case Op::exp_op: return "exp";
        case Op::log_op: return "log";
        case Op::log_clamped: return "log-clamped";
        case Op::relu: return "relu";
        case Op::softmax_rows: return "row-softmax";
        case Op::l2norm_rows: return "row-l2-normalize";
        case Op::logsumexp_rows: return "log-sum-exp";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::rowsum: return "rowsum";
        case Op::colsum: return "colsum";
        case Op::concat_cols: return "concat-cols";
        case Op::slice_rows: return "slice-rows";
        case Op::pick: return "pick";
    }
    return "?";
}

class Graph;

struct Node {
    Matrix data;
    Matrix grad; // allocated iff requires_grad
    Op op = Op::leaf;
    std::vector<Node*> parents;
    bool requires_grad = false;
    Graph* graph = nullptr;
    std::function<void()> backprop; // pushes this->grad into parents

    std::size_t rows() const { return data.rows(); }
    std::size_t cols() const { return data.cols(); }
};

using Var = Node*;

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = delete; // nodes hold back-pointers into the arena
    Graph& operator=(Graph&&) = delete;

    // Leaf holding a value that will receive gradients.
    Var param(const Matrix& value) { return make_leaf(value, true); }

    // Leaf excluded from gradient accumulation (inputs, stored prototypes,
    // teacher parameters, one-hot targets, ...).
    Var constant(const Matrix& value) { return make_leaf(value, false); }

    Var scalar(double x) { return constant(Matrix(1, 1, x)); }

    std::size_t node_count() const { return nodes_.size(); }

    // Root must be scalar (1x1). Seeds d(root)/d(root) = 1 and accumulates
    // d(root)/d(node) into every requires_grad ancestor. A second call
    // without zero_grad() is rejected.
    void backward(Var root) {
        if (root == nullptr || root->graph != this)
            throw std::invalid_argument("backward: root does not belong to this graph");
        if (root->rows() != 1 || root->cols() != 1)
            throw std::invalid_argument("backward: root must be scalar (1x1), got " +
                                        root->data.shape_str());
        if (backward_done_)
            throw std::logic_error("backward: called twice without zero_grad()");
        backward_done_ = true;
        if (!root->requires_grad) return; // nothing depends on a parameter
        root->grad(0, 0) = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backprop) n.backprop();
        }
    }

    void zero_grad() {
        for (Node& n : nodes_)
            if (n.requires_grad) n.grad.fill(0.0);
        backward_done_ = false;
    }

    Var adopt(Op op, Matrix value, std::vector<Node*> parents) {
        for (Node* p : parents)
            if (p == nullptr || p->graph != this)
                throw std::invalid_argument(std::string(op_name(op)) +
                                            ": input node from a different graph");
        Node& n = nodes_.emplace_back();
        n.data = std::move(value);
        n.op = op;
        n.parents = std::move(parents);
        n.graph = this;
        for (Node* p : n.parents)
            if (p->requires_grad) n.requires_grad = true;
        if (n.requires_grad) n.grad = Matrix(n.data.rows(), n.data.cols(), 0.0);
        return &n;
    }

private:
    Var make_leaf(const Matrix& value, bool requires_grad) {
        Node& n = nodes_.emplace_back();
        n.data = value;
        n.op = Op::leaf;
        n.graph = this;
        n.requires_grad = requires_grad;
        // Constant leaves also get a grad buffer; it stays all-zero because
        // nothing ever accumulates into a requires_grad=false node, which is
        // what the gradient-flow contract asserts on teacher parameters and
        // stored prototypes.
        n.grad = Matrix(value.rows(), value.cols(), 0.0);
        return &n;
    }

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

namespace detail {

inline void check_same_graph(Var a, Var b, Op op) {
    if (a->graph != b->graph)
        throw std::invalid_argument(std::string(op_name(op)) + ": nodes from different graphs");
}

[[noreturn]] inline void shape_error(Op op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch (" + a.shape_str() +
                                " vs " + b.shape_str() + ")");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each returns a freshly evaluated node of the first input's graph.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    detail::check_same_graph(a, b, Op::matmul);
    if (a->cols() != b->rows()) detail::shape_error(Op::matmul, a->data, b->data);
    const std::size_t n = a->rows(), k = a->cols(), m = b->cols();
    Matrix out(n, m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a->data.data() + i * k;
        double* or_ = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ar[p];
            if (aip == 0.0) continue;
            const double* br = b->data.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) or_[j] += aip * br[j];
        }
    }
    Var c = a->graph->adopt(Op::matmul, std::move(out), {a, b});
    c->backprop = [a, b, c, n, k, m] {
        const double* gc = c->grad.data();
        if (a->requires_grad) {
            double* ga = a->grad.data();
            const double* bd = b->data.data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* gr = gc + i * m;
                    const double* br = bd + p * m;
                    for (std::size_t j = 0; j < m; ++j) acc += gr[j] * br[j];
                    ga[i * k + p] += acc;
                }
        }
        if (b->requires_grad) {
            double* gb = b->grad.data();
            const double* ad = a->data.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double* gr = gc + i * m;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = ad[i * k + p];
                    if (aip == 0.0) continue;
                    double* gbr = gb + p * m;
                    for (std::size_t j = 0; j < m; ++j) gbr[j] += aip * gr[j];
                }
            }
        }
    };
    return c;
}

inline Var transpose(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    Matrix out(m, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(j, i) = a->data(i, j);
    Var c = a->graph->adopt(Op::transpose, std::move(out), {a});
    c->backprop = [a, c, n, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) a->grad(i, j) += c->grad(j, i);
    };
    return c;
}

inline Var add(Var a, Var b) {
    detail::check_same_graph(a, b, Op::add);
    if (!a->data.same_shape(b->data)) detail::shape_error(Op::add, a->data, b->data);
    Matrix out = a->data;
    for (std::size_t i = 0; i < out.size(); ++i) out.vec()[i] += b->data.vec()[i];
    Var c = a->graph->adopt(Op::add, std::move(out), {a, b});
    c->backprop = [a, b, c] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i) a->grad.vec()[i] += c->grad.vec()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i) b->grad.vec()[i] += c->grad.vec()[i];
    };
    return c;
}

inline Var sub(Var a, Var b) {
    detail::check_same_graph(a, b, Op::sub);
    if (!a->data.same_shape(b->data)) detail::shape_error(Op::sub, a->data, b->data);
    Matrix out = a->data;
    for (std::size_t i = 0; i < out.size(); ++i) out.vec()[i] -= b->data.vec()[i];
    Var c = a->graph->adopt(Op::sub, std::move(out), {a, b});
    c->backprop = [a, b, c] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i) a->grad.vec()[i] += c->grad.vec()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i) b->grad.vec()[i] -= c->grad.vec()[i];
    };
    return c;
}

// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
    detail::check_same_graph(a, b, Op::mul);
    if (!a->data.same_shape(b->data)) detail::shape_error(Op::mul, a->data, b->data);
    Matrix out = a->data;
    for (std::size_t i = 0; i < out.size(); ++i) out.vec()[i] *= b->data.vec()[i];
    Var c = a->graph->adopt(Op::mul, std::move(out), {a, b});
    c->backprop = [a, b, c] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i)
                a->grad.vec()[i] += c->grad.vec()[i] * b->data.vec()[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i)
                b->grad.vec()[i] += c->grad.vec()[i] * a->data.vec()[i];
    };
    return c;
}

inline Var scalar_mul(Var a, double s) {
    Matrix out = a->data;
    for (double& x : out.vec()) x *= s;
    Var c = a->graph->adopt(Op::scalar_mul, std::move(out), {a});
    c->backprop = [a, c, s] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < c->grad.size(); ++i)
            a->grad.vec()[i] += s * c->grad.vec()[i];
    };
    return c;
}

// Row-broadcast: adds a 1xm vector to every row of an nxm matrix.
inline Var add_rowvec(Var a, Var r) {
    detail::check_same_graph(a, r, Op::add_rowvec);
    if (r->rows() != 1 || r->cols() != a->cols())
        detail::shape_error(Op::add_rowvec, a->data, r->data);
    const std::size_t n = a->rows(), m = a->cols();
    Matrix out = a->data;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) += r->data(0, j);
    Var c = a->graph->adopt(Op::add_rowvec, std::move(out), {a, r});
    c->backprop = [a, r, c, n, m] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < c->grad.size(); ++i) a->grad.vec()[i] += c->grad.vec()[i];
        if (r->requires_grad)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) r->grad(0, j) += c->grad(i, j);
    };
    return c;
}

inline Var exp_(Var a) {
    Matrix out = a->data;
    for (double& x : out.vec()) x = std::exp(x);
    Var c = a->graph->adopt(Op::exp_op, std::move(out), {a});
    c->backprop = [a, c] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < c->grad.size(); ++i)
            a->grad.vec()[i] += c->grad.vec()[i] * c->data.vec()[i];
    };
    return c;
}

// Strict log: rejects non-positive entries.
inline Var log_(Var a) {
    Matrix out = a->data;
    for (double& x : out.vec()) {
        if (x <= 0.0)
            throw std::domain_error("log: non-positive input " + std::to_string(x) +
                                    " (use log_clamped for model outputs)");
        x = std::log(x);
    }
    Var c = a->graph->adopt(Op::log_op, std::move(out), {a});
    c->backprop = [a, c] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < c->grad.size(); ++i)
            a->grad.vec()[i] += c->grad.vec()[i] / a->data.vec()[i];
    };
    return c;
}

// log(max(x, 1e-12)); derivative 0 inside the clamped region.
inline Var log_clamped(Var a) {
    Matrix out = a->data;
    for (double& x : out.vec()) x = std::log(x > kLogFloor ? x : kLogFloor);
    Var c = a->graph->adopt(Op::log_clamped, std::move(out), {a});
    c->backprop = [a, c] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < c->grad.size(); ++i) {
            const double x = a->data.vec()[i];
            if (x > kLogFloor) a->grad.vec()[i] += c->grad.vec()[i] / x;
        }
    };
    return c;
}

inline Var relu(Var a) {
    Matrix out = a->data;
    for (double& x : out.vec())
        if (x < 0.0) x = 0.0;
    Var c = a->graph->adopt(Op::relu, std::move(out), {a});
    c->backprop = [a, c] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < c->grad.size(); ++i)
            if (a->data.vec()[i] > 0.0) a->grad.vec()[i] += c->grad.vec()[i];
    };
    return c;
}

inline Var softmax_rows(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    if (m == 0) throw std::invalid_argument("row-softmax: empty rows");
    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = a->data(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, a->data(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            out(i, j) = std::exp(a->data(i, j) - mx);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
    }
    Var c = a->graph->adopt(Op::softmax_rows, std::move(out), {a});
    c->backprop = [a, c, n, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += c->grad(i, j) * c->data(i, j);
            for (std::size_t j = 0; j < m; ++j)
                a->grad(i, j) += c->data(i, j) * (c->grad(i, j) - dot);
        }
    };
    return c;
}

// Rows scaled to unit l2 norm. An all-zero row stays zero and contributes
// zero gradient.
inline Var l2norm_rows(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    Matrix out(n, m);
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += a->data(i, j) * a->data(i, j);
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0)
            for (std::size_t j = 0; j < m; ++j) out(i, j) = 0.0;
        else
            for (std::size_t j = 0; j < m; ++j) out(i, j) = a->data(i, j) / norms[i];
    }
    Var c = a->graph->adopt(Op::l2norm_rows, std::move(out), {a});
    c->backprop = [a, c, n, m, norms = std::move(norms)] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            if (norms[i] == 0.0) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += c->grad(i, j) * c->data(i, j);
            for (std::size_t j = 0; j < m; ++j)
                a->grad(i, j) += (c->grad(i, j) - c->data(i, j) * dot) / norms[i];
        }
    };
    return c;
}

// Row-wise log(sum(exp(x))), max-shifted for stability. nxm -> nx1.
inline Var logsumexp_rows(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    if (m == 0) throw std::invalid_argument("log-sum-exp: empty rows");
    Matrix out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = a->data(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, a->data(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(a->data(i, j) - mx);
        out(i, 0) = std::log(z) + mx;
    }
    Var c = a->graph->adopt(Op::logsumexp_rows, std::move(out), {a});
    c->backprop = [a, c, n, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = c->grad(i, 0);
            if (g == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j)
                a->grad(i, j) += g * std::exp(a->data(i, j) - c->data(i, 0));
        }
    };
    return c;
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double x : a->data.vec()) s += x;
    Var c = a->graph->adopt(Op::sum, Matrix(1, 1, s), {a});
    c->backprop = [a, c] {
        if (!a->requires_grad) return;
        const double g = c->grad(0, 0);
        for (double& x : a->grad.vec()) x += g;
    };
    return c;
}

// Mean over all entries.
inline Var mean(Var a) {
    if (a->data.size() == 0) throw std::invalid_argument("mean: empty matrix");
    double s = 0.0;
    for (double x : a->data.vec()) s += x;
    const double inv = 1.0 / static_cast<double>(a->data.size());
    Var c = a->graph->adopt(Op::mean, Matrix(1, 1, s * inv), {a});
    c->backprop = [a, c, inv] {
        if (!a->requires_grad) return;
        const double g = c->grad(0, 0) * inv;
        for (double& x : a->grad.vec()) x += g;
    };
    return c;
}

inline Var rowsum(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    Matrix out(n, 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, 0) += a->data(i, j);
    Var c = a->graph->adopt(Op::rowsum, std::move(out), {a});
    c->backprop = [a, c, n, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) a->grad(i, j) += c->grad(i, 0);
    };
    return c;
}

inline Var colsum(Var a) {
    const std::size_t n = a->rows(), m = a->cols();
    Matrix out(1, m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(0, j) += a->data(i, j);
    Var c = a->graph->adopt(Op::colsum, std::move(out), {a});
    c->backprop = [a, c, n, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) a->grad(i, j) += c->grad(0, j);
    };
    return c;
}

inline Var concat_cols(Var a, Var b) {
    detail::check_same_graph(a, b, Op::concat_cols);
    if (a->rows() != b->rows()) detail::shape_error(Op::concat_cols, a->data, b->data);
    const std::size_t n = a->rows(), ma = a->cols(), mb = b->cols();
    Matrix out(n, ma + mb);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ma; ++j) out(i, j) = a->data(i, j);
        for (std::size_t j = 0; j < mb; ++j) out(i, ma + j) = b->data(i, j);
    }
    Var c = a->graph->adopt(Op::concat_cols, std::move(out), {a, b});
    c->backprop = [a, b, c, n, ma, mb] {
        for (std::size_t i = 0; i < n; ++i) {
            if (a->requires_grad)
                for (std::size_t j = 0; j < ma; ++j) a->grad(i, j) += c->grad(i, j);
            if (b->requires_grad)
                for (std::size_t j = 0; j < mb; ++j) b->grad(i, j) += c->grad(i, ma + j);
        }
    };
    return c;
}

// Rows [r0, r1) of a.
inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > a->rows())
        throw std::invalid_argument("slice-rows: invalid range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") for " + a->data.shape_str());
    const std::size_t m = a->cols();
    Matrix out(r1 - r0, m);
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i - r0, j) = a->data(i, j);
    Var c = a->graph->adopt(Op::slice_rows, std::move(out), {a});
    c->backprop = [a, c, r0, r1, m] {
        if (!a->requires_grad) return;
        for (std::size_t i = r0; i < r1; ++i)
            for (std::size_t j = 0; j < m; ++j) a->grad(i, j) += c->grad(i - r0, j);
    };
    return c;
}

// Single entry as a 1x1 scalar node.
inline Var pick(Var a, std::size_t i, std::size_t j) {
    if (i >= a->rows() || j >= a->cols())
        throw std::invalid_argument("pick: index out of range for " + a->data.shape_str());
    Var c = a->graph->adopt(Op::pick, Matrix(1, 1, a->data(i, j)), {a});
    c->backprop = [a, c, i, j] {
        if (a->requires_grad) a->grad(i, j) += c->grad(0, 0);
    };
    return c;
}

// ---------------------------------------------------------------------------
// Composites.
// ---------------------------------------------------------------------------

// Pairwise cosine similarities between the rows of a and the rows of b:
// out[i][j] = (a_i / |a_i|) . (b_j / |b_j|). Zero rows yield zero similarity.
inline Var cosine_similarity(Var a, Var b) {
    detail::check_same_graph(a, b, Op::matmul);
    if (a->cols() != b->cols())
        throw std::invalid_argument("cosine-similarity: dimension mismatch (" +
                                    a->data.shape_str() + " vs " + b->data.shape_str() + ")");
    return matmul(l2norm_rows(a), transpose(l2norm_rows(b)));
}

// Row-wise dot products of two same-shape matrices: nxm, nxm -> nx1.
inline Var rowdot(Var a, Var b) { return rowsum(mul(a, b)); }

} // namespace fea
