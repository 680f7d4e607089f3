#pragma once

// Reverse-mode differentiation over a fixed set of dense ops.
//
// A Graph records nodes in creation order; backward() visits them in reverse
// and each op's rule accumulates into its inputs' gradients. Parameter leaves
// are bound once per graph, so a weight used twice (shared blocks) receives
// the sum of both contributions. A graph is single-threaded; build one per
// thread.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "damkit/error.hpp"
#include "damkit/num/tensor.hpp"

namespace damkit::num {

template <class T>
class Graph;

template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return graph->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&)>;

    /// In checking mode every op output is scanned for NaN/Inf.
    explicit Graph(bool checking = false) : checking_(checking) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool checking() const noexcept { return checking_; }

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

    /// Leaf bound to a Param; repeated calls return the same node.
    Var<T> param(Param<T>& p) {
        if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
        auto v = push(Tensor<T>(p.value), true, {});
        nodes_[v.id].param = &p;
        bound_.emplace(&p, v.id);
        return v;
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient buffer of v, allocated as zeros on first use.
    Tensor<T>& grad(Var<T> v) {
        auto& n = nodes_.at(v.id);
        if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(Var<T> v) const { return nodes_.at(v.id).grad.shape() == nodes_.at(v.id).value.shape(); }

    /// Output node of an op. `inputs` decide whether it needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn, const char* op) {
        bool needs = false;
        for (auto in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
        return record_if(std::move(value), needs, std::move(fn), op);
    }

    Var<T> record_if(Tensor<T> value, bool needs_grad, BackwardFn fn, const char* op) {
        if (checking_ && !value.all_finite()) throw NonFinite(std::string("non-finite output from ") + op);
        return push(std::move(value), needs_grad, needs_grad ? std::move(fn) : BackwardFn{});
    }

    /// Back-propagates from a single-element node and adds the result into
    /// every bound Param's grad.
    void backward(Var<T> loss) {
        if (value(loss).size() != 1) throw ShapeMismatch("backward needs a scalar, got " + shape_str(value(loss).shape()));
        grad(loss)[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.shape() != n.value.shape()) continue;
            if (n.backward) n.backward(*this);
        }
        for (auto& n : nodes_) {
            if (!n.param || n.grad.shape() != n.value.shape()) continue;
            auto& pg = n.param->grad;
            if (pg.shape() != n.value.shape()) pg = Tensor<T>(n.value.shape());
            for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        BackwardFn backward;
        Param<T>* param = nullptr;
        bool requires_grad = false;
    };

    Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), Tensor<T>{}, std::move(fn), nullptr, needs_grad});
        return {this, nodes_.size() - 1};
    }

    bool checking_;
    std::deque<Node> nodes_;
    std::unordered_map<const Param<T>*, std::size_t> bound_;
};

namespace detail {

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw ShapeMismatch(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n], all row-major and non-overlapping.
template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    auto& g = *a.graph;
    const auto& A = a.value();
    const auto& B = b.value();
    detail::require_rank2(A, "matmul");
    detail::require_rank2(B, "matmul");
    if (A.cols() != B.rows())
        throw ShapeMismatch("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> C({m, n});
    detail::gemm_acc(A.data(), B.data(), C.data(), m, k, n);
    return g.record(std::move(C), {a, b}, [a, b, m, k, n, out = g.size()](Graph<T>& gr) {
        const auto& dC = gr.grad(Var<T>{&gr, out});
        const auto& A = gr.value(a);
        const auto& B = gr.value(b);
        if (gr.requires_grad(a)) {
            // dA += dC * B^T
            std::vector<T> bt(n * k);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
            detail::gemm_acc(dC.data(), bt.data(), gr.grad(a).data(), m, n, k);
        }
        if (gr.requires_grad(b)) {
            // dB += A^T * dC
            std::vector<T> at(k * m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) at[p * m + i] = A[i * k + p];
            detail::gemm_acc(at.data(), dC.data(), gr.grad(b).data(), k, m, n);
        }
    }, "matmul");
}

template <class T>
Var<T> transpose(Var<T> a) {
    auto& g = *a.graph;
    const auto& A = a.value();
    detail::require_rank2(A, "transpose");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    return g.record(std::move(out), {a}, [a, m, n, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        auto& da = gr.grad(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da[i * n + j] += d[j * m + i];
    }, "transpose");
}

/// Elementwise sum of equal shapes, or bias-add when b is 1-D with the size of
/// a's last dimension.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    auto& g = *a.graph;
    const auto& A = a.value();
    const auto& B = b.value();
    const bool same = A.shape() == B.shape();
    const bool bias = !same && B.rank() == 1 && A.rank() >= 1 && B.size() == A.last_dim();
    if (!same && !bias) throw ShapeMismatch("add: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
    Tensor<T> out(A);
    const std::size_t n = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[bias ? i % n : i];
    return g.record(std::move(out), {a, b}, [a, b, bias, n, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        if (gr.requires_grad(a)) detail::accumulate(gr.grad(a), d);
        if (gr.requires_grad(b)) {
            auto& db = gr.grad(b);
            if (bias)
                for (std::size_t i = 0; i < d.size(); ++i) db[i % n] += d[i];
            else
                detail::accumulate(db, d);
        }
    }, "add");
}

template <class T>
Var<T> mul_scalar(Var<T> a, T c) {
    auto& g = *a.graph;
    Tensor<T> out(a.value());
    for (auto& v : out.values()) v *= c;
    return g.record(std::move(out), {a}, [a, c, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        auto& da = gr.grad(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[i] += c * d[i];
    }, "mul_scalar");
}

/// s * a where s is a single-element node (e.g. a tanh gate).
template <class T>
Var<T> scale(Var<T> a, Var<T> s) {
    auto& g = *a.graph;
    if (s.value().size() != 1) throw ShapeMismatch("scale: factor must have one element, got " + shape_str(s.shape()));
    const T sv = s.value()[0];
    Tensor<T> out(a.value());
    for (auto& v : out.values()) v = sv * v;
    return g.record(std::move(out), {a, s}, [a, s, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        const T sv = gr.value(s)[0];
        const auto& A = gr.value(a);
        if (gr.requires_grad(a)) {
            auto& da = gr.grad(a);
            for (std::size_t i = 0; i < d.size(); ++i) da[i] += sv * d[i];
        }
        if (gr.requires_grad(s)) {
            T acc{0};
            for (std::size_t i = 0; i < d.size(); ++i) acc += A[i] * d[i];
            gr.grad(s)[0] += acc;
        }
    }, "scale");
}

template <class T>
Var<T> tanh(Var<T> a) {
    auto& g = *a.graph;
    Tensor<T> out(a.value());
    for (auto& v : out.values()) v = std::tanh(v);
    return g.record(std::move(out), {a}, [a, o = g.size()](Graph<T>& gr) {
        const Var<T> self{&gr, o};
        const auto& d = gr.grad(self);
        const auto& y = gr.value(self);
        auto& da = gr.grad(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[i] += (T{1} - y[i] * y[i]) * d[i];
    }, "tanh");
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(Var<T> a) {
    auto& g = *a.graph;
    Tensor<T> out(a.value());
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (auto& v : out.values()) v = T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2));
    return g.record(std::move(out), {a}, [a, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        const auto& x = gr.value(a);
        auto& da = gr.grad(a);
        const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
        const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        for (std::size_t i = 0; i < d.size(); ++i) {
            const T cdf = T(0.5) * (T{1} + std::erf(x[i] * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
            da[i] += (cdf + x[i] * pdf) * d[i];
        }
    }, "gelu");
}

/// Softmax over the last dimension. With `causal`, row i of a matrix only
/// spans columns [0, i + causal_offset]; the rest get probability 0.
template <class T>
Var<T> softmax_lastdim(Var<T> a, bool causal = false, std::size_t causal_offset = 0) {
    auto& g = *a.graph;
    const auto& A = a.value();
    if (A.rank() < 1) throw ShapeMismatch("softmax_lastdim: rank-0 input");
    if (causal) detail::require_rank2(A, "softmax_lastdim(causal)");
    const std::size_t n = A.last_dim();
    const std::size_t rows = A.size() / n;
    Tensor<T> out(A.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t span = causal ? std::min(n, r + causal_offset + 1) : n;
        const T* x = A.data() + r * n;
        T* y = out.data() + r * n;
        T mx = x[0];
        for (std::size_t j = 1; j < span; ++j) mx = std::max(mx, x[j]);
        T sum{0};
        for (std::size_t j = 0; j < span; ++j) sum += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < span; ++j) y[j] /= sum;
    }
    return g.record(std::move(out), {a}, [a, n, rows, o = g.size()](Graph<T>& gr) {
        const Var<T> self{&gr, o};
        const auto& d = gr.grad(self);
        const auto& y = gr.value(self);
        auto& da = gr.grad(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * n;
            const T* dr = d.data() + r * n;
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) dot += yr[j] * dr[j];
            T* out = da.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) out[j] += yr[j] * (dr[j] - dot);
        }
    }, "softmax_lastdim");
}

/// Normalizes each row of the last dimension to zero mean and unit variance,
/// then applies gain and bias (both 1-D with the last dimension's size).
template <class T>
Var<T> layer_norm_lastdim(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    auto& g = *x.graph;
    const auto& X = x.value();
    const std::size_t n = X.last_dim();
    if (gain.value().shape() != Shape{n} || bias.value().shape() != Shape{n})
        throw ShapeMismatch("layer_norm_lastdim: input " + shape_str(X.shape()) + " with gain " +
                            shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
    const std::size_t rows = X.size() / n;
    Tensor<T> xhat(X.shape());
    std::vector<T> inv_std(rows);
    Tensor<T> out(X.shape());
    const auto& G = gain.value();
    const auto& B = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.data() + r * n;
        T mean{0};
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<T>(n);
        T var{0};
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(n);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (xr[j] - mean) * is;
            xhat[r * n + j] = h;
            out[r * n + j] = h * G[j] + B[j];
        }
    }
    return g.record(std::move(out), {x, gain, bias},
                    [x, gain, bias, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std),
                     o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        const auto& G = gr.value(gain);
        if (gr.requires_grad(gain) || gr.requires_grad(bias)) {
            auto& dg = gr.grad(gain);
            auto& db = gr.grad(bias);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) {
                    dg[j] += d[r * n + j] * xhat[r * n + j];
                    db[j] += d[r * n + j];
                }
        }
        if (gr.requires_grad(x)) {
            auto& dx = gr.grad(x);
            std::vector<T> dh(n);
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_dh{0}, mean_dh_h{0};
                for (std::size_t j = 0; j < n; ++j) {
                    dh[j] = d[r * n + j] * G[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * xhat[r * n + j];
                }
                mean_dh /= static_cast<T>(n);
                mean_dh_h /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j)
                    dx[r * n + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * n + j] * mean_dh_h);
            }
        }
    }, "layer_norm_lastdim");
}

/// Rows of `table` selected by `ids`.
template <class T>
Var<T> embedding_lookup(Var<T> table, const std::vector<int>& ids) {
    auto& g = *table.graph;
    const auto& W = table.value();
    detail::require_rank2(W, "embedding_lookup");
    const std::size_t dim = W.cols();
    Tensor<T> out({ids.size(), dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows())
            throw VocabOverflow("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                                std::to_string(W.rows()) + " rows");
        std::copy_n(W.data() + static_cast<std::size_t>(ids[i]) * dim, dim, out.data() + i * dim);
    }
    return g.record(std::move(out), {table}, [table, ids, dim, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        auto& dw = gr.grad(table);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < dim; ++j) dw[static_cast<std::size_t>(ids[i]) * dim + j] += d[i * dim + j];
    }, "embedding_lookup");
}

/// Stacks matrices along the sequence (row) axis.
template <class T>
Var<T> concat_seq(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw EmptyInput("concat_seq: no inputs");
    auto& g = *parts.front().graph;
    const std::size_t dim = parts.front().value().cols();
    std::size_t total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        detail::require_rank2(p.value(), "concat_seq");
        if (p.value().cols() != dim)
            throw ShapeMismatch("concat_seq: " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        total += p.value().rows();
        needs = needs || g.requires_grad(p);
    }
    Tensor<T> out({total, dim});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return g.record_if(std::move(out), needs, [parts, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t sz = gr.value(p).size();
            if (gr.requires_grad(p)) {
                auto& dp = gr.grad(p);
                for (std::size_t i = 0; i < sz; ++i) dp[i] += d[off + i];
            }
            off += sz;
        }
    }, "concat_seq");
}

/// Rows [begin, end).
template <class T>
Var<T> slice_seq(Var<T> a, std::size_t begin, std::size_t end) {
    auto& g = *a.graph;
    const auto& A = a.value();
    detail::require_rank2(A, "slice_seq");
    if (begin >= end || end > A.rows())
        throw ShapeMismatch("slice_seq: rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                            shape_str(A.shape()));
    const std::size_t dim = A.cols();
    Tensor<T> out({end - begin, dim});
    std::copy(A.data() + begin * dim, A.data() + end * dim, out.data());
    return g.record(std::move(out), {a}, [a, begin, dim, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        auto& da = gr.grad(a);
        for (std::size_t i = 0; i < d.size(); ++i) da[begin * dim + i] += d[i];
    }, "slice_seq");
}

/// Columns [begin, end) of a matrix; used to split attention heads.
template <class T>
Var<T> slice_lastdim(Var<T> a, std::size_t begin, std::size_t end) {
    auto& g = *a.graph;
    const auto& A = a.value();
    detail::require_rank2(A, "slice_lastdim");
    if (begin >= end || end > A.cols())
        throw ShapeMismatch("slice_lastdim: cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                            shape_str(A.shape()));
    const std::size_t rows = A.rows(), n = A.cols(), w = end - begin;
    Tensor<T> out({rows, w});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(A.data() + r * n + begin, w, out.data() + r * w);
    return g.record(std::move(out), {a}, [a, begin, rows, n, w, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        auto& da = gr.grad(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) da[r * n + begin + j] += d[r * w + j];
    }, "slice_lastdim");
}

/// Joins matrices side by side; inverse of slice_lastdim.
template <class T>
Var<T> concat_lastdim(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw EmptyInput("concat_lastdim: no inputs");
    auto& g = *parts.front().graph;
    const std::size_t rows = parts.front().value().rows();
    std::size_t total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        detail::require_rank2(p.value(), "concat_lastdim");
        if (p.value().rows() != rows)
            throw ShapeMismatch("concat_lastdim: " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        total += p.value().cols();
        needs = needs || g.requires_grad(p);
    }
    Tensor<T> out({rows, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& P = p.value();
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.data() + r * P.cols(), P.cols(), out.data() + r * total + off);
        off += P.cols();
    }
    return g.record_if(std::move(out), needs, [parts, rows, total, o = g.size()](Graph<T>& gr) {
        const auto& d = gr.grad(Var<T>{&gr, o});
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t w = gr.value(p).cols();
            if (gr.requires_grad(p)) {
                auto& dp = gr.grad(p);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) dp[r * w + j] += d[r * total + off + j];
            }
            off += w;
        }
    }, "concat_lastdim");
}

/// Mean over rows of -log softmax(logits)[target]. Rows whose target is
/// negative are skipped (and excluded from the mean).
template <class T>
Var<T> cross_entropy_lastdim(Var<T> logits, const std::vector<int>& targets) {
    auto& g = *logits.graph;
    const auto& L = logits.value();
    detail::require_rank2(L, "cross_entropy_lastdim");
    if (targets.size() != L.rows())
        throw ShapeMismatch("cross_entropy_lastdim: " + std::to_string(targets.size()) + " targets for logits " +
                            shape_str(L.shape()));
    const std::size_t n = L.cols();
    Tensor<T> probs(L.shape());
    T loss{0};
    std::size_t counted = 0;
    for (std::size_t r = 0; r < L.rows(); ++r) {
        if (targets[r] < 0) continue;
        if (static_cast<std::size_t>(targets[r]) >= n)
            throw VocabOverflow("cross_entropy_lastdim: target " + std::to_string(targets[r]) + " >= " +
                                std::to_string(n));
        const T* x = L.data() + r * n;
        T mx = x[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) sum += (probs[r * n + j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= sum;
        loss += std::log(sum) + mx - x[targets[r]];
        ++counted;
    }
    if (counted == 0) throw EmptyInput("cross_entropy_lastdim: no scored rows");
    const T inv = T{1} / static_cast<T>(counted);
    return g.record(Tensor<T>::scalar(loss * inv), {logits},
                    [logits, targets, n, inv, probs = std::move(probs), o = g.size()](Graph<T>& gr) {
        const T up = gr.grad(Var<T>{&gr, o})[0];
        auto& dl = gr.grad(logits);
        for (std::size_t r = 0; r < targets.size(); ++r) {
            if (targets[r] < 0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                const T onehot = static_cast<std::size_t>(targets[r]) == j ? T{1} : T{0};
                dl[r * n + j] += up * inv * (probs[r * n + j] - onehot);
            }
        }
    }, "cross_entropy_lastdim");
}

/// sum(a .* w) for a constant weight tensor; turns any output into a scalar
/// probe for gradient checks.
template <class T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& w) {
    auto& g = *a.graph;
    if (a.value().shape() != w.shape())
        throw ShapeMismatch("weighted_sum: " + shape_str(a.shape()) + " vs " + shape_str(w.shape()));
    T s{0};
    for (std::size_t i = 0; i < w.size(); ++i) s += a.value()[i] * w[i];
    return g.record(Tensor<T>::scalar(s), {a}, [a, w, o = g.size()](Graph<T>& gr) {
        const T up = gr.grad(Var<T>{&gr, o})[0];
        auto& da = gr.grad(a);
        for (std::size_t i = 0; i < w.size(); ++i) da[i] += up * w[i];
    }, "weighted_sum");
}

}  // namespace damkit::num
