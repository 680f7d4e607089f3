#pragma once

// Transformer building blocks shared by the vision backbone and the decoder.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "damkit/num/graph.hpp"
#include "damkit/num/tensor.hpp"
#include "damkit/rng.hpp"

namespace damkit::nn {

using num::Graph;
using num::Param;
using num::ParamRefs;
using num::Shape;
using num::Tensor;
using num::Var;

/// Deterministic per-tensor initializer: tensor k of a model draws from
/// stream fork(k) of the model seed, so adding a tensor never reshuffles the
/// others.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : root_(seed) {}

    template <class T>
    Tensor<T> normal(Shape shape, double stddev) {
        auto rng = root_.fork(next_++);
        return Tensor<T>::randn(std::move(shape), rng, stddev);
    }

    template <class T>
    Tensor<T> constant(Shape shape, T v) {
        ++next_;
        return Tensor<T>(std::move(shape), v);
    }

private:
    CounterRng root_;
    std::uint64_t next_ = 0;
};

template <class T>
struct Linear {
    Param<T> w;  // [in, out]
    Param<T> b;  // [out]

    static Linear make(const std::string& name, std::size_t in, std::size_t out, Initializer& init,
                       double gain = 1.0) {
        return {Param<T>(name + ".w", init.normal<T>({in, out}, gain / std::sqrt(static_cast<double>(in)))),
                Param<T>(name + ".b", init.constant<T>({out}, T{0}))};
    }
    static Linear zeros(const std::string& name, std::size_t in, std::size_t out, Initializer& init) {
        return {Param<T>(name + ".w", init.constant<T>({in, out}, T{0})),
                Param<T>(name + ".b", init.constant<T>({out}, T{0}))};
    }
    void collect(ParamRefs<T>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <class T>
struct LayerNorm {
    Param<T> gain;
    Param<T> bias;

    static LayerNorm make(const std::string& name, std::size_t dim, Initializer& init) {
        return {Param<T>(name + ".gain", init.constant<T>({dim}, T{1})),
                Param<T>(name + ".bias", init.constant<T>({dim}, T{0}))};
    }
    void collect(ParamRefs<T>& out) {
        out.push_back(&gain);
        out.push_back(&bias);
    }
};

template <class T>
struct Attention {
    Linear<T> q, k, v, o;

    static Attention make(const std::string& name, std::size_t dim, Initializer& init) {
        return {Linear<T>::make(name + ".q", dim, dim, init), Linear<T>::make(name + ".k", dim, dim, init),
                Linear<T>::make(name + ".v", dim, dim, init), Linear<T>::make(name + ".o", dim, dim, init, 0.5)};
    }
    void collect(ParamRefs<T>& out) {
        q.collect(out);
        k.collect(out);
        v.collect(out);
        o.collect(out);
    }
};

template <class T>
struct Ffn {
    Linear<T> up, down;

    static Ffn make(const std::string& name, std::size_t dim, std::size_t hidden, Initializer& init) {
        return {Linear<T>::make(name + ".up", dim, hidden, init), Linear<T>::make(name + ".down", hidden, dim, init, 0.5)};
    }
    void collect(ParamRefs<T>& out) {
        up.collect(out);
        down.collect(out);
    }
};

/// Pre-norm transformer block: h + Attn(LN(h)), then + FFN(LN(.)).
template <class T>
struct Block {
    LayerNorm<T> ln1;
    Attention<T> attn;
    LayerNorm<T> ln2;
    Ffn<T> ffn;

    static Block make(const std::string& name, std::size_t dim, std::size_t hidden, Initializer& init) {
        return {LayerNorm<T>::make(name + ".ln1", dim, init), Attention<T>::make(name + ".attn", dim, init),
                LayerNorm<T>::make(name + ".ln2", dim, init), Ffn<T>::make(name + ".ffn", dim, hidden, init)};
    }
    void collect(ParamRefs<T>& out) {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        ffn.collect(out);
    }
};

template <class T>
Var<T> linear(Var<T> x, Linear<T>& l) {
    auto& g = *x.graph;
    return num::add(num::matmul(x, g.param(l.w)), g.param(l.b));
}

template <class T>
Var<T> layer_norm(Var<T> x, LayerNorm<T>& ln) {
    auto& g = *x.graph;
    return num::layer_norm_lastdim(x, g.param(ln.gain), g.param(ln.bias));
}

template <class T>
Var<T> feed_forward(Var<T> x, Ffn<T>& f) {
    return linear(num::gelu(linear(x, f.up)), f.down);
}

/// True when a query at `query_pos` may attend to a key at `key_pos` under the
/// decoder's causal rule. Vision tokens occupy the first positions, so every
/// text position sees all of them.
inline bool causal_visible(std::size_t query_pos, std::size_t key_pos) noexcept { return key_pos <= query_pos; }

/// Multi-head scaled dot-product attention with queries from `queries` and
/// keys/values from `context`.
template <class T>
Var<T> attention(Var<T> queries, Var<T> context, Attention<T>& p, std::size_t heads, bool causal = false) {
    const auto Q = linear(queries, p.q);
    const auto K = linear(context, p.k);
    const auto V = linear(context, p.v);
    const std::size_t dim = Q.value().cols();
    if (heads == 0 || dim % heads != 0)
        throw ShapeMismatch("attention: width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                            " heads");
    const std::size_t dh = dim / heads;
    const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = num::slice_lastdim(Q, h * dh, (h + 1) * dh);
        const auto kh = num::slice_lastdim(K, h * dh, (h + 1) * dh);
        const auto vh = num::slice_lastdim(V, h * dh, (h + 1) * dh);
        const auto scores = num::mul_scalar(num::matmul(qh, num::transpose(kh)), inv_scale);
        outs.push_back(num::matmul(num::softmax_lastdim(scores, causal), vh));
    }
    const auto merged = heads == 1 ? outs.front() : num::concat_lastdim(outs);
    return linear(merged, p.o);
}

template <class T>
Var<T> block_forward(Var<T> h, Block<T>& b, std::size_t heads, bool causal = false) {
    const auto n1 = layer_norm(h, b.ln1);
    h = num::add(h, attention(n1, n1, b.attn, heads, causal));
    return num::add(h, feed_forward(layer_norm(h, b.ln2), b.ffn));
}

}  // namespace damkit::nn
