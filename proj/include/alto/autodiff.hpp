#pragma once

#include <cassert>
#include <functional>
#include <utility>
#include <vector>

#include "alto/tensor.hpp"

namespace alto {

template <typename S>
class Graph;

// Handle to a node on a Graph's tape. Cheap to copy; invalidated when the
// graph is destroyed or reset.
template <typename S>
struct Var {
    Graph<S>* g = nullptr;
    int id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor<S>& val() const;
    const Tensor<S>& grad() const;
};

// Reverse-mode tape. Ops evaluate eagerly and push a backward closure;
// backward() replays the tape in reverse creation order, which is a valid
// topological order because every op only consumes existing nodes.
template <typename S>
class Graph {
public:
    using BackFn = std::function<void()>;

    struct Node {
        Tensor<S> val;
        Tensor<S> grad;            // allocated on first accumulation
        bool requires_grad = false;
        bool grad_live = false;
        BackFn back;               // empty for leaves and no-grad ops
    };

    Graph() : stamp_(next_stamp()) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Unique per-graph identity; modules use it to cache their leaf ids so a
    // parameter used twice in one graph maps to a single node.
    int stamp() const { return stamp_; }

    Var<S> leaf(Tensor<S> v, bool requires_grad) {
        nodes.push_back(Node{std::move(v), {}, requires_grad, false, {}});
        return {this, static_cast<int>(nodes.size()) - 1};
    }

    Var<S> constant(Tensor<S> v) { return leaf(std::move(v), false); }

    Var<S> make(Tensor<S> out, bool requires_grad, BackFn back) {
        nodes.push_back(Node{std::move(out), {}, requires_grad, false,
                             requires_grad ? std::move(back) : BackFn{}});
        return {this, static_cast<int>(nodes.size()) - 1};
    }

    const Tensor<S>& val(int id) const { return nodes[static_cast<size_t>(id)].val; }
    Tensor<S>& val_mut(int id) { return nodes[static_cast<size_t>(id)].val; }
    bool requires_grad(int id) const { return nodes[static_cast<size_t>(id)].requires_grad; }

    // Gradient buffer of a node, zero-initialized on first touch.
    Tensor<S>& grad_buf(int id) {
        Node& n = nodes[static_cast<size_t>(id)];
        if (!n.grad_live) {
            n.grad = Tensor<S>(n.val.shape);
            n.grad_live = true;
        }
        return n.grad;
    }

    bool grad_live(int id) const { return nodes[static_cast<size_t>(id)].grad_live; }

    const Tensor<S>& grad(int id) const {
        const Node& n = nodes[static_cast<size_t>(id)];
        assert(n.grad_live);
        return n.grad;
    }

    // Backpropagate from a scalar loss node.
    void backward(Var<S> loss) {
        assert(loss.g == this);
        assert(val(loss.id).numel() == 1);
        grad_buf(loss.id).fill(S(1));
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes[static_cast<size_t>(i)];
            if (n.grad_live && n.back) n.back();
        }
    }

    size_t size() const { return nodes.size(); }

    std::vector<Node> nodes;

private:
    int stamp_;
    static int next_stamp() {
        static int counter = 0;
        return ++counter;
    }
};

template <typename S>
const Tensor<S>& Var<S>::val() const {
    return g->val(id);
}

template <typename S>
const Tensor<S>& Var<S>::grad() const {
    return g->grad(id);
}

namespace detail {

// Accumulate src into the grad buffer of node id if that node wants grads.
template <typename S>
inline void accum(Graph<S>* g, int id, const Tensor<S>& src) {
    if (!g->requires_grad(id)) return;
    Tensor<S>& dst = g->grad_buf(id);
    assert(dst.shape == src.shape);
    const int64_t n = src.numel();
    S* __restrict__ dp = dst.data();
    const S* __restrict__ sp = src.data();
    for (int64_t i = 0; i < n; ++i) dp[i] += sp[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    assert(a.val().shape == b.val().shape);
    Tensor<S> out(a.val().shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] + b.val()[i];
    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io] {
        const Tensor<S>& go = g->grad(io);
        detail::accum(g, ia, go);
        detail::accum(g, ib, go);
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    assert(a.val().shape == b.val().shape);
    Tensor<S> out(a.val().shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] - b.val()[i];
    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io] {
        const Tensor<S>& go = g->grad(io);
        detail::accum(g, ia, go);
        if (g->requires_grad(ib)) {
            Tensor<S>& gb = g->grad_buf(ib);
            for (int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
        }
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    assert(a.val().shape == b.val().shape);
    Tensor<S> out(a.val().shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] * b.val()[i];
    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io] {
        const Tensor<S>& go = g->grad(io);
        if (g->requires_grad(ia)) {
            Tensor<S>& ga = g->grad_buf(ia);
            const Tensor<S>& vb = g->val(ib);
            for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb[i];
        }
        if (g->requires_grad(ib)) {
            Tensor<S>& gb = g->grad_buf(ib);
            const Tensor<S>& va = g->val(ia);
            for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
        }
    });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
    Graph<S>* g = a.g;
    assert(a.val().shape == b.val().shape);
    Tensor<S> out(a.val().shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] / b.val()[i];
    bool rg = g->requires_grad(a.id) || g->requires_grad(b.id);
    int ia = a.id, ib = b.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), rg, [g, ia, ib, io] {
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& vb = g->val(ib);
        const Tensor<S>& vo = g->val(io);
        if (g->requires_grad(ia)) {
            Tensor<S>& ga = g->grad_buf(ia);
            for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / vb[i];
        }
        if (g->requires_grad(ib)) {
            Tensor<S>& gb = g->grad_buf(ib);
            for (int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i] * vo[i] / vb[i];
        }
    });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
    Graph<S>* g = a.g;
    Tensor<S> out(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * c;
    int ia = a.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ia), [g, ia, io, c] {
        if (!g->requires_grad(ia)) return;
        const Tensor<S>& go = g->grad(io);
        Tensor<S>& ga = g->grad_buf(ia);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * c;
    });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
    Graph<S>* g = a.g;
    Tensor<S> out(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + c;
    int ia = a.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ia), [g, ia, io] {
        detail::accum(g, ia, g->grad(io));
    });
}

template <typename S>
Var<S> relu(Var<S> a) {
    Graph<S>* g = a.g;
    Tensor<S> out(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] > S(0) ? a.val()[i] : S(0);
    int ia = a.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ia), [g, ia, io] {
        if (!g->requires_grad(ia)) return;
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& va = g->val(ia);
        Tensor<S>& ga = g->grad_buf(ia);
        for (int64_t i = 0; i < go.numel(); ++i)
            if (va[i] > S(0)) ga[i] += go[i];
    });
}

// sqrt(x + eps); the eps guard keeps the derivative finite at x = 0.
template <typename S>
Var<S> sqrt_eps(Var<S> a, S eps) {
    Graph<S>* g = a.g;
    Tensor<S> out(a.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::sqrt(a.val()[i] + eps);
    int ia = a.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ia), [g, ia, io] {
        if (!g->requires_grad(ia)) return;
        const Tensor<S>& go = g->grad(io);
        const Tensor<S>& vo = g->val(io);
        Tensor<S>& ga = g->grad_buf(ia);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * S(0.5) / vo[i];
    });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
    Graph<S>* g = a.g;
    S acc = 0;
    for (int64_t i = 0; i < a.val().numel(); ++i) acc += a.val()[i];
    Tensor<S> out(Shape{1});
    out[0] = acc;
    int ia = a.id, io = static_cast<int>(g->size());
    return g->make(std::move(out), g->requires_grad(ia), [g, ia, io] {
        if (!g->requires_grad(ia)) return;
        const S go = g->grad(io)[0];
        Tensor<S>& ga = g->grad_buf(ia);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
    });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    const S inv = S(1) / static_cast<S>(a.val().numel());
    return scale(sum_all(a), inv);
}

} // namespace alto
