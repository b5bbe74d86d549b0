#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mltp/tensor.hpp"

namespace mltp {

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    neg,
    scale,     // x * c
    add_const, // x + c
    reciprocal,
    exp_op,
    log_op,
    sqrt_op,
    sigmoid,
    relu,
    matmul,
    transpose,
    reshape,
    broadcast, // broadcast_to(target)
    reduce,    // sum-reduce to target shape
    sum_axes,  // keepdim sum over an axis mask
    sum_all,
    conv,    // conv2d(x, k)
    conv_dx, // adjoint of conv w.r.t. input: (gy, k) -> x-shaped
    conv_dk, // adjoint of conv w.r.t. kernel: (x, gy) -> k-shaped
    gather,  // flat-index gather
    scatter, // flat-index scatter-add (adjoint of gather)
};

/// One differentiable value on a tape. Parents are tape indices and always
/// precede the node; a node built while grad recording is on, from parents
/// that require grad, is itself differentiable — including nodes created
/// inside a backward pass, which is what makes second derivatives exact.
template <class T>
struct Node {
    Tensor<T> value;
    Op op = Op::leaf;
    std::array<std::int32_t, 2> parents{-1, -1};
    bool requires_grad = false;

    // op payload
    T c{};                                                 // scale / add_const
    Shape aux_shape;                                       // reshape/broadcast/reduce target, conv input or kernel shape
    std::uint32_t axes_mask = 0;                           // sum_axes
    int stride = 1, pad = 0;                               // conv family
    std::shared_ptr<const std::vector<std::int64_t>> idx;  // gather/scatter
};

template <class T>
class Tape;

/// Lightweight handle to a tape node.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t numel() const { return value().numel(); }
    bool requires_grad() const;
};

/// Append-only record of nodes in topological creation order. When
/// `recording` is off, newly built nodes carry values but no parents, so
/// computation proceeds without growing a differentiable graph.
template <class T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
        Node<T> n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    Var<T> make(Op op, Tensor<T> value, Var<T> p0, Var<T> p1 = {}) {
        Node<T> n;
        n.value = std::move(value);
        if (recording && (p0.requires_grad() || p1.requires_grad())) {
            n.op = op;
            n.parents[0] = p0.id;
            n.parents[1] = p1.id;
            n.requires_grad = true;
        }
        return push(std::move(n));
    }

    std::size_t size() const { return nodes.size(); }

    std::vector<Node<T>> nodes;
    bool recording = true;

private:
    Var<T> push(Node<T> n) {
        nodes.push_back(std::move(n));
        return Var<T>{this, static_cast<std::int32_t>(nodes.size() - 1)};
    }
};

template <class T>
const Tensor<T>& Var<T>::value() const {
    return tape->nodes[static_cast<std::size_t>(id)].value;
}

template <class T>
bool Var<T>::requires_grad() const {
    return valid() && tape->nodes[static_cast<std::size_t>(id)].requires_grad;
}

/// Temporarily disables grad recording on a tape.
template <class T>
struct NoGradGuard {
    explicit NoGradGuard(Tape<T>& t) : tape(t), prev(t.recording) { tape.recording = false; }
    ~NoGradGuard() { tape.recording = prev; }
    Tape<T>& tape;
    bool prev;
};

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    return a.tape->make(Op::add, broadcast_binary(a.value(), b.value(), [](T x, T y) { return x + y; }), a, b);
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    return a.tape->make(Op::sub, broadcast_binary(a.value(), b.value(), [](T x, T y) { return x - y; }), a, b);
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    return a.tape->make(Op::mul, broadcast_binary(a.value(), b.value(), [](T x, T y) { return x * y; }), a, b);
}

template <class T>
Var<T> neg(Var<T> a) {
    return a.tape->make(Op::neg, map_unary(a.value(), [](T x) { return -x; }), a);
}

template <class T>
Var<T> scale(Var<T> a, T c) {
    Var<T> r = a.tape->make(Op::scale, map_unary(a.value(), [c](T x) { return x * c; }), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].c = c;
    return r;
}

template <class T>
Var<T> add_const(Var<T> a, T c) {
    Var<T> r = a.tape->make(Op::add_const, map_unary(a.value(), [c](T x) { return x + c; }), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].c = c;
    return r;
}

template <class T>
Var<T> reciprocal(Var<T> a) {
    return a.tape->make(Op::reciprocal, map_unary(a.value(), [](T x) { return T(1) / x; }), a);
}

template <class T>
Var<T> exp(Var<T> a) {
    return a.tape->make(Op::exp_op, map_unary(a.value(), [](T x) { return std::exp(x); }), a);
}

template <class T>
Var<T> log(Var<T> a) {
    return a.tape->make(Op::log_op, map_unary(a.value(), [](T x) { return std::log(x); }), a);
}

template <class T>
Var<T> sqrt(Var<T> a) {
    return a.tape->make(Op::sqrt_op, map_unary(a.value(), [](T x) { return std::sqrt(x); }), a);
}

template <class T>
Var<T> sigmoid(Var<T> a) {
    return a.tape->make(Op::sigmoid,
                        map_unary(a.value(), [](T x) { return T(1) / (T(1) + std::exp(-x)); }), a);
}

/// relu(x); the derivative at exactly 0 is taken as 0.
template <class T>
Var<T> relu(Var<T> a) {
    return a.tape->make(Op::relu, map_unary(a.value(), [](T x) { return x > T(0) ? x : T(0); }), a);
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    return a.tape->make(Op::matmul, matmul_value(a.value(), b.value()), a, b);
}

template <class T>
Var<T> transpose(Var<T> a) {
    return a.tape->make(Op::transpose, transpose2d_value(a.value()), a);
}

template <class T>
Var<T> reshape(Var<T> a, Shape target) {
    if (shape_numel(target) != a.numel())
        throw InvalidArgument("reshape " + shape_str(a.shape()) + " to " + shape_str(target) +
                              " changes element count");
    Tensor<T> v = a.value();
    Shape original = v.shape;
    v.shape = target;
    Var<T> r = a.tape->make(Op::reshape, std::move(v), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].aux_shape = std::move(original);
    return r;
}

template <class T>
Var<T> broadcast_to(Var<T> a, const Shape& target) {
    Shape original = a.shape();
    Var<T> r = a.tape->make(Op::broadcast, broadcast_to_value(a.value(), target), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].aux_shape = std::move(original);
    return r;
}

template <class T>
Var<T> reduce_to(Var<T> a, const Shape& target) {
    Shape original = a.shape();
    Var<T> r = a.tape->make(Op::reduce, reduce_to_value(a.value(), target), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].aux_shape = std::move(original);
    return r;
}

/// Keepdim sum over the axes whose bits are set in `axes_mask`.
template <class T>
Var<T> sum_axes(Var<T> a, std::uint32_t axes_mask) {
    Shape original = a.shape();
    Var<T> r = a.tape->make(Op::sum_axes, sum_axes_value(a.value(), axes_mask), a);
    auto& n = a.tape->nodes[static_cast<std::size_t>(r.id)];
    n.axes_mask = axes_mask;
    n.aux_shape = std::move(original);
    return r;
}

/// Sum of all elements as a [1]-shaped tensor.
template <class T>
Var<T> sum_all(Var<T> a) {
    Shape original = a.shape();
    Var<T> r = a.tape->make(Op::sum_all, Tensor<T>::scalar(sum_all_value(a.value())), a);
    a.tape->nodes[static_cast<std::size_t>(r.id)].aux_shape = std::move(original);
    return r;
}

template <class T>
Var<T> mean_all(Var<T> a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> k, int stride = 1, int pad = 0) {
    Var<T> r = x.tape->make(Op::conv, conv2d_value(x.value(), k.value(), stride, pad), x, k);
    auto& n = x.tape->nodes[static_cast<std::size_t>(r.id)];
    n.stride = stride;
    n.pad = pad;
    return r;
}

namespace detail {

template <class T>
Var<T> conv2d_dx(Var<T> gy, Var<T> k, int stride, int pad, const Shape& x_shape) {
    Var<T> r = gy.tape->make(Op::conv_dx,
                             conv2d_input_grad_value(gy.value(), k.value(), stride, pad, x_shape),
                             gy, k);
    auto& n = gy.tape->nodes[static_cast<std::size_t>(r.id)];
    n.stride = stride;
    n.pad = pad;
    n.aux_shape = x_shape;
    return r;
}

template <class T>
Var<T> conv2d_dk(Var<T> x, Var<T> gy, int stride, int pad, const Shape& k_shape) {
    Var<T> r = x.tape->make(Op::conv_dk,
                            conv2d_kernel_grad_value(x.value(), gy.value(), stride, pad, k_shape),
                            x, gy);
    auto& n = x.tape->nodes[static_cast<std::size_t>(r.id)];
    n.stride = stride;
    n.pad = pad;
    n.aux_shape = k_shape;
    return r;
}

template <class T>
Var<T> gather_flat(Var<T> x, std::shared_ptr<const std::vector<std::int64_t>> idx, Shape out_shape) {
    Var<T> r = x.tape->make(Op::gather, gather_flat_value(x.value(), *idx, out_shape), x);
    x.tape->nodes[static_cast<std::size_t>(r.id)].idx = std::move(idx);
    return r;
}

template <class T>
Var<T> scatter_flat(Var<T> v, std::shared_ptr<const std::vector<std::int64_t>> idx, Shape out_shape) {
    Var<T> r = v.tape->make(Op::scatter, scatter_flat_value(v.value(), *idx, out_shape), v);
    auto& n = v.tape->nodes[static_cast<std::size_t>(r.id)];
    n.idx = std::move(idx);
    n.aux_shape = v.shape();
    return r;
}

} // namespace detail

/// Per-window maximum; the gradient routes to the window argmax, first
/// occurrence in row-major scan on ties.
template <class T>
Var<T> max_pool2d(Var<T> x, int window, int stride) {
    auto [out, argmax] = maxpool2d_value(x.value(), window, stride);
    auto idx = std::make_shared<const std::vector<std::int64_t>>(std::move(argmax));
    Var<T> r = x.tape->make(Op::gather, std::move(out), x);
    x.tape->nodes[static_cast<std::size_t>(r.id)].idx = std::move(idx);
    return r;
}

/// Picks logits[i, labels[i]] as a [N]-shaped vector.
template <class T>
Var<T> take_per_row(Var<T> logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || labels.size() != s[0])
        throw InvalidArgument("take_per_row expects [N,K] logits and N labels");
    const std::int64_t K = static_cast<std::int64_t>(s[1]);
    auto idx = std::make_shared<std::vector<std::int64_t>>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= K)
            throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range [0," +
                                  std::to_string(K) + ") at row " + std::to_string(i));
        (*idx)[i] = static_cast<std::int64_t>(i) * K + labels[i];
    }
    return detail::gather_flat(logits, std::shared_ptr<const std::vector<std::int64_t>>(idx),
                               Shape{s[0]});
}

/// Mean over the batch of -log softmax(logits)[label]. Stabilized by row-max
/// subtraction; the subtracted row maxima are numeric constants, which leaves
/// every derivative of the expression exact.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw InvalidArgument("softmax_cross_entropy expects [N,K] logits");
    const std::size_t N = s[0], K = s[1];
    if (labels.size() != N) throw InvalidArgument("softmax_cross_entropy labels/batch mismatch");
    Tensor<T> rowmax(Shape{N, 1});
    for (std::size_t i = 0; i < N; ++i) {
        T m = logits.value().data[i * K];
        for (std::size_t j = 1; j < K; ++j) m = std::max(m, logits.value().data[i * K + j]);
        rowmax.data[i] = m;
    }
    Var<T> m = logits.tape->leaf(std::move(rowmax));
    Var<T> z = sub(logits, m);
    Var<T> se = sum_axes(exp(z), 1u << 1); // [N,1]
    Var<T> lse = add(log(se), m);          // [N,1]
    Var<T> picked = take_per_row(logits, labels);
    Var<T> per_row = sub(reshape(lse, Shape{N}), picked);
    return scale(sum_all(per_row), T(1) / static_cast<T>(N));
}

// operator sugar
template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T> Var<T> operator-(Var<T> a) { return neg(a); }
template <class T> Var<T> operator*(Var<T> a, T c) { return scale(a, c); }
template <class T> Var<T> operator*(T c, Var<T> a) { return scale(a, c); }
template <class T> Var<T> operator+(Var<T> a, T c) { return add_const(a, c); }
template <class T> Var<T> operator-(Var<T> a, T c) { return add_const(a, -c); }

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
Var<T> reduce_if_needed(Var<T> adj, const Shape& target) {
    return adj.shape() == target ? adj : reduce_to(adj, target);
}

/// Adjoint contributions of one node, expressed through the same primitives;
/// with recording on they are differentiable nodes themselves.
template <class T>
void accumulate_vjp(Tape<T>& tape, std::int32_t nid, Var<T> adj, std::vector<std::int32_t>& adjoint) {
    // Copy payloads and shapes by value: references into tape.nodes go stale
    // as soon as a vjp builds nodes (vector reallocation).
    const Node<T>& n0 = tape.nodes[static_cast<std::size_t>(nid)];
    const Op op = n0.op;
    const auto parents = n0.parents;
    const T c = n0.c;
    const Shape aux = n0.aux_shape;
    const int stride = n0.stride, pad = n0.pad;
    auto idx = n0.idx;
    const Var<T> self{&tape, nid};
    const Var<T> p0{&tape, parents[0]};
    const Var<T> p1{&tape, parents[1]};
    const bool g0 = p0.requires_grad();
    const bool g1 = p1.requires_grad();
    const Shape s0 = p0.valid() ? p0.value().shape : Shape{};
    const Shape s1 = p1.valid() ? p1.value().shape : Shape{};

    auto put = [&tape, &adjoint](Var<T> p, Var<T> contrib) {
        auto& slot = adjoint[static_cast<std::size_t>(p.id)];
        slot = (slot < 0) ? contrib.id : add(Var<T>{&tape, slot}, contrib).id;
    };

    switch (op) {
        case Op::leaf:
            break;
        case Op::add:
            if (g0) put(p0, reduce_if_needed(adj, s0));
            if (g1) put(p1, reduce_if_needed(adj, s1));
            break;
        case Op::sub:
            if (g0) put(p0, reduce_if_needed(adj, s0));
            if (g1) put(p1, reduce_if_needed(neg(adj), s1));
            break;
        case Op::mul:
            if (g0) put(p0, reduce_if_needed(mul(adj, p1), s0));
            if (g1) put(p1, reduce_if_needed(mul(adj, p0), s1));
            break;
        case Op::neg:
            put(p0, neg(adj));
            break;
        case Op::scale:
            put(p0, scale(adj, c));
            break;
        case Op::add_const:
            put(p0, adj);
            break;
        case Op::reciprocal:
            put(p0, neg(mul(adj, mul(self, self))));
            break;
        case Op::exp_op:
            put(p0, mul(adj, self));
            break;
        case Op::log_op:
            put(p0, mul(adj, reciprocal(p0)));
            break;
        case Op::sqrt_op:
            put(p0, scale(mul(adj, reciprocal(self)), T(0.5)));
            break;
        case Op::sigmoid:
            put(p0, mul(adj, mul(self, add_const(neg(self), T(1)))));
            break;
        case Op::relu: {
            Tensor<T> mask = map_unary(p0.value(), [](T x) { return x > T(0) ? T(1) : T(0); });
            put(p0, mul(adj, tape.leaf(std::move(mask))));
            break;
        }
        case Op::matmul:
            if (g0) put(p0, matmul(adj, transpose(p1)));
            if (g1) put(p1, matmul(transpose(p0), adj));
            break;
        case Op::transpose:
            put(p0, transpose(adj));
            break;
        case Op::reshape:
            put(p0, reshape(adj, aux));
            break;
        case Op::broadcast:
            put(p0, reduce_to(adj, aux));
            break;
        case Op::reduce:
            put(p0, broadcast_to(adj, aux));
            break;
        case Op::sum_axes:
        case Op::sum_all:
            put(p0, broadcast_to(adj, aux));
            break;
        // conv2d, its input adjoint and its kernel adjoint are the three
        // partial adjoints of one trilinear form, so each one's vjps are the
        // other two with arguments permuted.
        case Op::conv:
            if (g0) put(p0, detail::conv2d_dx(adj, p1, stride, pad, s0));
            if (g1) put(p1, detail::conv2d_dk(p0, adj, stride, pad, s1));
            break;
        case Op::conv_dx:
            if (g0) put(p0, conv2d(adj, p1, stride, pad));
            if (g1) put(p1, detail::conv2d_dk(adj, p0, stride, pad, s1));
            break;
        case Op::conv_dk:
            if (g0) put(p0, detail::conv2d_dx(p1, adj, stride, pad, s0));
            if (g1) put(p1, conv2d(p0, adj, stride, pad));
            break;
        case Op::gather:
            put(p0, detail::scatter_flat(adj, idx, s0));
            break;
        case Op::scatter:
            put(p0, detail::gather_flat(adj, idx, aux));
            break;
    }
}

} // namespace detail

/// Reverse-mode gradients of a scalar `output` w.r.t. `wrt`. With
/// `create_graph` the returned gradients carry full history and can be
/// differentiated again; without it the backward pass records nothing.
/// A wrt node unreachable from the output yields a zero tensor of its shape.
template <class T>
std::vector<Var<T>> grad(Var<T> output, const std::vector<Var<T>>& wrt, bool create_graph = false) {
    if (!output.valid()) throw InvalidArgument("grad: invalid output node");
    if (output.numel() != 1) throw InvalidArgument("grad: output must be scalar");
    Tape<T>& tape = *output.tape;
    for (const Var<T>& w : wrt)
        if (!w.valid() || w.tape != &tape) throw InvalidArgument("grad: wrt node not on this tape");

    const std::size_t frontier = tape.size();

    // Reachable-through-grad set, parents only.
    std::vector<std::uint8_t> needed(frontier, 0);
    {
        std::vector<std::int32_t> stack{output.id};
        while (!stack.empty()) {
            const std::int32_t id = stack.back();
            stack.pop_back();
            if (id < 0 || needed[static_cast<std::size_t>(id)]) continue;
            const Node<T>& n = tape.nodes[static_cast<std::size_t>(id)];
            if (!n.requires_grad) continue;
            needed[static_cast<std::size_t>(id)] = 1;
            stack.push_back(n.parents[0]);
            stack.push_back(n.parents[1]);
        }
    }

    std::vector<std::int32_t> adjoint(frontier, -1);

    const bool prev_recording = tape.recording;
    tape.recording = create_graph && prev_recording;

    if (output.requires_grad()) {
        adjoint[static_cast<std::size_t>(output.id)] = tape.leaf(Tensor<T>::ones(Shape{1})).id;
        for (std::int32_t id = output.id; id >= 0; --id) {
            if (!needed[static_cast<std::size_t>(id)]) continue;
            const std::int32_t a = adjoint[static_cast<std::size_t>(id)];
            if (a < 0) continue;
            detail::accumulate_vjp(tape, id, Var<T>{&tape, a}, adjoint);
        }
    }

    std::vector<Var<T>> out;
    out.reserve(wrt.size());
    for (const Var<T>& w : wrt) {
        const std::int32_t a =
            static_cast<std::size_t>(w.id) < frontier ? adjoint[static_cast<std::size_t>(w.id)] : -1;
        if (a >= 0) {
            out.push_back(Var<T>{&tape, a});
        } else {
            out.push_back(tape.leaf(zeros_like(w.value())));
        }
    }
    tape.recording = prev_recording;
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h of a scalar function
/// over a list of tensors. `scale_step` switches to a per-parameter step
/// h_i = step * max(1, |x_i|). Throws NumericError on a non-finite evaluation.
template <class T>
std::vector<Tensor<T>> finite_diff_grad(
    const std::function<T(const std::vector<Tensor<T>>&)>& f, std::vector<Tensor<T>> theta, T step,
    bool scale_step = false) {
    if (!(step > T(0))) throw InvalidArgument("finite_diff_grad: step must be positive");
    std::vector<Tensor<T>> grads;
    grads.reserve(theta.size());
    for (const auto& t : theta) grads.push_back(zeros_like(t));
    for (std::size_t g = 0; g < theta.size(); ++g) {
        for (std::size_t i = 0; i < theta[g].numel(); ++i) {
            const T orig = theta[g].data[i];
            const T h = scale_step ? step * std::max(T(1), std::abs(orig)) : step;
            theta[g].data[i] = orig + h;
            const T fp = f(theta);
            theta[g].data[i] = orig - h;
            const T fm = f(theta);
            theta[g].data[i] = orig;
            if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
                throw NumericError("finite_diff_grad: non-finite evaluation");
            grads[g].data[i] = (fp - fm) / (T(2) * h);
        }
    }
    return grads;
}

} // namespace mltp
