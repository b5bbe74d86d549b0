#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mltp/errors.hpp"

namespace mltp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense n-dimensional array, row-major. The scalar type T is the tensor's
/// precision (float = 32-bit, double = 64-bit); one op never mixes the two
/// because mixed instantiations do not typecheck.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    static constexpr int precision_bits = static_cast<int>(sizeof(T)) * 8;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(Shape s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape);
}

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

/// NumPy-style broadcast of two shapes (right-aligned; a dimension of 1
/// stretches). Throws InvalidArgument on incompatible dimensions.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw InvalidArgument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

inline bool broadcastable_to(const Shape& from, const Shape& to) {
    if (from.size() > to.size()) return false;
    for (std::size_t i = 0; i < from.size(); ++i) {
        const std::size_t df = from[from.size() - 1 - i];
        const std::size_t dt = to[to.size() - 1 - i];
        if (df != dt && df != 1) return false;
    }
    return true;
}

namespace detail {

// Strides of `s` viewed as shape `out`, with 0 on broadcast dimensions.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    const auto st = row_major_strides(s);
    std::vector<std::size_t> r(out.size(), 0);
    const std::size_t off = out.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        r[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : st[i];
    return r;
}

} // namespace detail

template <class T, class F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
    if (a.shape == b.shape) { // fast path, no index arithmetic
        Tensor<T> out(a.shape);
        for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape, b.shape);
    Tensor<T> out(os);
    const auto sa = detail::broadcast_strides(a.shape, os);
    const auto sb = detail::broadcast_strides(b.shape, os);
    std::vector<std::size_t> idx(os.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < out.data.size(); ++o) {
        out.data[o] = f(a.data[ia], b.data[ib]);
        for (std::size_t d = os.size(); d-- > 0;) {
            if (++idx[d] < os[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (os[d] - 1);
            ib -= sb[d] * (os[d] - 1);
        }
    }
    return out;
}

template <class T, class F>
Tensor<T> map_unary(const Tensor<T>& a, F&& f) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

/// Materializes `x` broadcast to `target`.
template <class T>
Tensor<T> broadcast_to_value(const Tensor<T>& x, const Shape& target) {
    if (x.shape == target) return x;
    if (!broadcastable_to(x.shape, target))
        throw InvalidArgument("cannot broadcast " + shape_str(x.shape) + " to " + shape_str(target));
    Tensor<T> out(target);
    const auto sx = detail::broadcast_strides(x.shape, target);
    std::vector<std::size_t> idx(target.size(), 0);
    std::size_t ix = 0;
    for (std::size_t o = 0; o < out.data.size(); ++o) {
        out.data[o] = x.data[ix];
        for (std::size_t d = target.size(); d-- > 0;) {
            if (++idx[d] < target[d]) {
                ix += sx[d];
                break;
            }
            idx[d] = 0;
            ix -= sx[d] * (target[d] - 1);
        }
    }
    return out;
}

/// Sums `x` down to a broadcast-compatible `target` shape (the adjoint of
/// broadcast_to_value). Accumulation order is the input's row-major order.
template <class T>
Tensor<T> reduce_to_value(const Tensor<T>& x, const Shape& target) {
    if (x.shape == target) return x;
    if (!broadcastable_to(target, x.shape))
        throw InvalidArgument("cannot reduce " + shape_str(x.shape) + " to " + shape_str(target));
    Tensor<T> out(target);
    const auto so = detail::broadcast_strides(target, x.shape);
    std::vector<std::size_t> idx(x.shape.size(), 0);
    std::size_t io = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[io] += x.data[i];
        for (std::size_t d = x.shape.size(); d-- > 0;) {
            if (++idx[d] < x.shape[d]) {
                io += so[d];
                break;
            }
            idx[d] = 0;
            io -= so[d] * (x.shape[d] - 1);
        }
    }
    return out;
}

/// Sum over the axes in `axes_mask` (bit i set = reduce axis i), keeping
/// reduced dimensions as size 1.
template <class T>
Tensor<T> sum_axes_value(const Tensor<T>& x, std::uint32_t axes_mask) {
    Shape target = x.shape;
    for (std::size_t d = 0; d < x.shape.size(); ++d)
        if (axes_mask & (1u << d)) target[d] = 1;
    return reduce_to_value(x, target);
}

template <class T>
T sum_all_value(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data) s += v; // fixed left-to-right order
    return s;
}

template <class T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw InvalidArgument("matmul shape mismatch: " + shape_str(a.shape) + " x " +
                              shape_str(b.shape));
    const std::size_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
    Tensor<T> out(Shape{m, p});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = a.data[i * k + kk];
            if (av == T(0)) continue;
            const T* brow = &b.data[kk * p];
            T* orow = &out.data[i * p];
            for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    return out;
}

template <class T>
Tensor<T> transpose2d_value(const Tensor<T>& a) {
    if (a.rank() != 2) throw InvalidArgument("transpose expects a rank-2 tensor");
    const std::size_t m = a.shape[0], n = a.shape[1];
    Tensor<T> out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.data[i * n + j];
    return out;
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int pad,
                                   const char* what) {
    const std::size_t padded = in + 2 * static_cast<std::size_t>(pad);
    if (k > padded)
        throw InvalidArgument(std::string("conv2d kernel larger than padded ") + what);
    const std::size_t span = padded - k;
    if (span % static_cast<std::size_t>(stride) != 0)
        throw InvalidArgument(std::string("conv2d non-integral output ") + what +
                              " for stride " + std::to_string(stride));
    return span / static_cast<std::size_t>(stride) + 1;
}

/// Cross-correlation (no kernel flip). x: [N,C,H,W], k: [F,C,kh,kw].
template <class T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& k, int stride, int pad) {
    if (x.rank() != 4 || k.rank() != 4 || x.shape[1] != k.shape[1])
        throw InvalidArgument("conv2d shape mismatch: " + shape_str(x.shape) + " * " +
                              shape_str(k.shape));
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const std::size_t OH = conv_out_extent(H, kh, stride, pad, "height");
    const std::size_t OW = conv_out_extent(W, kw, stride, pad, "width");
    Tensor<T> out(Shape{N, F, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T acc = 0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(r);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (std::size_t s = 0; s < kw; ++s) {
                                const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(s);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                                       k.data[((f * C + c) * kh + r) * kw + s];
                            }
                        }
                    out.data[((n * F + f) * OH + oh) * OW + ow] = acc;
                }
    return out;
}

/// Adjoint of conv2d w.r.t. its input: scatters gy back through the kernel.
template <class T>
Tensor<T> conv2d_input_grad_value(const Tensor<T>& gy, const Tensor<T>& k, int stride, int pad,
                                  const Shape& x_shape) {
    const std::size_t N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    const std::size_t F = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const std::size_t OH = gy.shape[2], OW = gy.shape[3];
    Tensor<T> gx(x_shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const T g = gy.data[((n * F + f) * OH + oh) * OW + ow];
                    if (g == T(0)) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(r);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (std::size_t s = 0; s < kw; ++s) {
                                const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(s);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                gx.data[((n * C + c) * H + ih) * W + iw] +=
                                    g * k.data[((f * C + c) * kh + r) * kw + s];
                            }
                        }
                }
    return gx;
}

/// Adjoint of conv2d w.r.t. its kernel.
template <class T>
Tensor<T> conv2d_kernel_grad_value(const Tensor<T>& x, const Tensor<T>& gy, int stride, int pad,
                                   const Shape& k_shape) {
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t F = k_shape[0], kh = k_shape[2], kw = k_shape[3];
    const std::size_t OH = gy.shape[2], OW = gy.shape[3];
    Tensor<T> gk(k_shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const T g = gy.data[((n * F + f) * OH + oh) * OW + ow];
                    if (g == T(0)) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(r);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (std::size_t s = 0; s < kw; ++s) {
                                const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(s);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                gk.data[((f * C + c) * kh + r) * kw + s] +=
                                    g * x.data[((n * C + c) * H + ih) * W + iw];
                            }
                        }
                }
    return gk;
}

/// Max-pool argmax pass. Returns the pooled values and the flat input index of
/// each window maximum (first occurrence in row-major scan on ties).
template <class T>
std::pair<Tensor<T>, std::vector<std::int64_t>> maxpool2d_value(const Tensor<T>& x, int window,
                                                                int stride) {
    if (x.rank() != 4) throw InvalidArgument("max_pool2d expects [N,C,H,W]");
    if (window <= 0 || stride <= 0) throw InvalidArgument("max_pool2d window/stride must be positive");
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if ((H < static_cast<std::size_t>(window)) || (W < static_cast<std::size_t>(window)) ||
        (H - window) % stride != 0 || (W - window) % stride != 0)
        throw InvalidArgument("max_pool2d non-integral output size for input " + shape_str(x.shape));
    const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    Tensor<T> out(Shape{N, C, OH, OW});
    std::vector<std::int64_t> argmax(out.numel());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    std::size_t best = ((n * C + c) * H + oh * stride) * W + ow * stride;
                    T bv = x.data[best];
                    for (int r = 0; r < window; ++r)
                        for (int s = 0; s < window; ++s) {
                            const std::size_t ii =
                                ((n * C + c) * H + (oh * stride + r)) * W + (ow * stride + s);
                            if (x.data[ii] > bv) { // strict: first max wins
                                bv = x.data[ii];
                                best = ii;
                            }
                        }
                    const std::size_t o = ((n * C + c) * OH + oh) * OW + ow;
                    out.data[o] = bv;
                    argmax[o] = static_cast<std::int64_t>(best);
                }
    return {std::move(out), std::move(argmax)};
}

template <class T>
Tensor<T> gather_flat_value(const Tensor<T>& x, const std::vector<std::int64_t>& idx,
                            const Shape& out_shape) {
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[i] = x.data[static_cast<std::size_t>(idx[i])];
    return out;
}

template <class T>
Tensor<T> scatter_flat_value(const Tensor<T>& v, const std::vector<std::int64_t>& idx,
                             const Shape& out_shape) {
    Tensor<T> out(out_shape);
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[static_cast<std::size_t>(idx[i])] += v.data[i];
    return out;
}

} // namespace mltp
