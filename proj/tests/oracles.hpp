#pragma once

// Test-only reference implementations. Everything here is written as plain
// loops, independent of the library's compute paths, and exists to pin
// expected values.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mltp/tensor.hpp"

namespace oracles {

template <class T>
mltp::Tensor<T> naive_matmul(const mltp::Tensor<T>& a, const mltp::Tensor<T>& b) {
    const std::size_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
    mltp::Tensor<T> out(mltp::Shape{m, p});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            T acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a.data[i * k + kk] * b.data[kk * p + j];
            out.data[i * p + j] = acc;
        }
    return out;
}

// Direct cross-correlation, all six loops spelled out.
template <class T>
mltp::Tensor<T> naive_conv2d(const mltp::Tensor<T>& x, const mltp::Tensor<T>& k, int stride,
                             int pad) {
    const long N = (long)x.shape[0], C = (long)x.shape[1], H = (long)x.shape[2], W = (long)x.shape[3];
    const long F = (long)k.shape[0], KH = (long)k.shape[2], KW = (long)k.shape[3];
    const long OH = (H + 2 * pad - KH) / stride + 1;
    const long OW = (W + 2 * pad - KW) / stride + 1;
    mltp::Tensor<T> out(mltp::Shape{(std::size_t)N, (std::size_t)F, (std::size_t)OH, (std::size_t)OW});
    for (long n = 0; n < N; ++n)
        for (long f = 0; f < F; ++f)
            for (long oh = 0; oh < OH; ++oh)
                for (long ow = 0; ow < OW; ++ow) {
                    T acc = 0;
                    for (long c = 0; c < C; ++c)
                        for (long r = 0; r < KH; ++r)
                            for (long s = 0; s < KW; ++s) {
                                const long ih = oh * stride - pad + r;
                                const long iw = ow * stride - pad + s;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.data[((n * C + c) * H + ih) * W + iw] *
                                       k.data[((f * C + c) * KH + r) * KW + s];
                            }
                    out.data[((n * F + f) * OH + oh) * OW + ow] = acc;
                }
    return out;
}

template <class T>
mltp::Tensor<T> naive_maxpool(const mltp::Tensor<T>& x, int window, int stride) {
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    mltp::Tensor<T> out(mltp::Shape{N, C, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T best = x.data[((n * C + c) * H + oh * stride) * W + ow * stride];
                    for (int r = 0; r < window; ++r)
                        for (int s = 0; s < window; ++s)
                            best = std::max(best, x.data[((n * C + c) * H + oh * stride + r) * W +
                                                         ow * stride + s]);
                    out.data[((n * C + c) * OH + oh) * OW + ow] = best;
                }
    return out;
}

template <class T>
T max_rel_err(const mltp::Tensor<T>& got, const mltp::Tensor<T>& want) {
    T num = 0, den = 0;
    for (std::size_t i = 0; i < got.numel(); ++i) {
        num = std::max(num, std::abs(got.data[i] - want.data[i]));
        den = std::max(den, std::abs(want.data[i]));
    }
    return num / std::max(den, T(1e-12));
}

} // namespace oracles
