#pragma once

// Test-only reference implementations. Everything here is written as the
// dumbest possible loop so it stays independent of the library's kernels.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "msann/tensor.hpp"

namespace oracle {

// Quadruple-loop cross-correlation over explicit zero padding.
inline std::vector<double> conv2d(const std::vector<double>& in, std::int64_t N, std::int64_t C,
                                  std::int64_t H, std::int64_t W, const std::vector<double>& w,
                                  std::int64_t K, std::int64_t kh, std::int64_t kw,
                                  const std::vector<double>& b, std::int64_t stride,
                                  std::int64_t pad) {
    const std::int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t OW = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(N * K * OH * OW), 0.0);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                    double acc = b[k];
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t i = 0; i < kh; ++i)
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t ih = oh * stride - pad + i;
                                const std::int64_t iw = ow * stride - pad + j;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += in[((n * C + c) * H + ih) * W + iw] *
                                       w[((k * C + c) * kh + i) * kw + j];
                            }
                    out[((n * K + k) * OH + oh) * OW + ow] = acc;
                }
    return out;
}

inline std::vector<double> avg_pool2d(const std::vector<double>& in, std::int64_t N, std::int64_t C,
                                      std::int64_t H, std::int64_t W, std::int64_t window,
                                      std::int64_t stride) {
    const std::int64_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(N * C * OH * OW));
    std::size_t o = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow, ++o) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < window; ++i)
                        for (std::int64_t j = 0; j < window; ++j)
                            acc += in[((n * C + c) * H + oh * stride + i) * W + ow * stride + j];
                    out[o] = acc / static_cast<double>(window * window);
                }
    return out;
}

// [N,D] x [D,E] + [E]
inline std::vector<double> matmul_bias(const std::vector<double>& a, std::int64_t N, std::int64_t D,
                                       const std::vector<double>& w, std::int64_t E,
                                       const std::vector<double>& b) {
    std::vector<double> out(static_cast<std::size_t>(N * E), 0.0);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t e = 0; e < E; ++e) {
            double acc = b.empty() ? 0.0 : b[e];
            for (std::int64_t d = 0; d < D; ++d) acc += a[n * D + d] * w[d * E + e];
            out[n * E + e] = acc;
        }
    return out;
}

// Central finite differences of a re-runnable scalar forward pass with
// respect to every element of every listed leaf. Returns the maximum
// relative error |analytic - fd| / max(1, |fd|).
inline double max_grad_rel_err(const std::function<msann::Tensor()>& forward,
                               std::vector<msann::Tensor> leaves, double h = 1e-5) {
    for (auto& leaf : leaves) leaf.zero_grad();
    msann::Tensor loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& x = leaves[li].data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + h;
            const double fp = forward().item();
            x[i] = saved - h;
            const double fm = forward().item();
            x[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double rel = std::abs(analytic[li][i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace oracle
