#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msann/tensor.hpp"

namespace msann {

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& n) {
        for (int p = 0; p < 2; ++p) {
            Node& par = *n.parents[p];
            if (!par.requires_grad) continue;
            for (std::size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.data[i];
        if (pb.requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.data[i];
    });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result({1}, {s}, {x.node()}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (double& g : p.grad) g += n.grad[0];
    });
}

// Same data, new extents; product of extents must match.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    std::vector<double> out = x.data();
    return detail::make_result(std::move(shape), std::move(out), {x.node()}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return detail::make_result(x.shape(), std::move(out), {x.node()}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p.data[i] > 0.0) p.grad[i] += n.grad[i];
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.data()[i]);
    return detail::make_result(x.shape(), std::move(out), {x.node()}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.data[i];
            p.grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

// input [N,D] x weight [D,E] + bias [E] -> [N,E]
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1 ||
        input.dim(1) != weight.dim(0) || weight.dim(1) != bias.dim(0))
        throw DimensionError("linear: incompatible shapes input " + shape_str(input.shape()) +
                             ", weight " + shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
    const auto n_rows = input.dim(0), d = input.dim(1), e = weight.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n_rows * e));
    const double* in = input.data().data();
    const double* w = weight.data().data();
    const double* b = bias.data().data();
    for (std::int64_t r = 0; r < n_rows; ++r) {
        double* orow = out.data() + r * e;
        for (std::int64_t j = 0; j < e; ++j) orow[j] = b[j];
        for (std::int64_t k = 0; k < d; ++k) {
            const double v = in[r * d + k];
            const double* wrow = w + k * e;
            for (std::int64_t j = 0; j < e; ++j) orow[j] += v * wrow[j];
        }
    }
    return detail::make_result({n_rows, e}, std::move(out), {input.node(), weight.node(), bias.node()},
                               [n_rows, d, e](Node& n) {
        Node& pin = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        for (std::int64_t r = 0; r < n_rows; ++r) {
            const double* grow = n.grad.data() + r * e;
            if (pin.requires_grad)
                for (std::int64_t k = 0; k < d; ++k) {
                    const double* wrow = pw.data.data() + k * e;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < e; ++j) acc += grow[j] * wrow[j];
                    pin.grad[r * d + k] += acc;
                }
            if (pw.requires_grad)
                for (std::int64_t k = 0; k < d; ++k) {
                    const double v = pin.data[r * d + k];
                    double* wgrow = pw.grad.data() + k * e;
                    for (std::int64_t j = 0; j < e; ++j) wgrow[j] += v * grow[j];
                }
            if (pb.requires_grad)
                for (std::int64_t j = 0; j < e; ++j) pb.grad[j] += grow[j];
        }
    });
}

// [N,Da] ++ [N,Db] -> [N,Da+Db]
inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) != b.dim(0))
        throw DimensionError("concat: leading dimensions differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const auto n_rows = a.dim(0), da = a.dim(1), db = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n_rows * (da + db)));
    for (std::int64_t r = 0; r < n_rows; ++r) {
        std::copy_n(a.data().data() + r * da, da, out.data() + r * (da + db));
        std::copy_n(b.data().data() + r * db, db, out.data() + r * (da + db) + da);
    }
    return detail::make_result({n_rows, da + db}, std::move(out), {a.node(), b.node()},
                               [n_rows, da, db](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        for (std::int64_t r = 0; r < n_rows; ++r) {
            const double* grow = n.grad.data() + r * (da + db);
            if (pa.requires_grad)
                for (std::int64_t j = 0; j < da; ++j) pa.grad[r * da + j] += grow[j];
            if (pb.requires_grad)
                for (std::int64_t j = 0; j < db; ++j) pb.grad[r * db + j] += grow[da + j];
        }
    });
}

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode (or rate 0) returns the input unchanged
// and consumes no randomness.
inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (mode == Mode::kEval || rate == 0.0) return x;
    const double scale = 1.0 / (1.0 - rate);
    std::vector<std::uint8_t> mask(x.data().size());
    std::vector<double> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() >= rate ? 1 : 0;
        out[i] = mask[i] ? x.data()[i] * scale : 0.0;
    }
    return detail::make_result(x.shape(), std::move(out), {x.node()},
                               [mask = std::move(mask), scale](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (mask[i]) p.grad[i] += n.grad[i] * scale;
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

// Cross-correlation: input [N,C,H,W], weight [K,C,kh,kw], bias [K] -> [N,K,H',W']
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     std::int64_t stride, std::int64_t padding) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 4 || ws.size() != 4 || bias.shape().size() != 1 || is[1] != ws[1] ||
        ws[0] != bias.dim(0))
        throw DimensionError("conv2d: incompatible shapes input " + shape_str(is) + ", weight " +
                             shape_str(ws) + ", bias " + shape_str(bias.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    const std::int64_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::int64_t K = ws[0], kh = ws[2], kw = ws[3];
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw DimensionError("conv2d: kernel " + shape_str(ws) + " larger than padded input " +
                             shape_str(is) + " with padding " + std::to_string(padding));
    const std::int64_t OH = conv_out_extent(H, kh, stride, padding);
    const std::int64_t OW = conv_out_extent(W, kw, stride, padding);

    std::vector<double> out(static_cast<std::size_t>(N * K * OH * OW));
    const double* in = input.data().data();
    const double* w = weight.data().data();
    const double* b = bias.data().data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t oh = 0; oh < OH; ++oh) {
                const std::int64_t ih0 = oh * stride - padding;
                double* orow = out.data() + ((n * K + k) * OH + oh) * OW;
                for (std::int64_t ow = 0; ow < OW; ++ow) {
                    const std::int64_t iw0 = ow * stride - padding;
                    const std::int64_t j0 = std::max<std::int64_t>(0, -iw0);
                    const std::int64_t j1 = std::min<std::int64_t>(kw, W - iw0);
                    double acc = b[k];
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t i = 0; i < kh; ++i) {
                            const std::int64_t ih = ih0 + i;
                            if (ih < 0 || ih >= H) continue;
                            const double* irow = in + ((n * C + c) * H + ih) * W + iw0;
                            const double* wrow = w + ((k * C + c) * kh + i) * kw;
                            for (std::int64_t j = j0; j < j1; ++j) acc += irow[j] * wrow[j];
                        }
                    orow[ow] = acc;
                }
            }

    return detail::make_result({N, K, OH, OW}, std::move(out),
                               {input.node(), weight.node(), bias.node()},
                               [N, C, H, W, K, kh, kw, OH, OW, stride, padding](Node& n) {
        Node& pin = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        const double* in = pin.data.data();
        const double* w = pw.data.data();
        for (std::int64_t img = 0; img < N; ++img)
            for (std::int64_t k = 0; k < K; ++k)
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                    const std::int64_t ih0 = oh * stride - padding;
                    const double* grow = n.grad.data() + ((img * K + k) * OH + oh) * OW;
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        const double g = grow[ow];
                        if (g == 0.0) continue;
                        const std::int64_t iw0 = ow * stride - padding;
                        const std::int64_t j0 = std::max<std::int64_t>(0, -iw0);
                        const std::int64_t j1 = std::min<std::int64_t>(kw, W - iw0);
                        if (pb.requires_grad) pb.grad[k] += g;
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t i = 0; i < kh; ++i) {
                                const std::int64_t ih = ih0 + i;
                                if (ih < 0 || ih >= H) continue;
                                const std::size_t ibase = ((img * C + c) * H + ih) * W + iw0;
                                const std::size_t wbase = ((k * C + c) * kh + i) * kw;
                                if (pin.requires_grad) {
                                    double* igrow = pin.grad.data() + ibase;
                                    const double* wrow = w + wbase;
                                    for (std::int64_t j = j0; j < j1; ++j) igrow[j] += g * wrow[j];
                                }
                                if (pw.requires_grad) {
                                    const double* irow = in + ibase;
                                    double* wgrow = pw.grad.data() + wbase;
                                    for (std::int64_t j = j0; j < j1; ++j) wgrow[j] += g * irow[j];
                                }
                            }
                    }
                }
    });
}

namespace detail {
inline void check_pool_args(const Shape& is, std::int64_t window, std::int64_t stride,
                            const char* name) {
    if (is.size() != 4)
        throw DimensionError(std::string(name) + ": expected a 4-d input, got " + shape_str(is));
    if (window < 1 || stride < 1)
        throw ConfigError(std::string(name) + ": window and stride must be >= 1");
    if (window > is[2] || window > is[3])
        throw DimensionError(std::string(name) + ": window " + std::to_string(window) +
                             " exceeds spatial extent of " + shape_str(is));
}
}  // namespace detail

inline Tensor max_pool2d(const Tensor& input, std::int64_t window, std::int64_t stride) {
    const Shape& is = input.shape();
    detail::check_pool_args(is, window, stride, "max_pool2d");
    const std::int64_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::int64_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(N * C * OH * OW));
    std::vector<std::int64_t> argmax(out.size());
    const double* in = input.data().data();
    std::size_t o = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow, ++o) {
                    double best = -1e308;
                    std::int64_t best_idx = -1;
                    for (std::int64_t i = 0; i < window; ++i)
                        for (std::int64_t j = 0; j < window; ++j) {
                            const std::int64_t idx =
                                ((n * C + c) * H + oh * stride + i) * W + ow * stride + j;
                            if (in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    return detail::make_result({N, C, OH, OW}, std::move(out), {input.node()},
                               [argmax = std::move(argmax)](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[argmax[i]] += n.grad[i];
    });
}

inline Tensor avg_pool2d(const Tensor& input, std::int64_t window, std::int64_t stride) {
    const Shape& is = input.shape();
    detail::check_pool_args(is, window, stride, "avg_pool2d");
    const std::int64_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::int64_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    const double inv = 1.0 / static_cast<double>(window * window);
    std::vector<double> out(static_cast<std::size_t>(N * C * OH * OW));
    const double* in = input.data().data();
    std::size_t o = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow, ++o) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < window; ++i)
                        for (std::int64_t j = 0; j < window; ++j)
                            acc += in[((n * C + c) * H + oh * stride + i) * W + ow * stride + j];
                    out[o] = acc * inv;
                }
    return detail::make_result({N, C, OH, OW}, std::move(out), {input.node()},
                               [N, C, H, W, OH, OW, window, stride, inv](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        std::size_t o = 0;
        for (std::int64_t img = 0; img < N; ++img)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t oh = 0; oh < OH; ++oh)
                    for (std::int64_t ow = 0; ow < OW; ++ow, ++o) {
                        const double g = n.grad[o] * inv;
                        for (std::int64_t i = 0; i < window; ++i)
                            for (std::int64_t j = 0; j < window; ++j)
                                p.grad[((img * C + c) * H + oh * stride + i) * W + ow * stride + j] += g;
                    }
    });
}

// [N,C,H,W] -> [N,C]
inline Tensor global_avg_pool(const Tensor& input) {
    const Shape& is = input.shape();
    if (is.size() != 4)
        throw DimensionError("global_avg_pool: expected a 4-d input, got " + shape_str(is));
    const std::int64_t N = is[0], C = is[1], HW = is[2] * is[3];
    const double inv = 1.0 / static_cast<double>(HW);
    std::vector<double> out(static_cast<std::size_t>(N * C));
    const double* in = input.data().data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* base = in + (n * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) acc += base[i];
            out[n * C + c] = acc * inv;
        }
    return detail::make_result({N, C}, std::move(out), {input.node()}, [N, C, HW, inv](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::int64_t img = 0; img < N; ++img)
            for (std::int64_t c = 0; c < C; ++c) {
                const double g = n.grad[img * C + c] * inv;
                double* base = p.grad.data() + (img * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) base[i] += g;
            }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
    bool initialized = false;
};

// Per-channel batch normalization over [N,C,H,W]. Train mode normalizes by
// batch statistics (biased variance) and folds them into the running stats
// with the given decay; the first update copies the batch statistics so that
// short desk-scale runs start from a meaningful estimate. Eval mode uses the
// running statistics and fails loudly when none have been recorded yet.
inline Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                         RunningStats& stats, Mode mode, double momentum_decay, double epsilon) {
    const Shape& is = input.shape();
    if (is.size() != 4)
        throw DimensionError("batch_norm: expected a 4-d input, got " + shape_str(is));
    const std::int64_t N = is[0], C = is[1], H = is[2], W = is[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw DimensionError("batch_norm: gamma/beta must have shape [" + std::to_string(C) +
                             "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (epsilon <= 0.0) throw ConfigError("batch_norm: epsilon must be positive");
    const std::int64_t m = N * H * W;
    if (m < 1) throw DimensionError("batch_norm: empty input " + shape_str(is));
    const std::int64_t HW = H * W;

    std::vector<double> mu(C), invstd(C);
    if (mode == Mode::kTrain) {
        std::vector<double> var(C);
        const double* in = input.data().data();
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const double* base = in + (n * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) s += base[i];
            }
            mu[c] = s / static_cast<double>(m);
            double v = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                const double* base = in + (n * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double d = base[i] - mu[c];
                    v += d * d;
                }
            }
            var[c] = v / static_cast<double>(m);
            invstd[c] = 1.0 / std::sqrt(var[c] + epsilon);
        }
        if (!stats.initialized) {
            stats.mean = mu;
            stats.var = var;
            stats.initialized = true;
        } else {
            for (std::int64_t c = 0; c < C; ++c) {
                stats.mean[c] = momentum_decay * stats.mean[c] + (1.0 - momentum_decay) * mu[c];
                stats.var[c] = momentum_decay * stats.var[c] + (1.0 - momentum_decay) * var[c];
            }
        }
    } else {
        if (!stats.initialized)
            throw ContractError("batch_norm: eval mode requested before any running statistics "
                                "were recorded; run at least one training step first");
        for (std::int64_t c = 0; c < C; ++c) {
            mu[c] = stats.mean[c];
            invstd[c] = 1.0 / std::sqrt(stats.var[c] + epsilon);
        }
    }

    std::vector<double> out(input.data().size());
    {
        const double* in = input.data().data();
        const double* g = gamma.data().data();
        const double* b = beta.data().data();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double* base = in + (n * C + c) * HW;
                double* obase = out.data() + (n * C + c) * HW;
                const double scale = g[c] * invstd[c];
                const double shift = b[c] - mu[c] * scale;
                for (std::int64_t i = 0; i < HW; ++i) obase[i] = base[i] * scale + shift;
            }
    }

    const bool use_batch_stats = mode == Mode::kTrain;
    return detail::make_result(is, std::move(out), {input.node(), gamma.node(), beta.node()},
                               [N, C, HW, m, mu = std::move(mu), invstd = std::move(invstd),
                                use_batch_stats](Node& n) {
        Node& pin = *n.parents[0];
        Node& pg = *n.parents[1];
        Node& pb = *n.parents[2];
        const double* in = pin.data.data();
        const double* g = pg.data.data();
        for (std::int64_t c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t img = 0; img < N; ++img) {
                const double* base = in + (img * C + c) * HW;
                const double* gbase = n.grad.data() + (img * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const double xhat = (base[i] - mu[c]) * invstd[c];
                    sum_dy += gbase[i];
                    sum_dy_xhat += gbase[i] * xhat;
                }
            }
            if (pg.requires_grad) pg.grad[c] += sum_dy_xhat;
            if (pb.requires_grad) pb.grad[c] += sum_dy;
            if (pin.requires_grad) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::int64_t img = 0; img < N; ++img) {
                    const double* base = in + (img * C + c) * HW;
                    const double* gbase = n.grad.data() + (img * C + c) * HW;
                    double* igbase = pin.grad.data() + (img * C + c) * HW;
                    for (std::int64_t i = 0; i < HW; ++i) {
                        if (use_batch_stats) {
                            const double xhat = (base[i] - mu[c]) * invstd[c];
                            igbase[i] += g[c] * invstd[c] *
                                         (gbase[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                        } else {
                            igbase[i] += g[c] * invstd[c] * gbase[i];
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Numerically stable sum_i [ y_i * -log(sigmoid(z_i)) + (1-y_i) * -log(1-sigmoid(z_i)) ].
inline Tensor sigmoid_ce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    if (static_cast<std::size_t>(logits.numel()) != targets.size())
        throw DimensionError("sigmoid_ce_with_logits: logits " + shape_str(logits.shape()) +
                             " vs " + std::to_string(targets.size()) + " targets");
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double z = logits.data()[i];
        loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return detail::make_result({1}, {loss}, {logits.node()}, [targets](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < targets.size(); ++i)
            p.grad[i] += n.grad[0] * (sigmoid_scalar(p.data[i]) - targets[i]);
    });
}

// sum_i (pred_i - target_i)^2
inline Tensor mse_sum(const Tensor& pred, const std::vector<double>& target) {
    if (static_cast<std::size_t>(pred.numel()) != target.size())
        throw DimensionError("mse_sum: predictions " + shape_str(pred.shape()) + " vs " +
                             std::to_string(target.size()) + " targets");
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = pred.data()[i] - target[i];
        loss += d * d;
    }
    return detail::make_result({1}, {loss}, {pred.node()}, [target](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::size_t i = 0; i < target.size(); ++i)
            p.grad[i] += n.grad[0] * 2.0 * (p.data[i] - target[i]);
    });
}

// Softmax cross entropy over rows of [N,K], summed over the batch.
inline Tensor softmax_ce(const Tensor& logits, const std::vector<std::int64_t>& classes) {
    if (logits.shape().size() != 2 || static_cast<std::size_t>(logits.dim(0)) != classes.size())
        throw DimensionError("softmax_ce: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(classes.size()) + " class indices");
    const std::int64_t N = logits.dim(0), K = logits.dim(1);
    for (auto c : classes)
        if (c < 0 || c >= K)
            throw DimensionError("softmax_ce: class index " + std::to_string(c) +
                                 " out of range for " + std::to_string(K) + " categories");
    double loss = 0.0;
    std::vector<double> softmax(static_cast<std::size_t>(N * K));
    for (std::int64_t r = 0; r < N; ++r) {
        const double* row = logits.data().data() + r * K;
        const double zmax = *std::max_element(row, row + K);
        double denom = 0.0;
        for (std::int64_t j = 0; j < K; ++j) denom += std::exp(row[j] - zmax);
        for (std::int64_t j = 0; j < K; ++j)
            softmax[r * K + j] = std::exp(row[j] - zmax) / denom;
        loss += -(row[classes[r]] - zmax - std::log(denom));
    }
    return detail::make_result({1}, {loss}, {logits.node()},
                               [softmax = std::move(softmax), classes, N, K](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        for (std::int64_t r = 0; r < N; ++r)
            for (std::int64_t j = 0; j < K; ++j)
                p.grad[r * K + j] +=
                    n.grad[0] * (softmax[r * K + j] - (classes[r] == j ? 1.0 : 0.0));
    });
}

}  // namespace msann
