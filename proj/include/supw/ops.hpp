/*
 * Copyright 2026 The supw Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "supw/tensor.hpp"

namespace supw {

namespace detail {

inline void require_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4) throw Error(std::string(what) + ": expected rank-4 tensor, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Range of output columns whose sampled input column ox*stride - pad + k is inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t extent, std::size_t out_extent, std::size_t stride,
                                                       std::size_t pad, std::size_t k) {
    const long offset = static_cast<long>(k) - static_cast<long>(pad);
    const long s = static_cast<long>(stride);
    long lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    long hi = (static_cast<long>(extent) - 1 - offset);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min(hi, static_cast<long>(out_extent) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

}  // namespace detail

/// Output extent of a strided, zero-padded convolution along one axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// 2-D cross-correlation, input [N,Cin,H,W], kernel [Cout,Cin,kh,kw].
/// Backward returns {d_input, d_kernel}.
inline GradPair conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t pad = 0) {
    detail::require_rank4(input, "conv2d input");
    detail::require_rank4(kernel, "conv2d kernel");
    if (input.dim(1) != kernel.dim(1))
        throw Error("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                    shape_str(kernel.shape()));
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    const std::size_t n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw Error("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                    shape_str(input.shape()));
    const std::size_t ho = conv_out_extent(h, kh, stride, pad), wo = conv_out_extent(w, kw, stride, pad);

    Tensor out(Shape{n_batch, cout, ho, wo});
    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* o = out.data().data();

    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t co = 0; co < cout; ++co) {
            double* oplane = o + (n * cout + co) * ho * wo;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* iplane = in + (n * cin + ci) * h * w;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const auto [oy0, oy1] = detail::valid_range(h, ho, stride, pad, ky);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double wv = ker[((co * cin + ci) * kh + ky) * kw + kx];
                        const auto [ox0, ox1] = detail::valid_range(w, wo, stride, pad, kx);
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const double* irow = iplane + static_cast<std::ptrdiff_t>((oy * stride + ky - pad) * w) +
                                                 (static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad));
                            double* orow = oplane + oy * wo;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox * stride];
                        }
                    }
                }
            }
        }

    auto backward = [input, kernel, stride, pad, ho, wo](const Tensor& grad) -> std::vector<Tensor> {
        const std::size_t n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
        const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
        if (grad.shape() != Shape{n_batch, cout, ho, wo})
            throw Error("conv2d backward: gradient shape " + shape_str(grad.shape()));
        Tensor d_in(input.shape());
        Tensor d_ker(kernel.shape());
        const double* in = input.data().data();
        const double* ker = kernel.data().data();
        const double* g = grad.data().data();
        double* di = d_in.data().data();
        double* dk = d_ker.data().data();
        for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t co = 0; co < cout; ++co) {
                const double* gplane = g + (n * cout + co) * ho * wo;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* iplane = in + (n * cin + ci) * h * w;
                    double* diplane = di + (n * cin + ci) * h * w;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const auto [oy0, oy1] = detail::valid_range(h, ho, stride, pad, ky);
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
                            const double wv = ker[widx];
                            const auto [ox0, ox1] = detail::valid_range(w, wo, stride, pad, kx);
                            double acc = 0.0;
                            for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>((oy * stride + ky - pad) * w) +
                                                           static_cast<std::ptrdiff_t>(kx) -
                                                           static_cast<std::ptrdiff_t>(pad);
                                const double* irow = iplane + base;
                                double* dirow = diplane + base;
                                const double* grow = gplane + oy * wo;
                                for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                    acc += grow[ox] * irow[ox * stride];
                                    dirow[ox * stride] += wv * grow[ox];
                                }
                            }
                            dk[widx] += acc;
                        }
                    }
                }
            }
        return {std::move(d_in), std::move(d_ker)};
    };
    return {std::move(out), std::move(backward)};
}

/// Adds bias[c] to every element of channel c. Backward returns {d_input, d_bias}.
inline GradPair bias_add(const Tensor& input, const Tensor& bias) {
    detail::require_rank4(input, "bias_add input");
    const std::size_t n_batch = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (bias.size() != c)
        throw Error("bias_add: bias " + shape_str(bias.shape()) + " vs input " + shape_str(input.shape()));
    Tensor out = input;
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = out.data().data() + (n * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += bias[ch];
        }
    auto backward = [n_batch, c, plane, bshape = bias.shape()](const Tensor& grad) -> std::vector<Tensor> {
        Tensor db(bshape);
        for (std::size_t n = 0; n < n_batch; ++n)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* p = grad.data().data() + (n * c + ch) * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
                db[ch] += s;
            }
        return {grad, std::move(db)};
    };
    return {std::move(out), std::move(backward)};
}

/// Per-sample, per-channel standardization with population variance; eps sits inside the root.
inline GradPair instance_norm(const Tensor& features, double eps = 1e-5) {
    detail::require_rank4(features, "instance_norm");
    if (!(eps > 0.0)) throw Error("instance_norm: eps must be positive");
    require_finite(features, "instance_norm");
    const std::size_t groups = features.dim(0) * features.dim(1);
    const std::size_t plane = features.dim(2) * features.dim(3);
    if (plane == 0) throw Error("instance_norm: empty spatial extent");

    Tensor out(features.shape());
    std::vector<double> inv_std(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const double* x = features.data().data() + g * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += x[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<double>(plane);
        const double r = 1.0 / std::sqrt(var + eps);
        inv_std[g] = r;
        double* y = out.data().data() + g * plane;
        for (std::size_t i = 0; i < plane; ++i) y[i] = (x[i] - mean) * r;
    }

    auto backward = [y = out, inv_std = std::move(inv_std), groups, plane](const Tensor& grad) -> std::vector<Tensor> {
        detail::require_same_shape(grad, y, "instance_norm backward");
        Tensor dx(y.shape());
        const double m = static_cast<double>(plane);
        for (std::size_t g = 0; g < groups; ++g) {
            const double* dy = grad.data().data() + g * plane;
            const double* yy = y.data().data() + g * plane;
            double mean_dy = 0.0, mean_dyy = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                mean_dy += dy[i];
                mean_dyy += dy[i] * yy[i];
            }
            mean_dy /= m;
            mean_dyy /= m;
            double* d = dx.data().data() + g * plane;
            for (std::size_t i = 0; i < plane; ++i) d[i] = inv_std[g] * (dy[i] - mean_dy - yy[i] * mean_dyy);
        }
        return {std::move(dx)};
    };
    return {std::move(out), std::move(backward)};
}

inline GradPair relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    auto backward = [x](const Tensor& grad) -> std::vector<Tensor> {
        detail::require_same_shape(grad, x, "relu backward");
        Tensor dx = grad;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(x[i] > 0.0)) dx[i] = 0.0;
        return {std::move(dx)};
    };
    return {std::move(out), std::move(backward)};
}

inline double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline GradPair sigmoid(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = sigmoid_scalar(v);
    auto backward = [s = out](const Tensor& grad) -> std::vector<Tensor> {
        detail::require_same_shape(grad, s, "sigmoid backward");
        Tensor dx = grad;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= s[i] * (1.0 - s[i]);
        return {std::move(dx)};
    };
    return {std::move(out), std::move(backward)};
}

inline GradPair add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a;
    out += b;
    return {std::move(out), [](const Tensor& grad) -> std::vector<Tensor> { return {grad, grad}; }};
}

inline GradPair mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    auto backward = [a, b](const Tensor& grad) -> std::vector<Tensor> {
        Tensor da = grad, db = grad;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            da[i] *= b[i];
            db[i] *= a[i];
        }
        return {std::move(da), std::move(db)};
    };
    return {std::move(out), std::move(backward)};
}

inline GradPair scale(const Tensor& x, double s) {
    Tensor out = x;
    out *= s;
    return {std::move(out), [s](const Tensor& grad) -> std::vector<Tensor> {
                Tensor dx = grad;
                dx *= s;
                return {std::move(dx)};
            }};
}

namespace detail {

struct BilinearTap {
    std::size_t i0, i1;
    double frac;
};

// Half-pixel-center source coordinates (align_corners = false), clamped at the low edge.
inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<BilinearTap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[d] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resize of the two trailing axes with align_corners = false.
inline GradPair upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    detail::require_rank4(input, "upsample_bilinear");
    if (out_h < 1 || out_w < 1) throw Error("upsample_bilinear: output extents must be >= 1");
    const std::size_t groups = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h == out_h && w == out_w) {
        return {input, [](const Tensor& grad) -> std::vector<Tensor> { return {grad}; }};
    }
    auto ty = detail::bilinear_taps(h, out_h);
    auto tx = detail::bilinear_taps(w, out_w);
    Tensor out(Shape{input.dim(0), input.dim(1), out_h, out_w});
    for (std::size_t g = 0; g < groups; ++g) {
        const double* src = input.data().data() + g * h * w;
        double* dst = out.data().data() + g * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            const double* r0 = src + a.i0 * w;
            const double* r1 = src + a.i1 * w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& b = tx[x];
                const double top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.frac;
                const double bot = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.frac;
                dst[y * out_w + x] = top + (bot - top) * a.frac;
            }
        }
    }
    auto backward = [shape = input.shape(), ty = std::move(ty), tx = std::move(tx), groups, h, w, out_h,
                     out_w](const Tensor& grad) -> std::vector<Tensor> {
        Tensor dx(shape);
        for (std::size_t g = 0; g < groups; ++g) {
            const double* gsrc = grad.data().data() + g * out_h * out_w;
            double* d = dx.data().data() + g * h * w;
            for (std::size_t y = 0; y < out_h; ++y) {
                const auto& a = ty[y];
                for (std::size_t x = 0; x < out_w; ++x) {
                    const auto& b = tx[x];
                    const double gv = gsrc[y * out_w + x];
                    d[a.i0 * w + b.i0] += gv * (1.0 - a.frac) * (1.0 - b.frac);
                    d[a.i0 * w + b.i1] += gv * (1.0 - a.frac) * b.frac;
                    d[a.i1 * w + b.i0] += gv * a.frac * (1.0 - b.frac);
                    d[a.i1 * w + b.i1] += gv * a.frac * b.frac;
                }
            }
        }
        return {std::move(dx)};
    };
    return {std::move(out), std::move(backward)};
}

}  // namespace supw
