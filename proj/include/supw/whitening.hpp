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
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "supw/tensor.hpp"

namespace supw {

/// Square C×C matrix of doubles in row-major order. Used for feature covariances.
class CovMatrix {
public:
    CovMatrix() = default;
    explicit CovMatrix(std::size_t dim, double fill = 0.0) : dim_(dim), v_(dim * dim, fill) {}

    /// From a [C,C] tensor.
    static CovMatrix from_tensor(const Tensor& t) {
        if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw Error("expected square [C,C] tensor, got " + shape_str(t.shape()));
        CovMatrix m(t.dim(0));
        m.v_ = t.values();
        return m;
    }

    static CovMatrix identity(std::size_t dim) {
        CovMatrix m(dim);
        for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
        return m;
    }

    Tensor to_tensor() const { return Tensor(Shape{dim_, dim_}, v_); }

    std::size_t dim() const noexcept { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return v_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v_[i * dim_ + j]; }
    const std::vector<double>& values() const noexcept { return v_; }

    double max_asymmetry() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = i + 1; j < dim_; ++j) worst = std::max(worst, std::abs((*this)(i, j) - (*this)(j, i)));
        return worst;
    }

    friend bool operator==(const CovMatrix&, const CovMatrix&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> v_;
};

/// Per-entry variance of covariance entries under the photometric transform.
struct VarianceMap {
    CovMatrix v;
};

/// Symmetric binary selection of style-sensitive covariance entries (diagonal always 0).
struct StyleMask {
    std::size_t dim = 0;
    std::vector<std::uint8_t> bits;
    std::size_t high_count = 0;  // masked positions in the full C×C matrix
    std::size_t low_count = 0;   // unmasked off-diagonal positions

    std::uint8_t operator()(std::size_t i, std::size_t j) const { return bits[i * dim + j]; }

    friend bool operator==(const StyleMask&, const StyleMask&) = default;
};

// ---------------------------------------------------------------------------

/// theta = (1 / HW) F F^T for standardized features F of shape [C,H,W] or [1,C,H,W].
/// Value is a [C,C] tensor; backward returns the gradient w.r.t. the features in their input shape.
inline GradPair covariance(const Tensor& features) {
    std::size_t c, plane;
    if (features.rank() == 3) {
        c = features.dim(0);
        plane = features.dim(1) * features.dim(2);
    } else if (features.rank() == 4 && features.dim(0) == 1) {
        c = features.dim(1);
        plane = features.dim(2) * features.dim(3);
    } else {
        throw Error("covariance: expected [C,H,W] or [1,C,H,W], got " + shape_str(features.shape()));
    }
    if (plane == 0) throw Error("covariance: empty spatial extent");
    const double inv = 1.0 / static_cast<double>(plane);
    const double* f = features.data().data();
    Tensor cov(Shape{c, c});
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i; j < c; ++j) {
            const double* fi = f + i * plane;
            const double* fj = f + j * plane;
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += fi[p] * fj[p];
            cov[i * c + j] = cov[j * c + i] = s * inv;
        }
    auto backward = [features, c, plane, inv](const Tensor& grad) -> std::vector<Tensor> {
        if (grad.size() != c * c) throw Error("covariance backward: gradient shape " + shape_str(grad.shape()));
        Tensor d(features.shape());
        const double* f = features.data().data();
        double* df = d.data().data();
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double g = (grad[i * c + j] + grad[j * c + i]) * inv;
                if (g == 0.0) continue;
                const double* fj = f + j * plane;
                double* di = df + i * plane;
                for (std::size_t p = 0; p < plane; ++p) di[p] += g * fj[p];
            }
        return {std::move(d)};
    };
    return {std::move(cov), std::move(backward)};
}

/// Deep-whitening penalty: mean over all C² entries of |theta - I|.
inline GradPair dwt_loss(const Tensor& cov) {
    if (cov.rank() != 2 || cov.dim(0) != cov.dim(1)) throw Error("dwt_loss: expected square matrix, got " + shape_str(cov.shape()));
    const std::size_t c = cov.dim(0);
    const double n = static_cast<double>(c * c);
    double loss = 0.0;
    Tensor sign(cov.shape());
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = cov[i * c + j] - (i == j ? 1.0 : 0.0);
            loss += std::abs(d);
            sign[i * c + j] = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        }
    auto backward = [sign, n](const Tensor& grad) -> std::vector<Tensor> {
        Tensor d = sign;
        d *= grad.item() / n;
        return {std::move(d)};
    };
    return {Tensor::scalar(loss / n), std::move(backward)};
}

/// Variance of each entry across an (original, transformed) covariance pair:
/// 1/2 [(a - mu)^2 + (b - mu)^2] with mu = (a + b) / 2, i.e. ((a - b) / 2)^2.
inline VarianceMap pair_variance(const CovMatrix& original, const CovMatrix& transformed) {
    if (original.dim() != transformed.dim())
        throw Error("pair_variance: dimension mismatch " + std::to_string(original.dim()) + " vs " +
                    std::to_string(transformed.dim()));
    const std::size_t c = original.dim();
    VarianceMap out{CovMatrix(c)};
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double a = original(i, j), b = transformed(i, j);
            const double mu = 0.5 * (a + b);
            out.v(i, j) = 0.5 * ((a - mu) * (a - mu) + (b - mu) * (b - mu));
        }
    return out;
}

/// Instance average of pair variances over a batch of (original, transformed) pairs.
inline VarianceMap pair_variance(const std::vector<std::pair<CovMatrix, CovMatrix>>& pairs) {
    if (pairs.empty()) throw Error("pair_variance: empty batch");
    VarianceMap acc{CovMatrix(pairs.front().first.dim())};
    for (const auto& [a, b] : pairs) {
        const VarianceMap v = pair_variance(a, b);
        if (v.v.dim() != acc.v.dim()) throw Error("pair_variance: dimension mismatch within batch");
        for (std::size_t i = 0; i < acc.v.dim(); ++i)
            for (std::size_t j = 0; j < acc.v.dim(); ++j) acc.v(i, j) += v.v(i, j);
    }
    const double inv = 1.0 / static_cast<double>(pairs.size());
    for (std::size_t i = 0; i < acc.v.dim(); ++i)
        for (std::size_t j = 0; j < acc.v.dim(); ++j) acc.v(i, j) *= inv;
    return acc;
}

/// Result of a two-cluster split of scalar values.
struct TwoMeans {
    double threshold = 0.0;  // values >= threshold form the high cluster
    double low_centroid = 0.0;
    double high_centroid = 0.0;
    double cost = 0.0;  // within-cluster sum of squares
    bool split = false;  // false when all values are equal
};

/// Globally optimal 1-D k-means with k = 2. For sorted values the optimal clusters are contiguous,
/// so every cut between distinct neighbors is scored with prefix sums. Ties go to the lowest cut.
inline TwoMeans two_means_1d(std::vector<double> values) {
    TwoMeans out;
    if (values.empty()) return out;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    std::vector<double> s(n + 1, 0.0), s2(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        s[i + 1] = s[i] + values[i];
        s2[i + 1] = s2[i] + values[i] * values[i];
    }
    auto sse = [&](std::size_t lo, std::size_t hi) {  // [lo, hi)
        const double cnt = static_cast<double>(hi - lo);
        const double sum = s[hi] - s[lo];
        return std::max(0.0, (s2[hi] - s2[lo]) - sum * sum / cnt);
    };
    out.cost = sse(0, n);
    out.low_centroid = out.high_centroid = s[n] / static_cast<double>(n);
    for (std::size_t cut = 1; cut < n; ++cut) {
        if (!(values[cut - 1] < values[cut])) continue;
        const double cost = sse(0, cut) + sse(cut, n);
        if (!out.split || cost < out.cost) {
            out.split = true;
            out.cost = cost;
            out.threshold = values[cut];
            out.low_centroid = s[cut] / static_cast<double>(cut);
            out.high_centroid = (s[n] - s[cut]) / static_cast<double>(n - cut);
        }
    }
    return out;
}

/// Clusters the strictly-upper-triangular entries of V into low/high variance groups and marks the
/// high group (both (i,j) and (j,i)). Equal entries everywhere yield an empty mask.
inline StyleMask kmeans_split(const VarianceMap& variance) {
    const std::size_t c = variance.v.dim();
    if (c < 2) throw Error("kmeans_split: need at least 2 channels");
    std::vector<double> upper;
    upper.reserve(c * (c - 1) / 2);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i + 1; j < c; ++j) upper.push_back(variance.v(i, j));
    const TwoMeans tm = two_means_1d(upper);

    StyleMask mask{c, std::vector<std::uint8_t>(c * c, 0), 0, 0};
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i + 1; j < c; ++j) {
            const bool high = tm.split && variance.v(i, j) >= tm.threshold;
            mask.bits[i * c + j] = mask.bits[j * c + i] = high ? 1 : 0;
            (high ? mask.high_count : mask.low_count) += 2;
        }
    return mask;
}

enum class IswNormalization {
    masked_mean,  // mean over the selected entries
    full_mean,    // mean over all C² entries
};

/// Selective whitening penalty: mean of |theta| over masked entries. Zero for an empty mask.
inline GradPair isw_loss(const Tensor& cov, const StyleMask& mask, IswNormalization norm = IswNormalization::masked_mean) {
    if (cov.rank() != 2 || cov.dim(0) != mask.dim || cov.dim(1) != mask.dim)
        throw Error("isw_loss: covariance " + shape_str(cov.shape()) + " vs mask dim " + std::to_string(mask.dim));
    const std::size_t n = mask.dim * mask.dim;
    const double denom = norm == IswNormalization::masked_mean ? static_cast<double>(mask.high_count) : static_cast<double>(n);
    Tensor sign(cov.shape());
    double loss = 0.0;
    if (mask.high_count > 0) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask.bits[i]) continue;
            loss += std::abs(cov[i]);
            sign[i] = cov[i] > 0 ? 1.0 : (cov[i] < 0 ? -1.0 : 0.0);
        }
        loss /= denom;
        sign *= 1.0 / denom;
    }
    auto backward = [sign](const Tensor& grad) -> std::vector<Tensor> {
        Tensor d = sign;
        d *= grad.item();
        return {std::move(d)};
    };
    return {Tensor::scalar(loss), std::move(backward)};
}

// ---------------------------------------------------------------------------

/// Warm-up bookkeeping for the selective whitening masks of each hooked layer.
class IswState {
public:
    IswState(std::size_t layers, std::size_t warmup_epochs, bool recluster_each_epoch = false)
        : warmup_(warmup_epochs), recluster_(recluster_each_epoch), layers_(layers) {}

    std::size_t warmup_epochs() const noexcept { return warmup_; }
    std::size_t layers() const noexcept { return layers_.size(); }

    /// Feeds one variance map for `layer` observed during `epoch`. Before the warm-up boundary the
    /// running mean is accumulated; the first observation at or after it freezes the mask.
    void update(std::size_t layer, const VarianceMap& v, std::size_t epoch) {
        Layer& l = layer_at(layer);
        if (epoch < warmup_) {
            accumulate(l, v);
            return;
        }
        if (!l.mask) {
            if (l.count == 0) accumulate(l, v);
            l.mask = kmeans_split(running_mean(layer));
            l.mask_epoch = epoch;
            return;
        }
        if (recluster_) {
            if (epoch != l.mask_epoch) {
                l.mask = kmeans_split(running_mean(layer));
                l.mask_epoch = epoch;
            }
            accumulate(l, v);
        }
    }

    /// Whether the whitening loss of `layer` contributes during `epoch`.
    bool active(std::size_t layer, std::size_t epoch) const {
        const Layer& l = layer_at(layer);
        return epoch >= warmup_ && l.mask.has_value();
    }

    const std::optional<StyleMask>& mask(std::size_t layer) const { return layer_at(layer).mask; }

    VarianceMap running_mean(std::size_t layer) const {
        const Layer& l = layer_at(layer);
        if (l.count == 0) throw Error("isw: no variance observed for layer " + std::to_string(layer));
        VarianceMap out = l.sum;
        const double inv = 1.0 / static_cast<double>(l.count);
        for (std::size_t i = 0; i < out.v.dim(); ++i)
            for (std::size_t j = 0; j < out.v.dim(); ++j) out.v(i, j) *= inv;
        return out;
    }

    std::size_t observations(std::size_t layer) const { return layer_at(layer).count; }

    /// Restores a frozen mask (e.g. from a checkpoint).
    void set_mask(std::size_t layer, StyleMask mask) { layer_at(layer).mask = std::move(mask); }

private:
    struct Layer {
        VarianceMap sum;
        std::size_t count = 0;
        std::optional<StyleMask> mask;
        std::size_t mask_epoch = 0;
    };

    Layer& layer_at(std::size_t layer) {
        if (layer >= layers_.size()) throw Error("isw: unknown layer id " + std::to_string(layer));
        return layers_[layer];
    }
    const Layer& layer_at(std::size_t layer) const {
        if (layer >= layers_.size()) throw Error("isw: unknown layer id " + std::to_string(layer));
        return layers_[layer];
    }

    static void accumulate(Layer& l, const VarianceMap& v) {
        if (l.count == 0) {
            l.sum = v;
        } else {
            if (v.v.dim() != l.sum.v.dim()) throw Error("isw: variance dimension changed");
            for (std::size_t i = 0; i < v.v.dim(); ++i)
                for (std::size_t j = 0; j < v.v.dim(); ++j) l.sum.v(i, j) += v.v(i, j);
        }
        ++l.count;
    }

    std::size_t warmup_;
    bool recluster_;
    std::vector<Layer> layers_;
};

}  // namespace supw
