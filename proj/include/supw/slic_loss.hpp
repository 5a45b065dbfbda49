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
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "supw/image.hpp"
#include "supw/slic.hpp"
#include "supw/tensor.hpp"

namespace supw {

enum class LsgMode { hard, soft };

/// How a single "superpixel weight" w maps onto the two weights of the combined loss.
enum class WeightReading {
    convex,        // lambda2 = w, lambda1 = 1 - w
    lambda2_only,  // lambda2 = w, lambda1 = 1
};

struct SlicLossConfig {
    double lambda1 = 0.25;
    double lambda2 = 0.75;
    double tau = 0.9;
    LsgMode mode = LsgMode::soft;

    static SlicLossConfig from_weight(double w, WeightReading reading = WeightReading::convex, double tau = 0.9) {
        if (w < 0.0 || w > 1.0) throw Error("superpixel weight must lie in [0,1]");
        return {reading == WeightReading::convex ? 1.0 - w : 1.0, w, tau, LsgMode::soft};
    }

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("slic loss weights must be non-negative");
        if (lambda1 == 0.0 && lambda2 == 0.0) throw Error("slic loss weights cannot both be zero");
        if (!(tau > 0.5 && tau <= 1.0)) throw Error("occupancy threshold tau must lie in (0.5, 1]");
    }
};

namespace detail {

inline void require_grid_match(const Tensor& probs, const SuperpixelGrid& grid, const char* what) {
    if (probs.rank() != 2 || probs.dim(0) != grid.height || probs.dim(1) != grid.width)
        throw Error(std::string(what) + ": prediction " + shape_str(probs.shape()) + " does not match grid " +
                    std::to_string(grid.height) + "x" + std::to_string(grid.width));
}

inline std::vector<double> region_means(const Tensor& probs, const SuperpixelGrid& grid) {
    std::vector<double> mean(grid.num_regions, 0.0);
    for (std::size_t p = 0; p < grid.labels.size(); ++p) mean[grid.labels[p]] += probs[p];
    for (std::size_t j = 0; j < grid.num_regions; ++j) {
        if (grid.region_sizes[j] == 0) throw Error("occupancy: empty superpixel region " + std::to_string(j));
        mean[j] /= static_cast<double>(grid.region_sizes[j]);
    }
    return mean;
}

}  // namespace detail

/// Fraction of each superpixel covered by its majority class: max(p̄, 1 - p̄) with p̄ the mean
/// foreground probability inside the region.
inline std::vector<double> occupancy(const Tensor& probs, const SuperpixelGrid& grid) {
    detail::require_grid_match(probs, grid, "occupancy");
    auto mean = detail::region_means(probs, grid);
    for (double& v : mean) v = std::max(v, 1.0 - v);
    return mean;
}

/// Superpixel-guided inconsistency. Hard mode is the fraction of regions with occupancy below tau
/// (no gradient); soft mode averages the hinge relu(tau - o_j) / tau.
inline GradPair l_sg(const Tensor& probs, const SuperpixelGrid& grid, double tau, LsgMode mode = LsgMode::soft) {
    if (!(tau > 0.5 && tau <= 1.0)) throw Error("l_sg: tau must lie in (0.5, 1]");
    detail::require_grid_match(probs, grid, "l_sg");
    const std::vector<double> mean = detail::region_means(probs, grid);
    const double regions = static_cast<double>(grid.num_regions);
    double loss = 0.0;
    // Per-region derivative of the loss w.r.t. the region mean.
    std::vector<double> dmean(grid.num_regions, 0.0);
    for (std::size_t j = 0; j < grid.num_regions; ++j) {
        const double o = std::max(mean[j], 1.0 - mean[j]);
        if (!(o < tau)) continue;
        if (mode == LsgMode::hard) {
            loss += 1.0;
        } else {
            loss += (tau - o) / tau;
            const double dodm = mean[j] > 0.5 ? 1.0 : (mean[j] < 0.5 ? -1.0 : 0.0);
            dmean[j] = -dodm / (tau * regions * static_cast<double>(grid.region_sizes[j]));
        }
    }
    loss /= regions;
    auto backward = [dmean = std::move(dmean), labels = grid.labels, shape = probs.shape()](const Tensor&
                                                                                                 grad) -> std::vector<Tensor> {
        Tensor d(shape);
        const double g = grad.item();
        for (std::size_t p = 0; p < labels.size(); ++p) d[p] = g * dmean[labels[p]];
        return {std::move(d)};
    };
    return {Tensor::scalar(loss), std::move(backward)};
}

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]; the gradient is zero
/// where the clamp is active.
inline GradPair bce(const Tensor& target, const Tensor& probs, double clamp_eps = 1e-7) {
    if (target.shape() != probs.shape())
        throw Error("bce: target " + shape_str(target.shape()) + " vs prediction " + shape_str(probs.shape()));
    const double n = static_cast<double>(probs.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], clamp_eps, 1.0 - clamp_eps);
        const double y = target[i];
        loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    loss /= n;
    auto backward = [target, probs, clamp_eps, n](const Tensor& grad) -> std::vector<Tensor> {
        Tensor d(probs.shape());
        const double g = grad.item() / n;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const double p = probs[i];
            if (p < clamp_eps || p > 1.0 - clamp_eps) continue;
            const double y = target[i];
            d[i] = g * (-y / p + (1.0 - y) / (1.0 - p));
        }
        return {std::move(d)};
    };
    return {Tensor::scalar(loss), std::move(backward)};
}

/// Combined superpixel loss lambda1 * CE + lambda2 * L_SG over a precomputed grid.
inline GradPair l_slic(const Tensor& target, const Tensor& probs, const SuperpixelGrid& grid, const SlicLossConfig& cfg) {
    cfg.validate();
    GradPair ce = bce(target, probs);
    GradPair sg = l_sg(probs, grid, cfg.tau, cfg.mode);
    const double value = cfg.lambda1 * ce.value.item() + cfg.lambda2 * sg.value.item();
    auto backward = [ce = std::move(ce), sg = std::move(sg), cfg](const Tensor& grad) -> std::vector<Tensor> {
        Tensor d = ce.backward(grad)[0];
        d *= cfg.lambda1;
        Tensor ds = sg.backward(grad)[0];
        ds *= cfg.lambda2;
        d += ds;
        return {std::move(d)};
    };
    return {Tensor::scalar(value), std::move(backward)};
}

// ---------------------------------------------------------------------------
// Grid cache keyed by image content and SLIC parameters.

inline std::uint64_t image_hash(const Image& img, const SlicParams& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 1099511628211ull;
        }
    };
    mix(img.width);
    mix(img.height);
    for (double v : img.rgb) mix(std::bit_cast<std::uint64_t>(v));
    mix(params.k);
    mix(std::bit_cast<std::uint64_t>(params.m));
    mix(params.max_iter);
    mix(std::bit_cast<std::uint64_t>(params.min_region_frac));
    return h;
}

/// Concurrent readers, single writer per insertion.
class GridCache {
public:
    std::shared_ptr<const SuperpixelGrid> get(const Image& img, const SlicParams& params) {
        const std::uint64_t key = image_hash(img, params);
        {
            std::shared_lock lock(mutex_);
            if (auto it = grids_.find(key); it != grids_.end()) return it->second;
        }
        auto grid = std::make_shared<const SuperpixelGrid>(slic_run(img, params));
        std::unique_lock lock(mutex_);
        return grids_.emplace(key, std::move(grid)).first->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return grids_.size();
    }

private:
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::uint64_t, std::shared_ptr<const SuperpixelGrid>> grids_;
};

/// Combined superpixel loss computing (or fetching) the grid for `image`.
inline GradPair l_slic(const Image& image, const Tensor& target, const Tensor& probs, const SlicLossConfig& cfg,
                       const SlicParams& slic_params, GridCache* cache = nullptr) {
    if (probs.rank() != 2 || probs.dim(0) != image.height || probs.dim(1) != image.width)
        throw Error("l_slic: image and prediction sizes differ");
    if (cache) return l_slic(target, probs, *cache->get(image, slic_params), cfg);
    return l_slic(target, probs, slic_run(image, slic_params), cfg);
}

}  // namespace supw
