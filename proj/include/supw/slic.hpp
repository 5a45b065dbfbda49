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
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "supw/image.hpp"

namespace supw {

struct SlicParams {
    std::size_t k = 500;
    double m = 50.0;
    std::size_t max_iter = 10;
    double min_region_frac = 0.25;

    void validate(std::size_t pixels) const {
        if (k < 1) throw Error("slic: k must be >= 1");
        if (!(m > 0.0)) throw Error("slic: compactness m must be positive");
        if (k > pixels)
            throw Error("slic: k = " + std::to_string(k) + " exceeds pixel count " + std::to_string(pixels));
        if (min_region_frac < 0.0) throw Error("slic: min_region_frac must be non-negative");
    }
};

/// Per-pixel region labels in [0, num_regions).
struct SuperpixelGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint32_t> labels;
    std::size_t num_regions = 0;
    std::vector<std::size_t> region_sizes;

    std::uint32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

    friend bool operator==(const SuperpixelGrid&, const SuperpixelGrid&) = default;
};

/// A cluster center in joint Lab / image-plane space.
struct SlicCenter {
    double l = 0, a = 0, b = 0;
    double x = 0, y = 0;
};

/// Joint color/space distance: sqrt(d_c^2 + (d_s / S)^2 * m^2).
inline double slic_distance(double d_color, double d_space, double m, double step) {
    if (!(step > 0.0)) throw Error("slic_distance: grid step must be positive");
    const double r = d_space / step;
    return std::sqrt(d_color * d_color + r * r * m * m);
}

inline double slic_step(std::size_t pixels, std::size_t k) {
    return std::sqrt(static_cast<double>(pixels) / static_cast<double>(k));
}

namespace detail {

inline double lab_gradient(const LabImage& lab, long x, long y) {
    const long w = static_cast<long>(lab.width), h = static_cast<long>(lab.height);
    auto px = [&](long xx, long yy) {
        xx = std::clamp(xx, 0L, w - 1);
        yy = std::clamp(yy, 0L, h - 1);
        return lab.px(static_cast<std::size_t>(yy * w + xx));
    };
    double g = 0.0;
    const double *l = px(x - 1, y), *r = px(x + 1, y), *u = px(x, y - 1), *d = px(x, y + 1);
    for (int c = 0; c < 3; ++c) g += (r[c] - l[c]) * (r[c] - l[c]) + (d[c] - u[c]) * (d[c] - u[c]);
    return g;
}

}  // namespace detail

/// Seeds centers on a regular grid of step ~sqrt(N/k): nx columns by ceil(k/nx) rows, so the
/// count lies in [k, k + nx). When the step is at least 3 px each seed moves to the lowest-gradient
/// pixel of its 3×3 neighborhood; ties keep the grid position.
inline std::vector<SlicCenter> init_centers(const LabImage& lab, std::size_t k) {
    const std::size_t n = lab.pixels();
    if (k < 1 || k > n) throw Error("init_centers: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    const double step = slic_step(n, k);
    const double w = static_cast<double>(lab.width), h = static_cast<double>(lab.height);
    std::size_t nx = static_cast<std::size_t>(std::lround(w / step));
    nx = std::clamp<std::size_t>(nx, 1, std::min(k, lab.width));
    std::size_t ny = (k + nx - 1) / nx;
    if (ny > lab.height) {
        ny = lab.height;
        nx = std::min(lab.width, (k + ny - 1) / ny);
    }
    const double sx = w / static_cast<double>(nx), sy = h / static_cast<double>(ny);

    std::vector<SlicCenter> centers;
    centers.reserve(nx * ny);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            double cx = (static_cast<double>(i) + 0.5) * sx - 0.5;
            double cy = (static_cast<double>(j) + 0.5) * sy - 0.5;
            if (step >= 3.0) {
                const long px = std::lround(cx), py = std::lround(cy);
                double best = detail::lab_gradient(lab, px, py);
                long bx = 0, by = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long qx = px + dx, qy = py + dy;
                        if (qx < 0 || qy < 0 || qx >= static_cast<long>(lab.width) || qy >= static_cast<long>(lab.height))
                            continue;
                        const double g = detail::lab_gradient(lab, qx, qy);
                        if (g < best) {
                            best = g;
                            bx = dx;
                            by = dy;
                        }
                    }
                if (bx != 0 || by != 0) {
                    cx = static_cast<double>(px + bx);
                    cy = static_cast<double>(py + by);
                }
            }
            const auto sxp = static_cast<std::size_t>(std::clamp(std::lround(cx), 0L, static_cast<long>(lab.width) - 1));
            const auto syp = static_cast<std::size_t>(std::clamp(std::lround(cy), 0L, static_cast<long>(lab.height) - 1));
            const double* c = lab.px(syp * lab.width + sxp);
            centers.push_back({c[0], c[1], c[2], cx, cy});
        }
    return centers;
}

/// Connected (4-neighborhood) components of a label map; components smaller than min_size are
/// merged into their largest adjacent component. Output labels are renumbered in row-major order
/// of first appearance.
inline SuperpixelGrid enforce_connectivity(const std::vector<std::uint32_t>& labels, std::size_t width,
                                           std::size_t height, double min_size) {
    const std::size_t n = width * height;
    std::vector<std::uint32_t> comp(n, std::numeric_limits<std::uint32_t>::max());
    std::vector<std::vector<std::size_t>> members;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != std::numeric_limits<std::uint32_t>::max()) continue;
        const auto id = static_cast<std::uint32_t>(members.size());
        members.emplace_back();
        comp[s] = id;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            members[id].push_back(p);
            const std::size_t x = p % width, y = p / width;
            auto visit = [&](std::size_t q) {
                if (comp[q] == std::numeric_limits<std::uint32_t>::max() && labels[q] == labels[p]) {
                    comp[q] = id;
                    stack.push_back(q);
                }
            };
            if (x > 0) visit(p - 1);
            if (x + 1 < width) visit(p + 1);
            if (y > 0) visit(p - width);
            if (y + 1 < height) visit(p + width);
        }
    }

    const std::size_t ncomp = members.size();
    std::vector<std::uint32_t> parent(ncomp);
    std::iota(parent.begin(), parent.end(), 0u);
    std::vector<std::size_t> size(ncomp);
    for (std::size_t c = 0; c < ncomp; ++c) size[c] = members[c].size();
    auto find = [&parent](std::uint32_t c) {
        while (parent[c] != c) c = parent[c] = parent[parent[c]];
        return c;
    };

    bool merged = true;
    while (merged && ncomp > 1) {
        merged = false;
        for (std::uint32_t c = 0; c < ncomp; ++c) {
            if (find(c) != c || static_cast<double>(size[c]) >= min_size) continue;
            std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
            std::vector<std::uint32_t> neighbors;
            for (std::size_t p : members[c]) {
                const std::size_t x = p % width, y = p / width;
                auto check = [&](std::size_t q) {
                    const std::uint32_t r = find(comp[q]);
                    if (r != c) neighbors.push_back(r);
                };
                if (x > 0) check(p - 1);
                if (x + 1 < width) check(p + 1);
                if (y > 0) check(p - width);
                if (y + 1 < height) check(p + width);
            }
            for (std::uint32_t r : neighbors)
                if (best == std::numeric_limits<std::uint32_t>::max() || size[r] > size[best] ||
                    (size[r] == size[best] && r < best))
                    best = r;
            if (best == std::numeric_limits<std::uint32_t>::max()) continue;
            parent[c] = best;
            size[best] += size[c];
            members[best].insert(members[best].end(), members[c].begin(), members[c].end());
            members[c].clear();
            merged = true;
        }
    }

    SuperpixelGrid grid;
    grid.width = width;
    grid.height = height;
    grid.labels.assign(n, 0);
    std::vector<std::uint32_t> remap(ncomp, std::numeric_limits<std::uint32_t>::max());
    for (std::size_t p = 0; p < n; ++p) {
        const std::uint32_t r = find(comp[p]);
        if (remap[r] == std::numeric_limits<std::uint32_t>::max()) {
            remap[r] = static_cast<std::uint32_t>(grid.num_regions++);
            grid.region_sizes.push_back(0);
        }
        grid.labels[p] = remap[r];
        ++grid.region_sizes[remap[r]];
    }
    return grid;
}

/// Localized k-means over (L, a, b, x, y) followed by connectivity enforcement.
inline SuperpixelGrid slic_run(const LabImage& lab, const SlicParams& params) {
    const std::size_t n = lab.pixels();
    params.validate(n);
    const std::size_t w = lab.width, h = lab.height;
    const double step = slic_step(n, params.k);
    const double inv_s2m2 = params.m * params.m / (step * step);
    std::vector<SlicCenter> centers = init_centers(lab, params.k);

    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> label(n, kNone);
    std::vector<double> best(n);
    auto dist2 = [&](const SlicCenter& c, std::size_t p) {
        const double* v = lab.px(p);
        const double dl = v[0] - c.l, da = v[1] - c.a, db = v[2] - c.b;
        const double dx = static_cast<double>(p % w) - c.x, dy = static_cast<double>(p / w) - c.y;
        return dl * dl + da * da + db * db + (dx * dx + dy * dy) * inv_s2m2;
    };

    for (std::size_t iter = 0; iter < std::max<std::size_t>(1, params.max_iter); ++iter) {
        std::fill(label.begin(), label.end(), kNone);
        std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
        for (std::uint32_t ci = 0; ci < centers.size(); ++ci) {
            const SlicCenter& c = centers[ci];
            const long x0 = std::max(0L, static_cast<long>(std::floor(c.x - step)));
            const long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(c.x + step)));
            const long y0 = std::max(0L, static_cast<long>(std::floor(c.y - step)));
            const long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(c.y + step)));
            for (long y = y0; y <= y1; ++y)
                for (long x = x0; x <= x1; ++x) {
                    const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                    const double d = dist2(c, p);
                    if (d < best[p]) {
                        best[p] = d;
                        label[p] = ci;
                    }
                }
        }
        // Pixels outside every search window fall back to a global nearest-center search.
        for (std::size_t p = 0; p < n; ++p) {
            if (label[p] != kNone) continue;
            for (std::uint32_t ci = 0; ci < centers.size(); ++ci) {
                const double d = dist2(centers[ci], p);
                if (d < best[p]) {
                    best[p] = d;
                    label[p] = ci;
                }
            }
        }

        std::vector<SlicCenter> sums(centers.size(), SlicCenter{0, 0, 0, 0, 0});
        std::vector<std::size_t> counts(centers.size(), 0);
        for (std::size_t p = 0; p < n; ++p) {
            SlicCenter& s = sums[label[p]];
            const double* v = lab.px(p);
            s.l += v[0];
            s.a += v[1];
            s.b += v[2];
            s.x += static_cast<double>(p % w);
            s.y += static_cast<double>(p / w);
            ++counts[label[p]];
        }
        double max_move = 0.0;
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            if (counts[ci] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[ci]);
            SlicCenter next{sums[ci].l * inv, sums[ci].a * inv, sums[ci].b * inv, sums[ci].x * inv, sums[ci].y * inv};
            max_move = std::max(max_move, std::hypot(next.x - centers[ci].x, next.y - centers[ci].y));
            centers[ci] = next;
        }
        if (max_move < 0.1 * step) break;
    }

    return enforce_connectivity(label, w, h, params.min_region_frac * static_cast<double>(n) / static_cast<double>(params.k));
}

inline SuperpixelGrid slic_run(const Image& img, const SlicParams& params) { return slic_run(rgb_to_lab(img), params); }

// ---------------------------------------------------------------------------
// Grid diagnostics.

/// True when every region is a single 4-connected component.
inline bool regions_connected(const SuperpixelGrid& g) {
    const SuperpixelGrid relabeled = enforce_connectivity(g.labels, g.width, g.height, 0.0);
    return relabeled.num_regions == g.num_regions;
}

/// Pixels with a right or lower neighbor of a different label.
inline std::vector<std::uint8_t> boundary_map(const std::vector<std::uint32_t>& labels, std::size_t w, std::size_t h) {
    std::vector<std::uint8_t> b(w * h, 0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t p = y * w + x;
            if ((x + 1 < w && labels[p + 1] != labels[p]) || (y + 1 < h && labels[p + w] != labels[p])) b[p] = 1;
        }
    return b;
}

/// Fraction of ground-truth boundary pixels within `tolerance` (Chebyshev) of a superpixel boundary.
/// Returns 1 when the ground truth has no boundary.
inline double boundary_recall(const SuperpixelGrid& g, const std::vector<std::uint32_t>& truth, std::size_t tolerance = 0) {
    const auto sp = boundary_map(g.labels, g.width, g.height);
    const auto gt = boundary_map(truth, g.width, g.height);
    const long t = static_cast<long>(tolerance), w = static_cast<long>(g.width), h = static_cast<long>(g.height);
    std::size_t total = 0, hit = 0;
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            if (!gt[static_cast<std::size_t>(y * w + x)]) continue;
            ++total;
            bool found = false;
            for (long dy = -t; dy <= t && !found; ++dy)
                for (long dx = -t; dx <= t && !found; ++dx) {
                    const long qx = x + dx, qy = y + dy;
                    if (qx >= 0 && qy >= 0 && qx < w && qy < h && sp[static_cast<std::size_t>(qy * w + qx)]) found = true;
                }
            hit += found ? 1 : 0;
        }
    return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

/// Mean of 4*pi*area / perimeter^2 over regions; perimeter counts unit pixel edges shared with
/// other regions or the image border.
inline double mean_isoperimetric_quotient(const SuperpixelGrid& g) {
    std::vector<double> perim(g.num_regions, 0.0);
    const std::size_t w = g.width, h = g.height;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint32_t l = g.at(y, x);
            perim[l] += (x == 0 || g.at(y, x - 1) != l) + (x + 1 == w || g.at(y, x + 1) != l) +
                        (y == 0 || g.at(y - 1, x) != l) + (y + 1 == h || g.at(y + 1, x) != l);
        }
    double sum = 0.0;
    for (std::size_t r = 0; r < g.num_regions; ++r)
        sum += 4.0 * std::numbers::pi * static_cast<double>(g.region_sizes[r]) / (perim[r] * perim[r]);
    return sum / static_cast<double>(g.num_regions);
}

/// Draws region boundaries (and optionally the image frame) in `color` over the image.
inline Image overlay(const Image& img, const SuperpixelGrid& g, std::array<double, 3> color = {1.0, 1.0, 0.0},
                     bool draw_frame = true) {
    if (img.width != g.width || img.height != g.height) throw Error("overlay: image and grid sizes differ");
    Image out = img;
    const std::size_t w = g.width, h = g.height;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint32_t l = g.at(y, x);
            bool edge = (x + 1 < w && g.at(y, x + 1) != l) || (y + 1 < h && g.at(y + 1, x) != l);
            if (draw_frame) edge = edge || x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if (edge)
                for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = color[c];
        }
    return out;
}

}  // namespace supw
