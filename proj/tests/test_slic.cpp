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

#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <set>

#include "supw/slic.hpp"
#include "supw/synthdata.hpp"

using namespace supw;

namespace {

// Independent BFS check that every label forms one 4-connected component.
bool each_label_connected(const SuperpixelGrid& g) {
    std::vector<char> seen(g.labels.size(), 0);
    std::set<std::uint32_t> started;
    for (std::size_t start = 0; start < g.labels.size(); ++start) {
        if (seen[start]) continue;
        const std::uint32_t l = g.labels[start];
        if (!started.insert(l).second) return false;  // second component with the same label
        std::queue<std::size_t> q;
        q.push(start);
        seen[start] = 1;
        while (!q.empty()) {
            const std::size_t p = q.front();
            q.pop();
            const std::size_t x = p % g.width, y = p / g.width;
            auto visit = [&](std::size_t qx, std::size_t qy) {
                const std::size_t n = qy * g.width + qx;
                if (!seen[n] && g.labels[n] == l) {
                    seen[n] = 1;
                    q.push(n);
                }
            };
            if (x > 0) visit(x - 1, y);
            if (x + 1 < g.width) visit(x + 1, y);
            if (y > 0) visit(x, y - 1);
            if (y + 1 < g.height) visit(x, y + 1);
        }
    }
    return true;
}

void expect_partition(const SuperpixelGrid& g) {
    ASSERT_EQ(g.labels.size(), g.width * g.height);
    ASSERT_EQ(g.region_sizes.size(), g.num_regions);
    std::vector<std::size_t> counts(g.num_regions, 0);
    for (auto l : g.labels) {
        ASSERT_LT(l, g.num_regions);
        ++counts[l];
    }
    EXPECT_EQ(counts, g.region_sizes);
    std::size_t total = 0;
    for (auto c : counts) {
        EXPECT_GT(c, 0u);
        total += c;
    }
    EXPECT_EQ(total, g.width * g.height);
}

Image quadrants(std::size_t n) {
    Image img(n, n);
    const double colors[4][3] = {{0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.1, 0.2, 0.9}, {0.9, 0.9, 0.2}};
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const int q = (y >= n / 2) * 2 + (x >= n / 2);
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = colors[q][c];
        }
    return img;
}

}  // namespace

TEST(SlicDistance, Examples) {
    EXPECT_DOUBLE_EQ(slic_distance(3, 0, 40, 10), 3.0);
    EXPECT_DOUBLE_EQ(slic_distance(0, 10, 40, 10), 40.0);
    EXPECT_NEAR(slic_distance(3, 4, 2, 4), std::sqrt(13.0), 1e-12);
    EXPECT_NEAR(slic_distance(3, 4, 2, 4), 3.6056, 1e-4);
}

TEST(SlicDistance, MonotoneAndNonNegative) {
    double prev = 0;
    for (double dc = 0; dc < 10; dc += 0.5) {
        const double d = slic_distance(dc, 2.0, 10, 5);
        EXPECT_GE(d, prev);
        prev = d;
    }
    prev = 0;
    for (double ds = 0; ds < 10; ds += 0.5) {
        const double d = slic_distance(1.0, ds, 10, 5);
        EXPECT_GE(d, prev);
        prev = d;
    }
    EXPECT_THROW(slic_distance(1, 1, 1, 0), Error);
}

TEST(InitCenters, SixteenBySixteenGrid) {
    const LabImage lab = rgb_to_lab(Image(256, 256, 0.4));
    EXPECT_DOUBLE_EQ(slic_step(256 * 256, 256), 16.0);
    const auto c = init_centers(lab, 256);
    ASSERT_EQ(c.size(), 256u);
    std::set<double> xs, ys;
    for (const auto& s : c) {
        xs.insert(s.x);
        ys.insert(s.y);
    }
    EXPECT_EQ(xs.size(), 16u);
    EXPECT_EQ(ys.size(), 16u);
    // Flat color: every seed stays on its exact grid position.
    for (std::size_t j = 0; j < 16; ++j)
        for (std::size_t i = 0; i < 16; ++i) {
            EXPECT_DOUBLE_EQ(c[j * 16 + i].x, 16.0 * i + 7.5);
            EXPECT_DOUBLE_EQ(c[j * 16 + i].y, 16.0 * j + 7.5);
        }
}

TEST(InitCenters, SingleCenterNearMiddle) {
    const LabImage lab = rgb_to_lab(Image(40, 30, 0.2));
    const auto c = init_centers(lab, 1);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_NEAR(c[0].x, 19.5, 1.0);
    EXPECT_NEAR(c[0].y, 14.5, 1.0);
}

TEST(InitCenters, CountWithinRoundingBand) {
    const LabImage lab = rgb_to_lab(Image(96, 64, 0.3));
    for (std::size_t k : {1u, 5u, 17u, 50u, 150u, 500u, 1000u, 6144u}) {
        const auto c = init_centers(lab, k);
        EXPECT_GE(c.size(), k);
        EXPECT_LE(static_cast<double>(c.size()), k + 2.0 * std::sqrt(static_cast<double>(k))) << "k=" << k;
    }
    EXPECT_THROW(init_centers(lab, 96 * 64 + 1), Error);
    EXPECT_THROW(init_centers(lab, 0), Error);
}

TEST(SlicRun, FlatImageGivesNearSquareRegions) {
    const SuperpixelGrid g = slic_run(Image(64, 64, 0.5), SlicParams{16, 10.0});
    expect_partition(g);
    ASSERT_EQ(g.num_regions, 16u);
    for (auto s : g.region_sizes) {
        EXPECT_GE(s, 256 * 0.9);
        EXPECT_LE(s, 256 * 1.1);
    }
}

TEST(SlicRun, QuadrantsAlignWithColorEdges) {
    const Image img = quadrants(64);
    const SuperpixelGrid g = slic_run(img, SlicParams{4, 1.0});
    expect_partition(g);
    // Brute force: every pixel whose right/lower neighbor lies in another quadrant must sit on a
    // superpixel boundary, and each region must be color-pure.
    auto quad = [](std::size_t x, std::size_t y) { return (y >= 32) * 2 + (x >= 32); };
    std::size_t truth_edges = 0, hits = 0;
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
            const bool right = x + 1 < 64 && quad(x + 1, y) != quad(x, y);
            const bool down = y + 1 < 64 && quad(x, y + 1) != quad(x, y);
            if (!right && !down) continue;
            ++truth_edges;
            const bool sp = (x + 1 < 64 && g.at(y, x + 1) != g.at(y, x)) || (y + 1 < 64 && g.at(y + 1, x) != g.at(y, x));
            hits += sp;
        }
    EXPECT_EQ(hits, truth_edges);
    std::vector<std::uint32_t> truth(64 * 64);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) truth[y * 64 + x] = static_cast<std::uint32_t>(quad(x, y));
    EXPECT_DOUBLE_EQ(boundary_recall(g, truth), 1.0);
}

TEST(SlicRun, EveryPixelItsOwnRegionAtUpperBound) {
    Image img(8, 8);
    std::mt19937_64 rng(3);
    for (double& v : img.rgb) v = std::uniform_real_distribution<double>(0, 1)(rng);
    EXPECT_EQ(init_centers(rgb_to_lab(img), 64).size(), 64u);
    SlicParams p{64, 10.0};
    p.min_region_frac = 0.0;
    const SuperpixelGrid g = slic_run(img, p);
    expect_partition(g);
    EXPECT_EQ(g.num_regions, 64u);
    EXPECT_THROW(slic_run(img, SlicParams{65, 10.0}), Error);
}

TEST(SlicRun, InvariantsOnSyntheticImages) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Sample s = gen_sample(seed % 2 ? DomainSpec::target() : DomainSpec::source(), 64, seed);
        const SuperpixelGrid g = slic_run(s.image, SlicParams{60, 20.0});
        expect_partition(g);
        EXPECT_TRUE(each_label_connected(g)) << "seed " << seed;
        EXPECT_TRUE(regions_connected(g));
    }
}

TEST(SlicRun, Deterministic) {
    const Sample s = gen_sample(DomainSpec::source(), 64, 5);
    EXPECT_EQ(slic_run(s.image, SlicParams{50, 30.0}), slic_run(s.image, SlicParams{50, 30.0}));
}

TEST(SlicRun, RejectsBadParameters) {
    const Image img(16, 16, 0.5);
    EXPECT_THROW(slic_run(img, SlicParams{0, 10.0}), Error);
    EXPECT_THROW(slic_run(img, SlicParams{4, 0.0}), Error);
}

TEST(EnforceConnectivity, SmallFragmentJoinsLargestNeighbor) {
    // 0 0 0 0
    // 0 1 2 2
    // 0 0 2 2      label 1 is a single pixel: its neighbors are 0 (3 sides) and 2.
    const std::vector<std::uint32_t> labels = {0, 0, 0, 0, 0, 1, 2, 2, 0, 0, 2, 2};
    const SuperpixelGrid g = enforce_connectivity(labels, 4, 3, 2.0);
    EXPECT_EQ(g.num_regions, 2u);
    EXPECT_EQ(g.at(1, 1), g.at(0, 0));
    EXPECT_EQ(g.region_sizes[g.at(0, 0)], 8u);
}

TEST(EnforceConnectivity, SplitsDisconnectedLabels) {
    const std::vector<std::uint32_t> labels = {0, 1, 0, 0, 1, 0};
    const SuperpixelGrid g = enforce_connectivity(labels, 3, 2, 0.0);
    EXPECT_EQ(g.num_regions, 3u);
    EXPECT_TRUE(each_label_connected(g));
}

TEST(Overlay, SingleRegionOnlyFrame) {
    const Image img(6, 5, 0.2);
    SuperpixelGrid g{6, 5, std::vector<std::uint32_t>(30, 0), 1, {30}};
    const Image out = overlay(img, g);
    ASSERT_EQ(out.width, 6u);
    ASSERT_EQ(out.height, 5u);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
            const bool frame = x == 0 || y == 0 || x == 5 || y == 4;
            EXPECT_EQ(out.at(y, x, 0), frame ? 1.0 : 0.2);
        }
    EXPECT_EQ(overlay(img, g, {1, 1, 0}, false), img);
}

TEST(Overlay, QuadrantGridDrawsCross) {
    const Image img(8, 8, 0.0);
    SuperpixelGrid g{8, 8, std::vector<std::uint32_t>(64), 4, {16, 16, 16, 16}};
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) g.labels[y * 8 + x] = static_cast<std::uint32_t>((y >= 4) * 2 + (x >= 4));
    const Image out = overlay(img, g, {1, 1, 0}, false);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(out.at(y, x, 0) == 1.0, x == 3 || y == 3) << x << "," << y;
    EXPECT_THROW(overlay(Image(4, 4), g), Error);
}
