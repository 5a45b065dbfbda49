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

#include <fstream>
#include <map>

#include "supw/synthdata.hpp"
#include "test_util.hpp"

using namespace supw;
using supw::testing::TempDir;

namespace {

bool hue_in(double h, const Range& r) { return h >= r.lo - 1e-12 && h <= r.hi + 1e-12; }

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(DeriveSeed, DistinctAndStable) {
    EXPECT_EQ(derive_seed(3, 4), derive_seed(3, 4));
    EXPECT_NE(derive_seed(3, 4), derive_seed(3, 5));
    EXPECT_NE(derive_seed(3, 4), derive_seed(4, 4));
}

TEST(GenSample, Deterministic) {
    const auto a = gen_sample(DomainSpec::source(), 64, 11), b = gen_sample(DomainSpec::source(), 64, 11);
    EXPECT_EQ(a.image.rgb, b.image.rgb);
    EXPECT_EQ(a.mask.bits, b.mask.bits);
    const auto c = gen_sample(DomainSpec::source(), 64, 12);
    EXPECT_NE(a.image.rgb, c.image.rgb);
}

TEST(GenSample, MaskMatchesEllipsesAndAreas) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const DomainSpec spec = seed % 2 ? DomainSpec::target() : DomainSpec::source();
        const Sample s = gen_sample(spec, 128, seed);
        ASSERT_GE(s.lesions.size(), spec.min_lesions);
        ASSERT_LE(s.lesions.size(), spec.max_lesions);
        ASSERT_EQ(s.lesion_hues.size(), s.lesions.size());
        std::size_t on = 0;
        for (std::size_t y = 0; y < 128; ++y)
            for (std::size_t x = 0; x < 128; ++x) {
                bool in = false;
                for (const auto& e : s.lesions) in = in || e.contains(static_cast<double>(x), static_cast<double>(y));
                EXPECT_EQ(s.mask.at(y, x) != 0, in);
                on += s.mask.at(y, x);
            }
        EXPECT_GT(on, 0u);
        // A lone ellipse's raster area deviates from pi*a*b by at most about its perimeter.
        if (s.lesions.size() == 1) {
            const Ellipse& e = s.lesions[0];
            EXPECT_NEAR(static_cast<double>(on), e.area(), e.perimeter()) << "seed " << seed;
        }
    }
}

TEST(GenSample, HuesInsideSpecRanges) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        for (const DomainSpec& spec : {DomainSpec::source(), DomainSpec::target()}) {
            const Sample s = gen_sample(spec, 64, seed);
            EXPECT_TRUE(hue_in(s.background_hue, spec.background_hue));
            for (double h : s.lesion_hues) EXPECT_TRUE(hue_in(h, spec.lesion_hue)) << h;
        }
    }
}

TEST(GenSample, RejectsBadInput) {
    EXPECT_THROW(gen_sample(DomainSpec::source(), 60, 0), Error);
    DomainSpec bad = DomainSpec::source();
    bad.lesion_hue = {0.5, 1.0};
    EXPECT_THROW(gen_sample(bad, 64, 0), Error);
    bad = DomainSpec::source();
    bad.min_lesions = 0;
    EXPECT_THROW(gen_sample(bad, 64, 0), Error);
    EXPECT_THROW(DomainSpec::by_name("mars"), Error);
}

TEST(Domains, MeanHueDifference) {
    // Differences of circular means over 20 samples per domain.
    double sx[2] = {0, 0}, sy[2] = {0, 0};
    const DomainSpec specs[2] = {DomainSpec::source(), DomainSpec::target()};
    for (int d = 0; d < 2; ++d)
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const double h = mean_hue(gen_sample(specs[d], 64, seed).image);
            sx[d] += std::cos(2 * std::numbers::pi * h);
            sy[d] += std::sin(2 * std::numbers::pi * h);
        }
    auto angle = [](double x, double y) {
        const double h = std::atan2(y, x) / (2 * std::numbers::pi);
        return h < 0 ? h + 1 : h;
    };
    EXPECT_GT(hue_distance(angle(sx[0], sy[0]), angle(sx[1], sy[1])), 0.15);
}

TEST(Domains, SharedGeometry) {
    const Sample a = gen_sample(DomainSpec::source(), 64, 5), b = gen_sample(DomainSpec::target(), 64, 5);
    ASSERT_EQ(a.lesions.size(), b.lesions.size());
    for (std::size_t i = 0; i < a.lesions.size(); ++i) {
        EXPECT_EQ(a.lesions[i].cx, b.lesions[i].cx);
        EXPECT_EQ(a.lesions[i].a, b.lesions[i].a);
    }
    EXPECT_EQ(a.mask.bits, b.mask.bits);
}

TEST(SplitSizes, Examples) {
    EXPECT_EQ(split_sizes(10), (std::array<std::size_t, 3>{8, 1, 1}));
    EXPECT_EQ(split_sizes(250), (std::array<std::size_t, 3>{200, 25, 25}));
    EXPECT_EQ(split_sizes(13), (std::array<std::size_t, 3>{10, 1, 2}));
}

TEST(GenDataset, ManifestAndDeterminism) {
    TempDir dir("synth");
    const auto m = gen_dataset(DomainSpec::target(), 10, dir / "a", 42, 32);
    ASSERT_EQ(m.size(), 10u);
    std::map<std::string, int> split_count, file_count;
    for (const auto& e : m) {
        ++split_count[e.split];
        ++file_count[e.file];
        EXPECT_EQ(e.domain, "target");
        EXPECT_TRUE(std::filesystem::exists(dir / "a" / "images" / e.file));
        EXPECT_TRUE(std::filesystem::exists(dir / "a" / "masks" / e.file));
    }
    EXPECT_EQ(split_count["train"], 8);
    EXPECT_EQ(split_count["val"], 1);
    EXPECT_EQ(split_count["test"], 1);
    for (const auto& [file, count] : file_count) EXPECT_EQ(count, 1) << file;
    EXPECT_EQ(read_manifest(dir / "a"), m);

    gen_dataset(DomainSpec::target(), 10, dir / "b", 42, 32);
    for (const char* f : {"manifest.json", "images/0003.png", "masks/0007.png"})
        EXPECT_EQ(file_bytes(dir / "a" / f), file_bytes(dir / "b" / f)) << f;

    const Sample s = gen_sample(DomainSpec::target(), 32, m[3].seed);
    EXPECT_EQ(load_mask(dir / "a" / "masks" / "0003.png").bits, s.mask.bits);
}

TEST(GenDataset, Errors) {
    TempDir dir("synth");
    EXPECT_THROW(gen_dataset(DomainSpec::source(), 9, dir / "x", 0, 32), Error);
    EXPECT_THROW(read_manifest(dir / "missing"), Error);
    std::ofstream(dir / "manifest.json") << "{not json";
    EXPECT_THROW(read_manifest(dir.path()), Error);
}
