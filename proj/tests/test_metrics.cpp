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

#include <algorithm>
#include <iterator>
#include <random>
#include <set>

#include "supw/metrics.hpp"
#include "test_util.hpp"

using namespace supw;
using supw::testing::TempDir;

namespace {

Mask mask_from_bits(std::uint32_t bits, std::size_t w, std::size_t h) {
    Mask m(w, h);
    for (std::size_t i = 0; i < w * h; ++i) m.bits[i] = (bits >> i) & 1u;
    return m;
}

// Set-based oracle over pixel index sets.
SegMetrics set_metrics(const Mask& pred, const Mask& gt) {
    std::set<std::size_t> p, g;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        if (pred.bits[i]) p.insert(i);
        if (gt.bits[i]) g.insert(i);
    }
    std::set<std::size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(inter, inter.begin()));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(uni, uni.begin()));
    const double n = static_cast<double>(pred.bits.size());
    const bool both_empty = p.empty() && g.empty();
    SegMetrics m;
    m.iou = uni.empty() ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    m.precision = p.empty() ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter.size()) / static_cast<double>(p.size());
    m.recall = g.empty() ? (both_empty ? 1.0 : 0.0) : static_cast<double>(inter.size()) / static_cast<double>(g.size());
    // Correct pixels: in both or in neither.
    m.accuracy = (static_cast<double>(inter.size()) + (n - static_cast<double>(uni.size()))) / n;
    return m;
}

}  // namespace

TEST(Confusion, IdenticalAndComplement) {
    const Mask gt = mask_from_bits(0b101100101, 3, 3);
    const Confusion same = confusion(gt, gt);
    EXPECT_EQ(same.fp, 0u);
    EXPECT_EQ(same.fn, 0u);
    Mask inv = gt;
    for (auto& b : inv.bits) b = !b;
    const Confusion opp = confusion(inv, gt);
    EXPECT_EQ(opp.tp, 0u);
    EXPECT_EQ(opp.tn, 0u);
    EXPECT_EQ(opp.total(), 9u);
}

TEST(Confusion, RandomFourByFourMatchesPixelCount) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor probs(Shape{4, 4});
        Mask gt(4, 4);
        for (std::size_t i = 0; i < 16; ++i) {
            probs[i] = std::uniform_real_distribution<double>(0, 1)(rng);
            gt.bits[i] = rng() % 2;
        }
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < 16; ++i) {
            const bool p = probs[i] >= 0.5, g = gt.bits[i];
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
            tn += !p && !g;
        }
        const Confusion c = confusion(probs, gt);
        EXPECT_EQ(c, (Confusion{tp, fp, fn, tn}));
        EXPECT_EQ(c.total(), 16u);
    }
    EXPECT_THROW(confusion(Tensor(Shape{3, 4}), Mask(4, 4)), Error);
}

TEST(Confusion, ThresholdIsInclusive) {
    Mask gt(2, 1);
    gt.bits = {1, 0};
    const Confusion c = confusion(Tensor(Shape{1, 2}, {0.5, 0.49}), gt);
    EXPECT_EQ(c.tp, 1u);
    EXPECT_EQ(c.tn, 1u);
}

TEST(Binarize, MatchesConfusionThreshold) {
    const Tensor probs(Shape{2, 3}, {0.1, 0.5, 0.9, 0.49, 0.51, 0.0});
    const Mask m = binarize(probs);
    EXPECT_EQ(m.width, 3u);
    EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 1, 1, 0, 1, 0}));
    EXPECT_EQ(confusion(probs, m).fp + confusion(probs, m).fn, 0u);
    EXPECT_THROW(binarize(Tensor(Shape{6})), Error);
}

TEST(Metrics, Examples) {
    const SegMetrics perfect = metrics_from({5, 0, 0, 11});
    EXPECT_EQ(perfect.iou, 1.0);
    EXPECT_EQ(perfect.precision, 1.0);
    EXPECT_EQ(perfect.recall, 1.0);
    EXPECT_EQ(perfect.accuracy, 1.0);

    const SegMetrics half = metrics_from({4, 0, 4, 8});
    EXPECT_DOUBLE_EQ(half.recall, 0.5);
    EXPECT_DOUBLE_EQ(half.precision, 1.0);
    EXPECT_DOUBLE_EQ(half.iou, 0.5);

    const SegMetrics m = metrics_from({6, 2, 2, 6});
    EXPECT_DOUBLE_EQ(m.iou, 6.0 / 10.0);
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.recall, 0.75);
    EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
}

TEST(Metrics, EmptyConventions) {
    const SegMetrics both = metrics_from({0, 0, 0, 9});
    EXPECT_EQ(both.iou, 1.0);
    EXPECT_EQ(both.precision, 1.0);
    EXPECT_EQ(both.recall, 1.0);
    const SegMetrics missed = metrics_from({0, 0, 3, 6});
    EXPECT_EQ(missed.iou, 0.0);
    EXPECT_EQ(missed.precision, 0.0);
    EXPECT_EQ(missed.recall, 0.0);
}

TEST(Metrics, ExhaustiveThreeByThreeAgainstSetOracle) {
    std::mt19937_64 rng(2);
    for (std::uint32_t g = 0; g < 512; ++g) {
        const Mask gt = mask_from_bits(g, 3, 3);
        for (int k = 0; k < 8; ++k) {
            const std::uint32_t p = k == 0 ? g : static_cast<std::uint32_t>(rng() % 512);
            const Mask pred = mask_from_bits(p, 3, 3);
            const SegMetrics got = metrics_from(confusion(pred, gt)), want = set_metrics(pred, gt);
            EXPECT_DOUBLE_EQ(got.iou, want.iou);
            EXPECT_DOUBLE_EQ(got.precision, want.precision);
            EXPECT_DOUBLE_EQ(got.recall, want.recall);
            EXPECT_DOUBLE_EQ(got.accuracy, want.accuracy);
            for (double v : {got.iou, got.precision, got.recall, got.accuracy}) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            const Confusion c = confusion(pred, gt);
            if (c.tp + c.fp + c.fn > 0) {
                EXPECT_LE(got.iou, std::min(got.precision, got.recall) + 1e-15);
            }
        }
    }
}

TEST(MeanStd, PopulationSigma) {
    const MeanStd ms = mean_std({0.4, 0.8});
    EXPECT_NEAR(ms.mean, 0.6, 1e-15);
    EXPECT_NEAR(ms.stddev, 0.2, 1e-15);
    EXPECT_EQ(mean_std({}).mean, 0.0);
}

TEST(DatasetReport, IdenticalDirectories) {
    TempDir dir("metrics");
    std::filesystem::create_directories(dir / "pred");
    std::filesystem::create_directories(dir / "gt");
    for (std::uint32_t i = 0; i < 4; ++i) {
        const Mask m = mask_from_bits(i * 77 + 5, 4, 4);
        save_mask(m, dir.path() / "pred" / ("m" + std::to_string(i) + ".png"));
        save_mask(m, dir.path() / "gt" / ("m" + std::to_string(i) + ".png"));
    }
    const Report r = dataset_report(dir / "pred", dir / "gt");
    EXPECT_EQ(r.images.size(), 4u);
    for (const MeanStd* ms : {&r.iou, &r.precision, &r.recall, &r.accuracy}) {
        EXPECT_EQ(ms->mean, 1.0);
        EXPECT_EQ(ms->stddev, 0.0);
    }
}

TEST(DatasetReport, TwoImagesMeanAndSigma) {
    TempDir dir("metrics");
    std::filesystem::create_directories(dir / "pred");
    std::filesystem::create_directories(dir / "gt");
    // 5 gt pixels; predictions covering 2 (iou 0.4) and 4 (iou 0.8) of them without false positives.
    Mask gt(5, 1, 1), a(5, 1), b(5, 1);
    a.bits = {1, 1, 0, 0, 0};
    b.bits = {1, 1, 1, 1, 0};
    save_mask(gt, dir.path() / "gt" / "a.png");
    save_mask(gt, dir.path() / "gt" / "b.png");
    save_mask(a, dir.path() / "pred" / "a.png");
    save_mask(b, dir.path() / "pred" / "b.png");
    const Report r = dataset_report(dir / "pred", dir / "gt");
    EXPECT_NEAR(r.iou.mean, 0.6, 1e-12);
    EXPECT_NEAR(r.iou.stddev, 0.2, 1e-12);
    EXPECT_EQ(r.images[0].name, "a.png");
    const auto j = r.to_json();
    EXPECT_EQ(j["stddev"], "population");
    EXPECT_NEAR(j["summary"]["iou"]["mean"].get<double>(), 0.6, 1e-12);
    for (const char* key : {"iou", "precision", "recall", "accuracy"}) EXPECT_TRUE(j["summary"].contains(key));
    const std::string table = r.to_table("source");
    EXPECT_NE(table.find("60.0 ± 20.0"), std::string::npos) << table;
    EXPECT_LT(table.find("IoU"), table.find("Prec."));
    EXPECT_LT(table.find("Rec."), table.find("Acc."));
}

TEST(DatasetReport, Errors) {
    TempDir dir("metrics");
    std::filesystem::create_directories(dir / "pred");
    std::filesystem::create_directories(dir / "gt");
    try {
        dataset_report(dir / "pred", dir / "gt");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no pairs"), std::string::npos);
    }
    save_mask(Mask(2, 2), dir.path() / "pred" / "x.png");
    EXPECT_THROW(dataset_report(dir / "pred", dir / "gt"), Error);
    EXPECT_THROW(dataset_report(dir / "nope", dir / "gt"), Error);
}
