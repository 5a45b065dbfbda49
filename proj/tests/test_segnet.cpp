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

#include "param_fn.hpp"
#include "supw/gradcheck.hpp"
#include "supw/segnet.hpp"
#include "supw/slic_loss.hpp"
#include "supw/synthdata.hpp"
#include "test_util.hpp"

using namespace supw;
using supw::testing::TempDir;

namespace {

Tensor sample_input(std::size_t size, std::uint64_t seed) {
    return to_tensor(gen_sample(DomainSpec::source(), size, seed).image);
}

}  // namespace

TEST(SegNet, BuildIsDeterministicAndSized) {
    EXPECT_EQ(SegNetwork::build({8, 16, 32}, 3), SegNetwork::build({8, 16, 32}, 3));
    EXPECT_FALSE(SegNetwork::build({8, 16, 32}, 3) == SegNetwork::build({8, 16, 32}, 4));
    const SegNetwork net = SegNetwork::build();
    // 3×3 kernels for each block, then a 1×1 decoder with one bias.
    const std::size_t want = 3 * 8 * 9 + 8 * 16 * 9 + 16 * 32 * 9 + 32 + 1;
    EXPECT_EQ(net.parameter_count(), want);
    EXPECT_LT(net.parameter_count(), 100000u);
    ASSERT_EQ(net.parameters().size(), 5u);
    EXPECT_EQ(net.parameters()[0].name, "enc0.weight");
    EXPECT_EQ(net.parameters()[4].name, "dec.bias");
    EXPECT_THROW(SegNetwork::build({8, 0, 32}), Error);
}

TEST(SegNet, ZeroInputGivesConstantSigmoidOfBias) {
    SegNetwork net = SegNetwork::build({8, 16, 32}, 1);
    net.parameters()[4].value[0] = 0.3;
    const ForwardResult r = forward(net, Tensor(Shape{1, 3, 16, 16}), false);
    const double want = 1.0 / (1.0 + std::exp(-0.3));
    for (double v : r.probs.values()) EXPECT_NEAR(v, want, 1e-15);
}

TEST(SegNet, ShapeContract) {
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 2);
    const ForwardResult r = forward(net, sample_input(256, 1), true);
    EXPECT_EQ(r.probs.shape(), (Shape{256, 256}));
    ASSERT_EQ(r.features.size(), 3u);
    EXPECT_EQ(r.features[0].shape(), (Shape{1, 8, 128, 128}));
    EXPECT_EQ(r.features[1].shape(), (Shape{1, 16, 64, 64}));
    EXPECT_EQ(r.features[2].shape(), (Shape{1, 32, 32, 32}));
    EXPECT_THROW(forward(net, Tensor(Shape{1, 3, 20, 16})), Error);
    EXPECT_THROW(forward(net, Tensor(Shape{1, 1, 16, 16})), Error);
}

TEST(SegNet, CaptureFlagAndPurity) {
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 2);
    const Tensor x = sample_input(32, 2);
    const ForwardResult a = forward(net, x, true), b = forward(net, x, false), c = forward(net, x, true);
    EXPECT_TRUE(b.features.empty());
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_EQ(a.probs, c.probs);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.features[i], c.features[i]);
}

TEST(SegNet, OutputRangeAndFeatureMeans) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const SegNetwork net = SegNetwork::build({8, 16, 32}, seed);
        const ForwardResult r = forward(net, sample_input(32, seed + 10), true);
        for (double v : r.probs.values()) {
            ASSERT_TRUE(std::isfinite(v));
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
        for (const Tensor& f : r.features) {
            const std::size_t c = f.dim(1), plane = f.dim(2) * f.dim(3);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double m = 0;
                for (std::size_t p = 0; p < plane; ++p) m += f[ch * plane + p];
                EXPECT_NEAR(m / static_cast<double>(plane), 0.0, 1e-9);
            }
        }
    }
}

TEST(SegNet, ParameterGradientMatchesFiniteDifferences) {
    const SegNetwork net = SegNetwork::build({4, 4, 4}, 5);
    const Sample s = gen_sample(DomainSpec::source(), 16, 3);
    const Tensor x = to_tensor(s.image), y = to_tensor(s.mask);
    auto objective = [&](const SegNetwork& n) {
        const ForwardResult r = forward(n, x, true);
        const GradPair l = bce(y, r.probs);
        // Include a feature-side term so the hook gradient path is exercised.
        std::vector<Tensor> df;
        double extra = 0;
        for (const Tensor& f : r.features) {
            Tensor g = f;
            for (std::size_t i = 0; i < f.size(); ++i) extra += 0.05 * f[i] * f[i] * (i % 3 == 0);
            for (std::size_t i = 0; i < f.size(); ++i) g[i] = 0.1 * f[i] * (i % 3 == 0);
            df.push_back(g);
        }
        return std::make_pair(l.value.item() + extra, backward(n, r.tape, l.backward(Tensor::scalar(1.0))[0], df));
    };
    const GradcheckReport rep =
        gradcheck(supw::testing::over_parameters(net, objective), supw::testing::flatten_parameters(net));
    EXPECT_TRUE(rep.passed) << "max rel " << rep.max_rel_error << " at " << rep.worst_index;
}

TEST(SegNet, FeatureOnlyBackwardLeavesHeadUntouched) {
    const SegNetwork net = SegNetwork::build({4, 4, 4}, 5);
    const ForwardResult r = forward(net, sample_input(16, 4), true);
    std::vector<Tensor> df;
    for (const Tensor& f : r.features) df.push_back(f);
    const auto g = backward(net, r.tape, Tensor(), df);
    for (double v : g[3].values()) EXPECT_EQ(v, 0.0);
    for (double v : g[4].values()) EXPECT_EQ(v, 0.0);
    double norm = 0;
    for (double v : g[0].values()) norm += v * v;
    EXPECT_GT(norm, 0.0);
}

TEST(ForwardPair, IdentityTransformGivesZeroVariance) {
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 6);
    const Image img = gen_sample(DomainSpec::source(), 32, 5).image;
    const PairForward p = forward_pair(net, img, PhotometricParams::identity(), 1);
    for (std::size_t b = 0; b < 3; ++b) {
        EXPECT_EQ(p.original.features[b], p.transformed.features[b]);
        for (double v : p.variance[b].v.values()) EXPECT_EQ(v, 0.0);
    }
}

TEST(ForwardPair, JitterGivesNonNegativeVarianceWithPositiveEntry) {
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 7);
    const Image img = gen_sample(DomainSpec::source(), 32, 6).image;
    const PairForward p = forward_pair(net, img, PhotometricParams{}, 11);
    const PairForward q = forward_pair(net, img, PhotometricParams{}, 11);
    for (std::size_t b = 0; b < 3; ++b) {
        double mx = 0;
        for (std::size_t i = 0; i < p.variance[b].v.dim(); ++i)
            for (std::size_t j = 0; j < p.variance[b].v.dim(); ++j) {
                const double d = (p.cov_original[b](i, j) - p.cov_transformed[b](i, j)) / 2.0;
                EXPECT_NEAR(p.variance[b].v(i, j), d * d, 1e-15);
                EXPECT_GE(p.variance[b].v(i, j), 0.0);
                mx = std::max(mx, p.variance[b].v(i, j));
            }
        EXPECT_GT(mx, 0.0);
        EXPECT_EQ(p.variance[b].v, q.variance[b].v);
    }
}

TEST(Checkpoint, RoundTripReproducesForwardExactly) {
    TempDir dir("ckpt");
    SegNetwork net = SegNetwork::build({8, 16, 32}, 8);
    net.quantize_f32();
    save_checkpoint(net, dir / "net.ckpt");
    const SegNetwork back = load_checkpoint(dir / "net.ckpt");
    EXPECT_EQ(back, net);
    const Tensor x = sample_input(32, 7);
    EXPECT_EQ(forward(back, x, false).probs, forward(net, x, false).probs);
}

TEST(Checkpoint, MetadataAndExtrasSurvive) {
    TempDir dir("ckpt");
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 9);
    Checkpoint ck = make_checkpoint(net, 7, 0xDEADBEEFull, "rng-state", {{"isw.0.mask", Tensor(Shape{2, 2}, {0, 1, 1, 0})}});
    save_checkpoint(ck, dir / "a.ckpt");
    const Checkpoint back = read_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(back.epoch, 7u);
    EXPECT_EQ(back.config_hash, 0xDEADBEEFull);
    EXPECT_EQ(back.rng_state, "rng-state");
    EXPECT_EQ(back.tensors.size(), net.parameters().size() + 1);
    const std::string bytes = encode_checkpoint(ck);
    EXPECT_EQ(bytes.substr(0, 4), "SUPW");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // little-endian version 1
    EXPECT_EQ(bytes[5], 0);
}

TEST(Checkpoint, RejectsTruncatedBadMagicAndVersion) {
    const SegNetwork net = SegNetwork::build({8, 16, 32}, 10);
    const std::string bytes = encode_checkpoint(make_checkpoint(net));
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), Error) << cut;
    std::string bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), Error);
    std::string v2 = bytes;
    v2[4] = 2;
    try {
        decode_checkpoint(v2);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported version"), std::string::npos) << e.what();
    }
    EXPECT_THROW(decode_checkpoint(bytes + "x"), Error);

    TempDir dir("ckpt");
    std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 3);
    EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), Error);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}
