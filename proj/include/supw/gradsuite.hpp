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

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "supw/gradcheck.hpp"
#include "supw/train.hpp"

namespace supw {

inline Tensor flatten_parameters(const SegNetwork& net) {
    std::vector<double> flat;
    for (const auto& p : net.parameters()) flat.insert(flat.end(), p.value.values().begin(), p.value.values().end());
    const std::size_t n = flat.size();
    return Tensor(Shape{n}, std::move(flat));
}

inline SegNetwork with_parameters(SegNetwork net, const Tensor& flat) {
    std::size_t k = 0;
    for (auto& p : net.parameters())
        for (double& v : p.value.values()) v = flat[k++];
    if (k != flat.size()) throw Error("with_parameters: size mismatch");
    return net;
}

inline Tensor flatten(const std::vector<Tensor>& tensors) {
    std::vector<double> flat;
    for (const auto& g : tensors) flat.insert(flat.end(), g.values().begin(), g.values().end());
    const std::size_t n = flat.size();
    return Tensor(Shape{n}, std::move(flat));
}

/// (network -> value, parameter gradients).
using NetObjective = std::function<std::pair<double, std::vector<Tensor>>(const SegNetwork&)>;

/// Wraps a network objective as a function of the flat parameter vector, for gradcheck.
inline ScalarFn over_parameters(const SegNetwork& base, NetObjective objective) {
    return [base, objective](const Tensor& flat) {
        const auto [value, grads] = objective(with_parameters(base, flat));
        Tensor g = flatten(grads);
        return GradPair{Tensor::scalar(value), [g](const Tensor& d) {
                            Tensor out = g;
                            out *= d.item();
                            return std::vector<Tensor>{out};
                        }};
    };
}

struct GradCase {
    std::string name;
    GradcheckReport report;
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.values()) v = d(rng);
    return t;
}

}  // namespace detail

/// Central-difference checks (h = 1e-5, relative tolerance 1e-3) of every loss gradient and of the
/// full training objective through a small network on a 16×16 input.
inline std::vector<GradCase> gradient_suite(std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    std::vector<GradCase> out;
    const Sample sample = gen_sample(DomainSpec::source(), 16, derive_seed(seed, 1));
    const Tensor target = to_tensor(sample.mask);
    const SuperpixelGrid grid = slic_run(sample.image, SlicParams{8, 20.0, 10, 0.25});

    const Tensor probs = detail::uniform_tensor(Shape{16, 16}, rng, 0.05, 0.95);
    out.push_back({"bce", gradcheck([&](const Tensor& p) { return bce(target, p); }, probs)});
    out.push_back({"l_sg (soft)", gradcheck([&](const Tensor& p) { return l_sg(p, grid, 0.9, LsgMode::soft); }, probs)});

    const Tensor features = detail::uniform_tensor(Shape{6, 5, 5}, rng, -1.0, 1.0);
    auto through_cov = [](std::function<GradPair(const Tensor&)> loss) {
        return [loss](const Tensor& f) {
            GradPair cov = covariance(f);
            GradPair l = loss(cov.value);
            return GradPair{l.value, [cov, l](const Tensor& d) { return cov.backward(l.backward(d)[0]); }};
        };
    };
    out.push_back({"dwt_loss", gradcheck(through_cov([](const Tensor& c) { return dwt_loss(c); }), features)});
    const Tensor other = detail::uniform_tensor(Shape{6, 5, 5}, rng, -1.0, 1.0);
    const StyleMask mask = kmeans_split(pair_variance(CovMatrix::from_tensor(covariance(features).value),
                                                      CovMatrix::from_tensor(covariance(other).value)));
    out.push_back({"isw_loss", gradcheck(through_cov([&mask](const Tensor& c) { return isw_loss(c, mask); }), features)});

    TrainConfig cfg;
    cfg.input_size = 16;
    cfg.widths = {4, 4, 4};
    cfg.slic_k = 8;
    cfg.slic_m = 20.0;
    const SegNetwork net = SegNetwork::build(cfg.widths, derive_seed(seed, 2));
    const std::vector<TrainItem> batch{{sample.image, sample.mask, derive_seed(seed, 3)}};
    IswState isw(SegNetwork::kBlocks, 0);
    const LossBreakdown warm = total_loss(batch, net, cfg, isw, 0);
    for (std::size_t b = 0; b < SegNetwork::kBlocks; ++b) isw.update(b, warm.variance[b], 0);
    const NetObjective objective = [&](const SegNetwork& n) {
        LossBreakdown l = total_loss(batch, n, cfg, isw, 0);
        return std::make_pair(l.total, std::move(l.grads));
    };
    out.push_back({"L_total (network)", gradcheck(over_parameters(net, objective), flatten_parameters(net))});
    return out;
}

}  // namespace supw
