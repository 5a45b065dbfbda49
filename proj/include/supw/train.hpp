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
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <exception>
#include <iomanip>
#include <numeric>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "supw/image.hpp"
#include "supw/image_io.hpp"
#include "supw/metrics.hpp"
#include "supw/segnet.hpp"
#include "supw/slic_loss.hpp"
#include "supw/synthdata.hpp"
#include "supw/whitening.hpp"

namespace supw {

/// Every training hyperparameter. Serialized to/from JSON by field name.
struct TrainConfig {
    double lr0 = 1e-2;
    double poly_power = 0.9;
    double momentum = 0.9;
    std::size_t epochs = 30;
    std::size_t batch_size = 2;
    double slic_weight = 0.75;  // w: lambda2 = w, lambda1 = 1 - w under the convex reading
    WeightReading weight_reading = WeightReading::convex;
    std::size_t slic_k = 500;
    double slic_m = 50.0;
    double tau = 0.9;
    double isw_weight = 0.6;
    std::size_t warmup_epochs = 5;
    IswNormalization isw_normalization = IswNormalization::masked_mean;
    bool recluster_each_epoch = false;
    bool use_slic_loss = true;
    bool use_isw = true;
    bool pair_task_loss = true;  // with use_isw, the task loss also supervises the transformed image
    bool use_dwt = false;  // ablation: plain whitening penalty on every hooked layer
    double dwt_weight = 0.1;
    std::size_t input_size = 256;
    std::array<std::size_t, 3> widths{8, 16, 32};
    std::uint64_t seed = 0;
    PhotometricParams photometric{};
    GeometricConfig geometric{};

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0)) throw Error(std::string("config: ") + what + " must be positive");
        };
        if (lr0 < 0.0) throw Error("config: lr0 must be non-negative");
        positive(poly_power, "poly_power");
        if (epochs < 1) throw Error("config: epochs must be >= 1");
        if (batch_size < 1) throw Error("config: batch_size must be >= 1");
        if (slic_weight < 0.0 || slic_weight > 1.0) throw Error("config: slic_weight must lie in [0,1]");
        if (slic_k < 1) throw Error("config: slic_k must be >= 1");
        positive(slic_m, "slic_m");
        if (!(tau > 0.5 && tau <= 1.0)) throw Error("config: tau must lie in (0.5, 1]");
        if (isw_weight < 0.0) throw Error("config: isw_weight must be non-negative");
        if (momentum < 0.0 || momentum >= 1.0) throw Error("config: momentum must lie in [0,1)");
        if (input_size == 0 || input_size % 8 != 0) throw Error("config: input_size must be a positive multiple of 8");
        photometric.validate();
    }

    SlicLossConfig slic_loss() const { return SlicLossConfig::from_weight(slic_weight, weight_reading, tau); }
    SlicParams slic_params() const { return SlicParams{slic_k, slic_m, 10, 0.25}; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"lr0", c.lr0},
        {"poly_power", c.poly_power},
        {"momentum", c.momentum},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"slic_weight", c.slic_weight},
        {"weight_reading", c.weight_reading == WeightReading::convex ? "convex" : "lambda2_only"},
        {"slic_k", c.slic_k},
        {"slic_m", c.slic_m},
        {"tau", c.tau},
        {"isw_weight", c.isw_weight},
        {"warmup_epochs", c.warmup_epochs},
        {"isw_normalization", c.isw_normalization == IswNormalization::masked_mean ? "masked_mean" : "full_mean"},
        {"recluster_each_epoch", c.recluster_each_epoch},
        {"use_slic_loss", c.use_slic_loss},
        {"use_isw", c.use_isw},
        {"pair_task_loss", c.pair_task_loss},
        {"use_dwt", c.use_dwt},
        {"dwt_weight", c.dwt_weight},
        {"input_size", c.input_size},
        {"widths", c.widths},
        {"seed", c.seed},
        {"photometric",
         {{"brightness", c.photometric.brightness},
          {"contrast", c.photometric.contrast},
          {"saturation", c.photometric.saturation},
          {"hue", c.photometric.hue},
          {"blur_sigma_max", c.photometric.blur_sigma_max}}},
        {"geometric",
         {{"p_flip", c.geometric.p_flip},
          {"p_rotate", c.geometric.p_rotate},
          {"p_shift", c.geometric.p_shift},
          {"p_shear", c.geometric.p_shear},
          {"p_zoom", c.geometric.p_zoom},
          {"max_rotate_deg", c.geometric.max_rotate_deg},
          {"max_shift_frac", c.geometric.max_shift_frac},
          {"max_shear", c.geometric.max_shear},
          {"max_zoom", c.geometric.max_zoom}}},
    };
}

/// Reads any subset of fields; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const std::vector<std::string> known = {
        "lr0", "poly_power", "momentum", "epochs", "batch_size", "slic_weight", "weight_reading", "slic_k", "slic_m", "tau",
        "isw_weight", "warmup_epochs", "isw_normalization", "recluster_each_epoch", "use_slic_loss", "use_isw", "pair_task_loss", "use_dwt",
        "dwt_weight", "input_size", "widths", "seed", "photometric", "geometric"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) throw Error("config: unknown field '" + key + "'");
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("lr0", c.lr0);
    get("poly_power", c.poly_power);
    get("momentum", c.momentum);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("slic_weight", c.slic_weight);
    if (j.contains("weight_reading")) {
        const std::string r = j.at("weight_reading");
        if (r == "convex") c.weight_reading = WeightReading::convex;
        else if (r == "lambda2_only") c.weight_reading = WeightReading::lambda2_only;
        else throw Error("config: weight_reading must be convex or lambda2_only");
    }
    get("slic_k", c.slic_k);
    get("slic_m", c.slic_m);
    get("tau", c.tau);
    get("isw_weight", c.isw_weight);
    get("warmup_epochs", c.warmup_epochs);
    if (j.contains("isw_normalization")) {
        const std::string r = j.at("isw_normalization");
        if (r == "masked_mean") c.isw_normalization = IswNormalization::masked_mean;
        else if (r == "full_mean") c.isw_normalization = IswNormalization::full_mean;
        else throw Error("config: isw_normalization must be masked_mean or full_mean");
    }
    get("recluster_each_epoch", c.recluster_each_epoch);
    get("use_slic_loss", c.use_slic_loss);
    get("use_isw", c.use_isw);
    get("pair_task_loss", c.pair_task_loss);
    get("use_dwt", c.use_dwt);
    get("dwt_weight", c.dwt_weight);
    get("input_size", c.input_size);
    get("widths", c.widths);
    get("seed", c.seed);
    if (j.contains("photometric")) {
        const auto& p = j.at("photometric");
        if (p.contains("brightness")) p.at("brightness").get_to(c.photometric.brightness);
        if (p.contains("contrast")) p.at("contrast").get_to(c.photometric.contrast);
        if (p.contains("saturation")) p.at("saturation").get_to(c.photometric.saturation);
        if (p.contains("hue")) p.at("hue").get_to(c.photometric.hue);
        if (p.contains("blur_sigma_max")) p.at("blur_sigma_max").get_to(c.photometric.blur_sigma_max);
    }
    if (j.contains("geometric")) {
        const auto& g = j.at("geometric");
        auto gg = [&g](const char* key, double& field) {
            if (g.contains(key)) g.at(key).get_to(field);
        };
        gg("p_flip", c.geometric.p_flip);
        gg("p_rotate", c.geometric.p_rotate);
        gg("p_shift", c.geometric.p_shift);
        gg("p_shear", c.geometric.p_shear);
        gg("p_zoom", c.geometric.p_zoom);
        gg("max_rotate_deg", c.geometric.max_rotate_deg);
        gg("max_shift_frac", c.geometric.max_shift_frac);
        gg("max_shear", c.geometric.max_shear);
        gg("max_zoom", c.geometric.max_zoom);
    }
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    try {
        TrainConfig c = nlohmann::json::parse(in).get<TrainConfig>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

inline std::uint64_t config_hash(const TrainConfig& c) {
    const std::string s = nlohmann::json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------

/// lr0 * (1 - step / total)^power.
inline double poly_lr(double lr0, std::size_t step, std::size_t total_steps, double power = 0.9) {
    if (step > total_steps)
        throw Error("poly_lr: step " + std::to_string(step) + " beyond schedule length " + std::to_string(total_steps));
    if (total_steps == 0) return lr0;
    return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

/// L_task + sum_i lambda * L_ISW^i + L_SLIC.
inline double combine_total(double task, const std::vector<double>& isw_terms, double slic, double isw_weight) {
    double isw = 0.0;
    for (double t : isw_terms) isw += isw_weight * t;
    return task + isw + slic;
}

struct Example {
    std::string name;
    Image image;
    Mask mask;
};

/// One training batch member after augmentation.
struct TrainItem {
    Image image;
    Mask mask;
    std::uint64_t photometric_seed = 0;
};

struct LossBreakdown {
    double total = 0.0;
    double task = 0.0;
    double slic = 0.0;
    std::vector<double> isw;  // unweighted per-layer terms
    double dwt = 0.0;
    std::vector<Tensor> grads;            // one per network parameter
    std::vector<VarianceMap> variance;    // batch-averaged pair variance per hooked layer
    double isw_sum() const { return std::accumulate(isw.begin(), isw.end(), 0.0); }
};

/// Batch-mean objective and its parameter gradient. ISW terms are averaged over the original and
/// transformed covariances of each pair and are zero while `isw` has no active mask for the epoch.
/// With use_isw and pair_task_loss, the task term is the mean BCE over the original and the transformed image.
inline LossBreakdown total_loss(const std::vector<TrainItem>& batch, const SegNetwork& net, const TrainConfig& cfg,
                                const IswState& isw, std::size_t epoch, GridCache* cache = nullptr) {
    if (batch.empty()) throw Error("total_loss: empty batch");
    const std::size_t layers = SegNetwork::kBlocks;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const bool need_pair = cfg.use_isw;
    const SlicLossConfig slic_cfg = cfg.slic_loss();
    const SlicParams slic_params = cfg.slic_params();

    LossBreakdown out;
    out.isw.assign(layers, 0.0);
    out.grads.reserve(net.parameters().size());
    for (const auto& p : net.parameters()) out.grads.emplace_back(p.value.shape());
    std::vector<std::vector<std::pair<CovMatrix, CovMatrix>>> cov_pairs(layers);

    auto accumulate_grads = [&out, inv_b](std::vector<Tensor> g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] *= inv_b;
            out.grads[i] += g[i];
        }
    };

    for (const TrainItem& item : batch) {
        const Tensor target = to_tensor(item.mask);
        ForwardResult orig = forward(net, to_tensor(item.image), need_pair || cfg.use_dwt);

        // With a paired task loss, x and Tx each carry half of the task term.
        const bool pair_task = need_pair && cfg.pair_task_loss;
        const double task_share = pair_task ? 0.5 : 1.0;
        GradPair task = bce(target, orig.probs);
        Tensor d_probs = task.backward(Tensor::scalar(task_share))[0];
        double item_total = task_share * task.value.item();
        out.task += inv_b * task_share * task.value.item();

        if (cfg.use_slic_loss) {
            const SuperpixelGrid grid = cache ? *cache->get(item.image, slic_params) : slic_run(item.image, slic_params);
            GradPair sl = l_slic(target, orig.probs, grid, slic_cfg);
            d_probs += sl.backward(Tensor::scalar(1.0))[0];
            out.slic += inv_b * sl.value.item();
            item_total += sl.value.item();
        }

        std::vector<Tensor> d_feat_orig(layers), d_feat_tx(layers);
        if (cfg.use_dwt) {
            for (std::size_t b = 0; b < layers; ++b) {
                GradPair cov = covariance(orig.features[b]);
                GradPair d = dwt_loss(cov.value);
                const double w = cfg.dwt_weight / static_cast<double>(layers);
                out.dwt += inv_b * w * d.value.item();
                item_total += w * d.value.item();
                d_feat_orig[b] = cov.backward(d.backward(Tensor::scalar(w))[0])[0];
            }
        }

        if (need_pair) {
            const Image tx = photometric_transform(item.image, cfg.photometric, item.photometric_seed);
            ForwardResult trans = forward(net, to_tensor(tx), true);
            Tensor d_probs_tx;
            if (pair_task) {
                GradPair task_tx = bce(target, trans.probs);
                d_probs_tx = task_tx.backward(Tensor::scalar(0.5))[0];
                item_total += 0.5 * task_tx.value.item();
                out.task += inv_b * 0.5 * task_tx.value.item();
            }
            for (std::size_t b = 0; b < layers; ++b) {
                GradPair co = covariance(orig.features[b]);
                GradPair ct = covariance(trans.features[b]);
                cov_pairs[b].emplace_back(CovMatrix::from_tensor(co.value), CovMatrix::from_tensor(ct.value));
                if (!isw.active(b, epoch)) continue;
                const StyleMask& mask = *isw.mask(b);
                GradPair lo = isw_loss(co.value, mask, cfg.isw_normalization);
                GradPair lt = isw_loss(ct.value, mask, cfg.isw_normalization);
                const double term = 0.5 * (lo.value.item() + lt.value.item());
                out.isw[b] += inv_b * term;
                item_total += cfg.isw_weight * term;
                const Tensor seed = Tensor::scalar(0.5 * cfg.isw_weight);
                Tensor go = co.backward(lo.backward(seed)[0])[0];
                Tensor gt = ct.backward(lt.backward(seed)[0])[0];
                if (d_feat_orig[b].size() == 0) d_feat_orig[b] = std::move(go);
                else d_feat_orig[b] += go;
                d_feat_tx[b] = std::move(gt);
            }
            if (pair_task || std::any_of(d_feat_tx.begin(), d_feat_tx.end(), [](const Tensor& t) { return t.size() > 0; }))
                accumulate_grads(backward(net, trans.tape, d_probs_tx, d_feat_tx));
        }
        if (!std::isfinite(item_total)) throw Error("total_loss: non-finite loss");
        accumulate_grads(backward(net, orig.tape, d_probs, d_feat_orig));
        out.total += inv_b * item_total;
    }
    if (need_pair)
        for (std::size_t b = 0; b < layers; ++b) out.variance.push_back(pair_variance(cov_pairs[b]));
    return out;
}

// ---------------------------------------------------------------------------

/// Momentum SGD: v = mu v + g; p -= lr v.
class Sgd {
public:
    explicit Sgd(double momentum = 0.9) : momentum_(momentum) {}

    void step(SegNetwork& net, const std::vector<Tensor>& grads, double lr) {
        auto& params = net.parameters();
        if (grads.size() != params.size()) throw Error("sgd: gradient count mismatch");
        if (velocity_.empty())
            for (const auto& p : params) velocity_.emplace_back(p.value.shape());
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& v = velocity_[i].values();
            auto& p = params[i].value.values();
            const auto& g = grads[i].values();
            for (std::size_t k = 0; k < p.size(); ++k) {
                v[k] = momentum_ * v[k] + g[k];
                p[k] -= lr * v[k];
            }
        }
    }

private:
    double momentum_;
    std::vector<Tensor> velocity_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double task = 0.0;
    double slic = 0.0;
    double isw = 0.0;  // sum over layers of the unweighted terms
    double val_iou = 0.0;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch}, {"lr", lr},   {"loss_total", total}, {"loss_task", task}, {"loss_slic", slic},
                {"loss_isw", isw}, {"val_iou", val_iou}, {"wall_seconds", wall_seconds}};
    }
};

struct RunLog {
    std::vector<EpochRecord> epochs;
    TrainConfig config;

    void write_jsonl(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write " + path.string());
        for (const auto& e : epochs) out << e.to_json().dump() << '\n';
        out << nlohmann::json{{"config", config}}.dump() << '\n';
    }
};

struct TrainResult {
    SegNetwork best;  // parameters as stored in the checkpoint (32-bit rounded)
    std::size_t best_epoch = 0;
    double best_val_iou = -1.0;
    RunLog log;
};

/// Loads images/ + masks/ of a dataset directory resized to `size`. With a manifest, only entries of
/// `split` are returned ("" selects every entry); without one, every image is used.
inline std::vector<Example> load_examples(const std::filesystem::path& dir, const std::string& split, std::size_t size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
    if (!fs::is_directory(dir / "images") || !fs::is_directory(dir / "masks"))
        throw Error("dataset " + dir.string() + " must contain images/ and masks/");
    std::vector<std::string> names;
    if (fs::exists(dir / "manifest.json")) {
        for (const auto& e : read_manifest(dir))
            if (split.empty() || e.split == split) names.push_back(e.file);
    } else {
        for (const auto& e : fs::directory_iterator(dir / "images"))
            if (e.is_regular_file()) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
    }
    std::vector<Example> out;
    for (const auto& n : names) {
        Image img = load_image(dir / "images" / n);
        Mask m = load_mask(dir / "masks" / n);
        if (img.width != m.width || img.height != m.height) throw Error("image/mask size mismatch for " + n);
        out.push_back({n, resize_bilinear(img, size, size), resize_nearest(m, size, size)});
    }
    return out;
}

inline Report evaluate(const SegNetwork& net, const std::vector<Example>& data) {
    std::vector<ImageMetrics> rows;
    for (const auto& ex : data) {
        const ForwardResult r = forward(net, to_tensor(ex.image), false);
        rows.push_back({ex.name, metrics_from(confusion(r.probs, ex.mask))});
    }
    return summarize(std::move(rows));
}

inline std::vector<NamedTensor> isw_tensors(const IswState& isw) {
    std::vector<NamedTensor> out;
    for (std::size_t b = 0; b < isw.layers(); ++b) {
        if (isw.observations(b) > 0) out.push_back({"isw." + std::to_string(b) + ".variance", isw.running_mean(b).v.to_tensor()});
        if (const auto& m = isw.mask(b)) {
            Tensor t(Shape{m->dim, m->dim});
            for (std::size_t i = 0; i < m->bits.size(); ++i) t[i] = m->bits[i];
            out.push_back({"isw." + std::to_string(b) + ".mask", std::move(t)});
        }
    }
    return out;
}

/// Trains on `train`, selects the checkpoint with the best mean IoU on `val`. When `out_dir` is
/// non-empty, writes best.ckpt and runlog.jsonl there.
inline TrainResult train_loop(const TrainConfig& cfg, const std::vector<Example>& train, const std::vector<Example>& val,
                              const std::filesystem::path& out_dir = {}, std::ostream* progress = nullptr) {
    cfg.validate();
    if (train.empty()) throw Error("train_loop: empty training set");
    if (val.empty()) throw Error("train_loop: empty validation set");
    for (const auto& ex : train)
        if (ex.image.width != cfg.input_size || ex.image.height != cfg.input_size)
            throw Error("train_loop: example " + ex.name + " is not " + std::to_string(cfg.input_size) + " px");

    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (!std::filesystem::is_directory(out_dir)) throw Error("cannot create output directory " + out_dir.string());
    }

    SegNetwork net = SegNetwork::build(cfg.widths, derive_seed(cfg.seed, 1));
    Sgd opt(cfg.momentum);
    IswState isw(SegNetwork::kBlocks, cfg.warmup_epochs, cfg.recluster_each_epoch);
    GridCache cache;
    std::mt19937_64 rng(derive_seed(cfg.seed, 2));

    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    std::size_t step = 0;
    TrainResult result;
    result.log.config = cfg;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<TrainItem> batch;
            for (std::size_t b = s * cfg.batch_size; b < std::min(train.size(), (s + 1) * cfg.batch_size); ++b) {
                const Example& ex = train[order[b]];
                const std::uint64_t item_seed = derive_seed(cfg.seed ^ 0xA5A5A5A5ull, step * 64 + (b - s * cfg.batch_size));
                AugmentedPair aug = geometric_augment(ex.image, ex.mask, cfg.geometric, item_seed);
                batch.push_back({std::move(aug.image), std::move(aug.mask), derive_seed(item_seed, 7)});
            }
            LossBreakdown loss = total_loss(batch, net, cfg, isw, epoch, &cache);
            if (!std::isfinite(loss.total))
                throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
            if (cfg.use_isw)
                for (std::size_t b = 0; b < SegNetwork::kBlocks; ++b) isw.update(b, loss.variance[b], epoch);
            const double lr = poly_lr(cfg.lr0, step, total_steps, cfg.poly_power);
            opt.step(net, loss.grads, lr);
            ++step;
            rec.lr = lr;
            const double w = 1.0 / static_cast<double>(steps_per_epoch);
            rec.total += w * loss.total;
            rec.task += w * loss.task;
            rec.slic += w * loss.slic;
            rec.isw += w * loss.isw_sum();
        }

        SegNetwork snapshot = net;
        snapshot.quantize_f32();
        rec.val_iou = evaluate(snapshot, val).iou.mean;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (rec.val_iou > result.best_val_iou) {
            result.best_val_iou = rec.val_iou;
            result.best_epoch = epoch;
            result.best = snapshot;
            if (!out_dir.empty()) {
                std::ostringstream rng_state;
                rng_state << rng;
                save_checkpoint(make_checkpoint(snapshot, epoch, config_hash(cfg), rng_state.str(), isw_tensors(isw)),
                                out_dir / "best.ckpt");
            }
        }
        if (progress)
            *progress << "epoch " << epoch << " lr " << rec.lr << " loss " << rec.total << " (task " << rec.task << ", slic "
                      << rec.slic << ", isw " << rec.isw << ") val_iou " << rec.val_iou << '\n';
        result.log.epochs.push_back(rec);
    }
    if (!out_dir.empty()) result.log.write_jsonl(out_dir / "runlog.jsonl");
    return result;
}

/// Convenience overload over a dataset directory with a train/val manifest.
inline TrainResult train_loop(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                              const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
    const auto train = load_examples(data_dir, "train", cfg.input_size);
    const auto val = load_examples(data_dir, "val", cfg.input_size);
    if (train.empty()) throw Error("no training examples in " + data_dir.string());
    if (val.empty()) throw Error("no validation examples in " + data_dir.string());
    return train_loop(cfg, train, val, out_dir, progress);
}

// ---------------------------------------------------------------------------
// Hyperparameter grid: one parameter varied per block, others fixed.

struct GridRow {
    std::string parameter;  // "lambda", "k" or "m"
    double value = 0.0;
    double fixed_lambda = 0.0;
    std::size_t fixed_k = 0;
    double fixed_m = 0.0;
    double source_iou = 0.0;
    double target_iou = 0.0;
    bool best = false;  // best source IoU within its parameter block
};

struct GridPlanEntry {
    std::string parameter;
    double value;
    double lambda;
    std::size_t k;
    double m;
};

/// 3 weight rows (k = 100, m = 40), 4 superpixel-count rows (weight 75%, m = 40) and 3 compactness
/// rows (weight 75%, k = 100).
inline std::vector<GridPlanEntry> grid_plan() {
    std::vector<GridPlanEntry> plan;
    for (double l : {0.50, 0.75, 1.00}) plan.push_back({"lambda", l, l, 100, 40.0});
    for (std::size_t k : {50u, 150u, 500u, 1000u}) plan.push_back({"k", static_cast<double>(k), 0.75, k, 40.0});
    for (double m : {20.0, 30.0, 50.0}) plan.push_back({"m", m, 0.75, 100, m});
    return plan;
}

/// Trains one model per plan row. Rows are independent, so up to `threads` of them run concurrently
/// without changing any result.
inline std::vector<GridRow> grid_search(const TrainConfig& base, const std::vector<Example>& source_train,
                                        const std::vector<Example>& source_val, const std::vector<Example>& source_test,
                                        const std::vector<Example>& target, std::ostream* progress = nullptr,
                                        std::size_t threads = 1) {
    const auto plan = grid_plan();
    std::vector<GridRow> rows(plan.size());
    std::vector<std::exception_ptr> errors(plan.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < plan.size(); i = next++) {
            const auto& p = plan[i];
            try {
                TrainConfig cfg = base;
                cfg.slic_weight = p.lambda;
                cfg.slic_k = p.k;
                cfg.slic_m = p.m;
                const TrainResult r = train_loop(cfg, source_train, source_val);
                rows[i] = {p.parameter, p.value, p.lambda, p.k, p.m, evaluate(r.best, source_test).iou.mean,
                           evaluate(r.best, target).iou.mean, false};
                if (progress) {
                    std::lock_guard lock(progress_mutex);
                    *progress << p.parameter << " = " << p.value << ": source " << rows[i].source_iou << ", target "
                              << rows[i].target_iou << '\n';
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::clamp<std::size_t>(threads, 1, plan.size()); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (const char* param : {"lambda", "k", "m"}) {
        GridRow* best = nullptr;
        for (auto& r : rows)
            if (r.parameter == param && (!best || r.source_iou > best->source_iou)) best = &r;
        if (best) best->best = true;
    }
    return rows;
}

inline nlohmann::json grid_to_json(const std::vector<GridRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
        j.push_back({{"parameter", r.parameter},
                     {"value", r.value},
                     {"fixed", r.parameter == "lambda" ? nlohmann::json{{"k", r.fixed_k}, {"m", r.fixed_m}}
                               : r.parameter == "k"   ? nlohmann::json{{"lambda", r.fixed_lambda}, {"m", r.fixed_m}}
                                                      : nlohmann::json{{"lambda", r.fixed_lambda}, {"k", r.fixed_k}}},
                     {"source_iou", r.source_iou},
                     {"target_iou", r.target_iou},
                     {"best", r.best}});
    return j;
}

inline std::string grid_to_table(const std::vector<GridRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "Parameter" << std::setw(10) << "Value" << std::setw(22) << "Fixed" << std::right
       << std::setw(12) << "Source IoU" << std::setw(12) << "Target IoU" << '\n';
    for (const auto& r : rows) {
        std::ostringstream value, fixed;
        if (r.parameter == "lambda") {
            value << static_cast<int>(std::lround(r.value * 100)) << "%";
            fixed << "k = " << r.fixed_k << ", m = " << r.fixed_m;
        } else if (r.parameter == "k") {
            value << r.value;
            fixed << "lambda = " << static_cast<int>(std::lround(r.fixed_lambda * 100)) << "%, m = " << r.fixed_m;
        } else {
            value << r.value;
            fixed << "lambda = " << static_cast<int>(std::lround(r.fixed_lambda * 100)) << "%, k = " << r.fixed_k;
        }
        if (r.best) value << '*';
        os << std::left << std::setw(12) << r.parameter << std::setw(10) << value.str() << std::setw(22) << fixed.str()
           << std::right << std::fixed << std::setprecision(4) << std::setw(12) << r.source_iou << std::setw(12)
           << r.target_iou << '\n';
    }
    return os.str();
}

}  // namespace supw
