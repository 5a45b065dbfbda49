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
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supw/image.hpp"
#include "supw/image_io.hpp"

namespace supw {

/// Pixel confusion counts for a binary prediction.
struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    Confusion& operator+=(const Confusion& o) noexcept {
        tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
        return *this;
    }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct SegMetrics {
    double iou = 0, precision = 0, recall = 0, accuracy = 0;
};

/// Foreground where p >= threshold. `probs` is [H,W].
inline Mask binarize(const Tensor& probs, double threshold = 0.5) {
    if (probs.rank() != 2) throw Error("binarize: expected [H,W] probabilities, got " + shape_str(probs.shape()));
    Mask m(probs.dim(1), probs.dim(0));
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = probs[i] >= threshold;
    return m;
}

/// Binarizes `probs` at `threshold` (p >= threshold is foreground) and counts against `gt`.
inline Confusion confusion(const Tensor& probs, const Mask& gt, double threshold = 0.5) {
    if (probs.size() != gt.bits.size() || (probs.rank() == 2 && (probs.dim(0) != gt.height || probs.dim(1) != gt.width)))
        throw Error("confusion: prediction " + shape_str(probs.shape()) + " vs mask " + std::to_string(gt.height) + "x" +
                    std::to_string(gt.width));
    Confusion c;
    for (std::size_t i = 0; i < gt.bits.size(); ++i) {
        const bool p = probs[i] >= threshold;
        const bool g = gt.bits[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline Confusion confusion(const Mask& pred, const Mask& gt) {
    if (pred.width != gt.width || pred.height != gt.height) throw Error("confusion: mask sizes differ");
    return confusion(to_tensor(pred), gt, 0.5);
}

/// IoU, precision, recall and accuracy. An empty denominator scores 1 when prediction and ground
/// truth are both empty and 0 otherwise.
inline SegMetrics metrics_from(const Confusion& c) {
    const bool both_empty = c.tp + c.fp + c.fn == 0;
    auto ratio = [both_empty](std::size_t num, std::size_t den) {
        if (den == 0) return both_empty ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    SegMetrics m;
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.accuracy = c.total() == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return m;
}

struct MeanStd {
    double mean = 0, stddev = 0;
};

/// Population (divide-by-N) mean and standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
    if (v.empty()) return {};
    double s = 0.0;
    for (double x : v) s += x;
    const double mean = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

struct ImageMetrics {
    std::string name;
    SegMetrics metrics;
};

struct Report {
    std::vector<ImageMetrics> images;
    MeanStd iou, precision, recall, accuracy;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["stddev"] = "population";
        j["empty_vs_empty"] = 1.0;
        auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}}; };
        j["summary"] = {{"iou", ms(iou)}, {"precision", ms(precision)}, {"recall", ms(recall)}, {"accuracy", ms(accuracy)}};
        j["count"] = images.size();
        nlohmann::json per = nlohmann::json::array();
        for (const auto& im : images)
            per.push_back({{"file", im.name},
                           {"iou", im.metrics.iou},
                           {"precision", im.metrics.precision},
                           {"recall", im.metrics.recall},
                           {"accuracy", im.metrics.accuracy}});
        j["images"] = per;
        return j;
    }

    /// Aligned text in the column order IoU, Prec., Rec., Acc.
    std::string to_table(const std::string& label = "dataset") const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(1);
        os << std::left << std::setw(16) << "Data" << std::right << std::setw(14) << "IoU" << std::setw(14) << "Prec."
           << std::setw(14) << "Rec." << std::setw(14) << "Acc." << '\n';
        auto cell = [&os](const MeanStd& m) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(1) << 100.0 * m.mean << " ± " << 100.0 * m.stddev;
            os << std::setw(15) << c.str();
        };
        os << std::left << std::setw(16) << label << std::right;
        cell(iou);
        cell(precision);
        cell(recall);
        cell(accuracy);
        os << '\n';
        return os.str();
    }
};

inline Report summarize(std::vector<ImageMetrics> images) {
    Report r;
    r.images = std::move(images);
    std::vector<double> iou, pr, rc, ac;
    for (const auto& im : r.images) {
        iou.push_back(im.metrics.iou);
        pr.push_back(im.metrics.precision);
        rc.push_back(im.metrics.recall);
        ac.push_back(im.metrics.accuracy);
    }
    r.iou = mean_std(iou);
    r.precision = mean_std(pr);
    r.recall = mean_std(rc);
    r.accuracy = mean_std(ac);
    return r;
}

/// Evaluates every mask in pred_dir against the same-named mask in gt_dir (sorted by filename).
inline Report dataset_report(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(pred_dir)) throw Error("not a directory: " + pred_dir.string());
    if (!fs::is_directory(gt_dir)) throw Error("not a directory: " + gt_dir.string());
    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        const std::string ext = detail::extension(e.path());
        if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) preds.push_back(e.path());
    }
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw Error("no pairs: " + pred_dir.string() + " holds no masks");
    std::vector<ImageMetrics> rows;
    for (const auto& p : preds) {
        const fs::path g = gt_dir / p.filename();
        if (!fs::exists(g)) throw Error("missing ground truth for " + p.filename().string() + " in " + gt_dir.string());
        rows.push_back({p.filename().string(), metrics_from(confusion(load_mask(p), load_mask(g)))});
    }
    return summarize(std::move(rows));
}

}  // namespace supw
