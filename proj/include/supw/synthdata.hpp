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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "supw/image.hpp"
#include "supw/image_io.hpp"

namespace supw {

struct Range {
    double lo = 0, hi = 0;
};

/// Appearance model of one imaging domain. Geometry distributions are shared by construction.
struct DomainSpec {
    std::string name;
    Range background_hue;
    Range lesion_hue;
    Range background_sat{0.45, 0.65};
    Range lesion_sat{0.35, 0.55};
    Range background_val{0.45, 0.60};
    Range lesion_val{0.70, 0.85};
    double texture_amplitude = 0.06;
    double vignette = 0.25;
    double edge_contrast = 0.0;  // darkening of a thin ring around each lesion
    std::size_t min_lesions = 1;
    std::size_t max_lesions = 3;
    Range eccentricity{0.0, 0.8};

    void validate() const {
        for (const Range& r : {background_hue, lesion_hue})
            if (r.lo < 0.0 || r.hi >= 1.0 || r.lo > r.hi) throw Error("domain " + name + ": hue range outside [0,1)");
        if (min_lesions < 1 || max_lesions < min_lesions) throw Error("domain " + name + ": bad lesion count range");
    }

    /// Warm reds/pinks.
    static DomainSpec source() {
        DomainSpec d;
        d.name = "source";
        d.background_hue = {0.00, 0.04};
        d.lesion_hue = {0.90, 0.96};
        return d;
    }

    /// Green-cyan palette with sharper lesion borders.
    static DomainSpec target() {
        DomainSpec d;
        d.name = "target";
        d.background_hue = {0.42, 0.48};
        d.lesion_hue = {0.50, 0.56};
        d.edge_contrast = 0.25;
        d.texture_amplitude = 0.08;
        return d;
    }

    static DomainSpec by_name(const std::string& name) {
        if (name == "source") return source();
        if (name == "target") return target();
        throw Error("unknown domain '" + name + "' (expected source or target)");
    }
};

struct Ellipse {
    double cx, cy;  // pixel coordinates
    double a, b;    // semi-axes, a >= b
    double angle;   // radians

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
        return u * u + v * v <= 1.0;
    }
    double area() const { return std::numbers::pi * a * b; }
    /// Ramanujan's approximation.
    double perimeter() const {
        const double h = (a - b) * (a - b) / ((a + b) * (a + b));
        return std::numbers::pi * (a + b) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
    }
};

struct Sample {
    Image image;
    Mask mask;
    std::vector<Ellipse> lesions;
    std::vector<double> lesion_hues;
    double background_hue = 0.0;
};

/// SplitMix64 step, used to derive independent per-sample seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline Sample gen_sample(const DomainSpec& spec, std::size_t size, std::uint64_t seed) {
    spec.validate();
    if (size == 0 || size % 8 != 0) throw Error("gen_sample: size must be a positive multiple of 8");
    std::mt19937_64 rng(seed);
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto in = [&uni](const Range& r) { return r.lo == r.hi ? r.lo : uni(r.lo, r.hi); };
    const double n = static_cast<double>(size);

    Sample s;
    s.image = Image(size, size);
    s.mask = Mask(size, size);
    s.background_hue = in(spec.background_hue);
    const double bg_sat = in(spec.background_sat), bg_val = in(spec.background_val);

    const std::size_t count = std::uniform_int_distribution<std::size_t>(spec.min_lesions, spec.max_lesions)(rng);
    std::vector<double> lesion_sat, lesion_val;
    for (std::size_t i = 0; i < count; ++i) {
        Ellipse e;
        e.a = uni(0.08, 0.20) * n;
        const double ecc = in(spec.eccentricity);
        e.b = e.a * std::sqrt(1.0 - ecc * ecc);
        e.cx = uni(0.2, 0.8) * n;
        e.cy = uni(0.2, 0.8) * n;
        e.angle = uni(0.0, std::numbers::pi);
        s.lesions.push_back(e);
        s.lesion_hues.push_back(in(spec.lesion_hue));
        lesion_sat.push_back(in(spec.lesion_sat));
        lesion_val.push_back(in(spec.lesion_val));
    }

    // Low-frequency texture: a few random plane waves.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i)
        waves.push_back({uni(-6.0, 6.0) / n, uni(-6.0, 6.0) / n, uni(0.0, 2.0 * std::numbers::pi), uni(0.5, 1.0)});
    std::normal_distribution<double> grain(0.0, 0.25);

    const double ring = std::max(1.0, 0.02 * n);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x), py = static_cast<double>(y);
            double tex = 0.0;
            for (const auto& w : waves) tex += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * px + w.fy * py) + w.phase);
            tex = spec.texture_amplitude * (0.5 * tex + grain(rng));
            const double rx = (px - n / 2.0) / (n / 2.0), ry = (py - n / 2.0) / (n / 2.0);
            const double vig = 1.0 - spec.vignette * 0.5 * (rx * rx + ry * ry);

            double h = s.background_hue, sat = bg_sat, val = bg_val;
            int inside = -1;
            for (std::size_t i = 0; i < count; ++i)
                if (s.lesions[i].contains(px, py)) inside = static_cast<int>(i);
            if (inside >= 0) {
                h = s.lesion_hues[static_cast<std::size_t>(inside)];
                sat = lesion_sat[static_cast<std::size_t>(inside)];
                val = lesion_val[static_cast<std::size_t>(inside)];
                s.mask.at(y, x) = 1;
            } else if (spec.edge_contrast > 0.0) {
                // Darken background pixels within `ring` px of a lesion boundary.
                for (const auto& e : s.lesions) {
                    const Ellipse grown{e.cx, e.cy, e.a + ring, e.b + ring, e.angle};
                    if (grown.contains(px, py)) {
                        val -= spec.edge_contrast;
                        break;
                    }
                }
            }
            const auto rgb = hsv_to_rgb(h, std::clamp(sat, 0.0, 1.0), std::clamp((val + tex) * vig, 0.0, 1.0));
            for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = rgb[c];
        }
    return s;
}

struct ManifestEntry {
    std::string file;
    std::string split;
    std::string domain;
    std::uint64_t seed = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& entries) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) j.push_back({{"file", e.file}, {"split", e.split}, {"domain", e.domain}, {"seed", e.seed}});
    return j;
}

inline std::vector<ManifestEntry> manifest_from_json(const nlohmann::json& j) {
    std::vector<ManifestEntry> out;
    for (const auto& e : j) out.push_back({e.at("file"), e.at("split"), e.at("domain"), e.at("seed")});
    return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Split sizes: floor(80%) train, floor(10%) val, remainder test.
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
    const std::size_t train = n * 8 / 10, val = n / 10;
    return {train, val, n - train - val};
}

/// Writes images/NNNN.png, masks/NNNN.png and manifest.json with a seeded 80/10/10 split.
inline std::vector<ManifestEntry> gen_dataset(const DomainSpec& spec, std::size_t n, const std::filesystem::path& out_dir,
                                              std::uint64_t seed, std::size_t size = 128) {
    namespace fs = std::filesystem;
    if (n < 10) throw Error("gen_dataset: need at least 10 samples");
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec || !fs::is_directory(out_dir / "images")) throw Error("cannot create dataset directory " + out_dir.string());

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(seed, 0xFFFF'FFFFull));
    std::shuffle(order.begin(), order.end(), rng);
    const auto sizes = split_sizes(n);
    std::vector<std::string> split(n);
    for (std::size_t r = 0; r < n; ++r) split[order[r]] = r < sizes[0] ? "train" : (r < sizes[0] + sizes[1] ? "val" : "test");

    std::vector<ManifestEntry> manifest;
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04zu.png", i);
        const std::uint64_t s = derive_seed(seed, i);
        const Sample sample = gen_sample(spec, size, s);
        save_image(sample.image, out_dir / "images" / name);
        save_mask(sample.mask, out_dir / "masks" / name);
        manifest.push_back({name, split[i], spec.name, s});
    }
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw Error("cannot write " + (out_dir / "manifest.json").string());
    out << manifest_to_json(manifest).dump(2) << '\n';
    return manifest;
}

/// Circular mean hue of an image (HSV hue in [0,1)).
inline double mean_hue(const Image& img) {
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        const auto hsv = rgb_to_hsv(img.rgb[3 * i], img.rgb[3 * i + 1], img.rgb[3 * i + 2]);
        sx += std::cos(2.0 * std::numbers::pi * hsv[0]);
        sy += std::sin(2.0 * std::numbers::pi * hsv[0]);
    }
    double h = std::atan2(sy, sx) / (2.0 * std::numbers::pi);
    return h < 0.0 ? h + 1.0 : h;
}

inline double hue_distance(double a, double b) {
    const double d = std::abs(a - b);
    return std::min(d, 1.0 - d);
}

}  // namespace supw
