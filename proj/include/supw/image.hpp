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
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "supw/ops.hpp"
#include "supw/tensor.hpp"

namespace supw {

/// Float RGB image, interleaved H×W×3, working range [0,1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {
        if (w == 0 || h == 0) throw Error("image dimensions must be >= 1");
    }

    std::size_t pixels() const noexcept { return width * height; }
    double& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary mask; 1 = lesion, 0 = background.
struct Mask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), bits(w * h, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto b : bits) n += b ? 1 : 0;
        return n;
    }

    friend bool operator==(const Mask&, const Mask&) = default;
};

/// CIELAB image, interleaved (L, a, b).
struct LabImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> lab;

    std::size_t pixels() const noexcept { return width * height; }
    const double* px(std::size_t i) const { return lab.data() + 3 * i; }
};

inline void clamp01(Image& img) {
    for (double& v : img.rgb) v = std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Color conversion: sRGB companding, D65 reference white.

namespace detail {

constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;

inline double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double c) {
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}
inline double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}
inline double lab_f_inv(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta ? t * t * t : 3.0 * delta * delta * (t - 4.0 / 29.0);
}

}  // namespace detail

inline std::array<double, 3> rgb_to_lab(double r, double g, double b) {
    using namespace detail;
    const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline std::array<double, 3> lab_to_rgb(double l, double a, double bb) {
    using namespace detail;
    const double fy = (l + 16.0) / 116.0;
    const double fx = fy + a / 500.0;
    const double fz = fy - bb / 200.0;
    const double x = kXn * lab_f_inv(fx), y = kYn * lab_f_inv(fy), z = kZn * lab_f_inv(fz);
    const double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    return {linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl)};
}

inline LabImage rgb_to_lab(const Image& img) {
    LabImage out{img.width, img.height, std::vector<double>(img.rgb.size())};
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        const auto lab = rgb_to_lab(img.rgb[3 * i], img.rgb[3 * i + 1], img.rgb[3 * i + 2]);
        std::copy(lab.begin(), lab.end(), out.lab.begin() + 3 * static_cast<std::ptrdiff_t>(i));
    }
    return out;
}

inline Image lab_to_rgb(const LabImage& lab) {
    Image out(lab.width, lab.height);
    for (std::size_t i = 0; i < lab.pixels(); ++i) {
        const auto rgb = lab_to_rgb(lab.lab[3 * i], lab.lab[3 * i + 1], lab.lab[3 * i + 2]);
        std::copy(rgb.begin(), rgb.end(), out.rgb.begin() + 3 * static_cast<std::ptrdiff_t>(i));
    }
    return out;
}

// HSV helpers, all components in [0,1].
inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    double h = 0.0;
    if (d > 0.0) {
        if (mx == r)
            h = std::fmod((g - b) / d, 6.0);
        else if (mx == g)
            h = (b - r) / d + 2.0;
        else
            h = (r - g) / d + 4.0;
        h /= 6.0;
        if (h < 0.0) h += 1.0;
    }
    return {h, mx > 0.0 ? d / mx : 0.0, mx};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

// ---------------------------------------------------------------------------
// Resizing and tensor conversion.

/// Bilinear resize with half-pixel centers (same convention as upsample_bilinear).
inline Image resize_bilinear(const Image& img, std::size_t out_w, std::size_t out_h) {
    if (out_w == img.width && out_h == img.height) return img;
    const auto ty = detail::bilinear_taps(img.height, out_h);
    const auto tx = detail::bilinear_taps(img.width, out_w);
    Image out(out_w, out_h);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const auto& a = ty[y];
                const auto& b = tx[x];
                const double top = img.at(a.i0, b.i0, c) + (img.at(a.i0, b.i1, c) - img.at(a.i0, b.i0, c)) * b.frac;
                const double bot = img.at(a.i1, b.i0, c) + (img.at(a.i1, b.i1, c) - img.at(a.i1, b.i0, c)) * b.frac;
                out.at(y, x, c) = top + (bot - top) * a.frac;
            }
    return out;
}

inline Mask resize_nearest(const Mask& m, std::size_t out_w, std::size_t out_h) {
    if (out_w == m.width && out_h == m.height) return m;
    Mask out(out_w, out_h);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto sy = std::min(m.height - 1, static_cast<std::size_t>((y + 0.5) * m.height / out_h));
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto sx = std::min(m.width - 1, static_cast<std::size_t>((x + 0.5) * m.width / out_w));
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

/// [1,3,H,W] planar tensor from an interleaved image.
inline Tensor to_tensor(const Image& img) {
    Tensor t(Shape{1, 3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < img.pixels(); ++i) t[c * img.pixels() + i] = img.rgb[3 * i + c];
    return t;
}

/// [H,W] tensor of 0/1 values.
inline Tensor to_tensor(const Mask& m) {
    Tensor t(Shape{m.height, m.width});
    for (std::size_t i = 0; i < m.bits.size(); ++i) t[i] = m.bits[i] ? 1.0 : 0.0;
    return t;
}

// ---------------------------------------------------------------------------
// Photometric transform.

/// Symmetric jitter ranges: each delta is drawn uniformly from [-range, range].
struct PhotometricParams {
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
    double hue = 0.05;
    double blur_sigma_max = 1.5;

    void validate() const {
        if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || blur_sigma_max < 0)
            throw Error("photometric ranges must be non-negative");
        if (hue > 0.5) throw Error("photometric hue range must be <= 0.5");
    }

    static PhotometricParams identity() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
};

/// One concrete draw of photometric parameters.
struct PhotometricSample {
    double brightness = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;
    double hue = 0.0;
    double blur_sigma = 0.0;
};

inline PhotometricSample sample_photometric(const PhotometricParams& p, std::uint64_t seed) {
    p.validate();
    std::mt19937_64 rng(seed);
    auto sym = [&rng](double r) { return r > 0.0 ? std::uniform_real_distribution<double>(-r, r)(rng) : 0.0; };
    PhotometricSample s;
    s.brightness = sym(p.brightness);
    s.contrast = sym(p.contrast);
    s.saturation = sym(p.saturation);
    s.hue = sym(p.hue);
    s.blur_sigma = p.blur_sigma_max > 0.0 ? std::uniform_real_distribution<double>(0.0, p.blur_sigma_max)(rng) : 0.0;
    return s;
}

inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;
    const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
    Image tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(y, std::clamp(x + i, 0, w - 1), c);
                tmp.at(y, x, c) = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

/// Applies brightness, contrast, saturation, hue and blur in that order, clamping after each step.
/// Geometry is never touched.
inline Image apply_photometric(const Image& img, const PhotometricSample& s) {
    Image out = img;
    if (s.brightness != 0.0) {
        for (double& v : out.rgb) v += s.brightness;
        clamp01(out);
    }
    if (s.contrast != 0.0) {
        double mean = 0.0;
        for (std::size_t i = 0; i < out.pixels(); ++i)
            mean += 0.299 * out.rgb[3 * i] + 0.587 * out.rgb[3 * i + 1] + 0.114 * out.rgb[3 * i + 2];
        mean /= static_cast<double>(out.pixels());
        for (double& v : out.rgb) v = mean + (v - mean) * (1.0 + s.contrast);
        clamp01(out);
    }
    if (s.saturation != 0.0) {
        for (std::size_t i = 0; i < out.pixels(); ++i) {
            double* p = out.rgb.data() + 3 * i;
            const double gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            for (int c = 0; c < 3; ++c) p[c] = gray + (p[c] - gray) * (1.0 + s.saturation);
        }
        clamp01(out);
    }
    if (s.hue != 0.0) {
        for (std::size_t i = 0; i < out.pixels(); ++i) {
            double* p = out.rgb.data() + 3 * i;
            auto hsv = rgb_to_hsv(p[0], p[1], p[2]);
            const auto rgb = hsv_to_rgb(hsv[0] + s.hue, hsv[1], hsv[2]);
            std::copy(rgb.begin(), rgb.end(), p);
        }
        clamp01(out);
    }
    if (s.blur_sigma > 0.0) out = gaussian_blur(out, s.blur_sigma);
    clamp01(out);
    return out;
}

inline Image photometric_transform(const Image& img, const PhotometricParams& params, std::uint64_t seed) {
    return apply_photometric(img, sample_photometric(params, seed));
}

// ---------------------------------------------------------------------------
// Geometric augmentation: one affine transform shared by image and mask.

struct GeometricConfig {
    double p_flip = 0.05;
    double p_rotate = 0.20;
    double p_shift = 0.05;
    double p_shear = 0.05;
    double p_zoom = 0.05;
    double max_rotate_deg = 20.0;
    double max_shift_frac = 0.1;
    double max_shear = 0.1;
    double max_zoom = 0.1;

    static GeometricConfig none() { return {0, 0, 0, 0, 0, 20.0, 0.1, 0.1, 0.1}; }
};

struct AugmentedPair {
    Image image;
    Mask mask;
};

inline Image hflip(const Image& img) {
    Image out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

inline Mask hflip(const Mask& m) {
    Mask out = m;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}

/// 2×3 affine map from output pixel coordinates to source coordinates.
struct Affine {
    double a = 1, b = 0, tx = 0;
    double c = 0, d = 1, ty = 0;
};

inline AugmentedPair warp_affine(const Image& img, const Mask& mask, const Affine& inv) {
    AugmentedPair out{Image(img.width, img.height), Mask(mask.width, mask.height)};
    const long w = static_cast<long>(img.width), h = static_cast<long>(img.height);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const double sx = inv.a * x + inv.b * y + inv.tx;
            const double sy = inv.c * x + inv.d * y + inv.ty;
            const long nx = std::lround(sx), ny = std::lround(sy);
            const bool inside = nx >= 0 && ny >= 0 && nx < w && ny < h;
            out.mask.at(y, x) = inside ? mask.at(ny, nx) : 0;
            // Image sampled at the same nearest source pixel so markers move together with the mask.
            const long cx = std::clamp(nx, 0L, w - 1), cy = std::clamp(ny, 0L, h - 1);
            for (std::size_t ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = inside ? img.at(cy, cx, ch) : 0.0;
        }
    return out;
}

inline AugmentedPair geometric_augment(const Image& img, const Mask& mask, const GeometricConfig& cfg,
                                       std::uint64_t seed) {
    if (img.width != mask.width || img.height != mask.height) throw Error("geometric_augment: image/mask size mismatch");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sym = [&](double r) { return std::uniform_real_distribution<double>(-r, r)(rng); };

    // Every draw happens regardless of whether the op fires so the stream layout is fixed.
    const bool flip = unit(rng) < cfg.p_flip;
    const bool rot = unit(rng) < cfg.p_rotate;
    const double angle = sym(cfg.max_rotate_deg) * std::numbers::pi / 180.0;
    const bool shift = unit(rng) < cfg.p_shift;
    const double dx = sym(cfg.max_shift_frac) * static_cast<double>(img.width);
    const double dy = sym(cfg.max_shift_frac) * static_cast<double>(img.height);
    const bool shear = unit(rng) < cfg.p_shear;
    const double sh = sym(cfg.max_shear);
    const bool zoom = unit(rng) < cfg.p_zoom;
    const double z = 1.0 + sym(cfg.max_zoom);

    AugmentedPair out{img, mask};
    if (flip) {
        out.image = hflip(out.image);
        out.mask = hflip(out.mask);
    }
    if (!(rot || shift || shear || zoom)) return out;

    // Forward map about the image center: p' = Z * Sh * R * (p - c) + c + t. Build its inverse.
    const double cx = (static_cast<double>(img.width) - 1.0) / 2.0, cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    const double th = rot ? angle : 0.0;
    const double s = shear ? sh : 0.0;
    const double zz = zoom ? z : 1.0;
    const double tx = shift ? dx : 0.0, ty = shift ? dy : 0.0;
    // M = zz * [[1, s],[0, 1]] * [[cos, -sin],[sin, cos]]
    const double cs = std::cos(th), sn = std::sin(th);
    const double m00 = zz * (cs + s * sn), m01 = zz * (-sn + s * cs);
    const double m10 = zz * sn, m11 = zz * cs;
    const double det = m00 * m11 - m01 * m10;
    Affine inv;
    inv.a = m11 / det;
    inv.b = -m01 / det;
    inv.c = -m10 / det;
    inv.d = m00 / det;
    // src = Minv * (p - c - t) + c
    inv.tx = cx - (inv.a * (cx + tx) + inv.b * (cy + ty));
    inv.ty = cy - (inv.c * (cx + tx) + inv.d * (cy + ty));
    return warp_affine(out.image, out.mask, inv);
}

}  // namespace supw
