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

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "supw/image.hpp"

namespace supw {

/// Decoded 8-bit raster, channels 1 (gray) or 3 (RGB), interleaved.
struct Raster8 {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> data;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw Error("cannot open " + path.string());
    return f;
}

inline void png_silent_warning(png_structp, png_const_charp) {}

inline std::string extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

// Reads a PNG into 8-bit gray/RGB, or into 16-bit gray when allow16 is set (out16 receives samples).
inline Raster8 read_png(const std::filesystem::path& path, bool allow16, std::vector<std::uint16_t>* out16) {
    FilePtr fp = open_file(path, "rb");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error(path.string() + ": not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!png) throw Error("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng: out of memory");
    }
    Raster8 out;
    std::vector<png_bytep> rows;
    std::vector<png_byte> buffer;
    std::string failure;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path.string() + ": truncated or corrupt PNG");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (depth == 16 && !(allow16 && color == PNG_COLOR_TYPE_GRAY)) failure = "unsupported bit depth 16";
    if (allow16 && depth != 16) failure = "expected 16-bit grayscale label PNG";
    if (!failure.empty()) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(path.string() + ": " + failure);
    }

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.width = w;
    out.height = h;
    out.channels = channels;
    if (depth == 16) {
        out16->resize(static_cast<std::size_t>(w) * h);
        for (std::size_t i = 0; i < out16->size(); ++i)
            (*out16)[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
        out.channels = 1;
    } else {
        out.data = std::move(buffer);
    }
    return out;
}

inline void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
                      int depth, const std::vector<std::uint8_t>& bytes) {
    FilePtr fp = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!png) throw Error("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng: out of memory");
    }
    std::vector<png_const_bytep> rows(height);
    const std::size_t channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t rowbytes = width * channels * static_cast<std::size_t>(depth / 8);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y) rows[y] = bytes.data() + y * rowbytes;
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline std::string read_ppm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

inline Raster8 read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    if (read_ppm_token(in) != "P6") throw Error(path.string() + ": unsupported format (expected binary PPM P6)");
    Raster8 r;
    try {
        r.width = std::stoul(read_ppm_token(in));
        r.height = std::stoul(read_ppm_token(in));
        const unsigned long maxval = std::stoul(read_ppm_token(in));
        if (maxval != 255) throw Error(path.string() + ": unsupported bit depth (PPM maxval " + std::to_string(maxval) + ")");
    } catch (const std::logic_error&) {
        throw Error(path.string() + ": malformed PPM header");
    }
    if (r.width == 0 || r.height == 0) throw Error(path.string() + ": empty image");
    r.channels = 3;
    r.data.resize(r.width * r.height * 3);
    in.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
    if (static_cast<std::size_t>(in.gcount()) != r.data.size()) throw Error(path.string() + ": truncated PPM data");
    return r;
}

inline Raster8 read_raster(const std::filesystem::path& path) {
    const std::string ext = extension(path);
    if (ext == ".ppm") return read_ppm(path);
    if (ext == ".png") return read_png(path, false, nullptr);
    throw Error(path.string() + ": unsupported format '" + ext + "'");
}

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace detail

inline Image load_image(const std::filesystem::path& path) {
    const Raster8 r = detail::read_raster(path);
    Image img(r.width, r.height);
    for (std::size_t i = 0; i < img.pixels(); ++i)
        for (std::size_t c = 0; c < 3; ++c)
            img.rgb[3 * i + c] = r.data[i * r.channels + (r.channels == 3 ? c : 0)] / 255.0;
    return img;
}

/// Writes 8-bit RGB; format chosen by extension (.png or .ppm).
inline void save_image(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.rgb.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::quantize(img.rgb[i]);
    const std::string ext = detail::extension(path);
    if (ext == ".png") {
        detail::write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, bytes);
    } else if (ext == ".ppm") {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot open " + path.string());
        out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + path.string());
    } else {
        throw Error(path.string() + ": unsupported format '" + ext + "'");
    }
}

/// Gray 8-bit mask; any value > 127 is foreground.
inline Mask load_mask(const std::filesystem::path& path) {
    const Raster8 r = detail::read_raster(path);
    Mask m(r.width, r.height);
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = r.data[i * r.channels] > 127 ? 1 : 0;
    return m;
}

/// Writes 0 = background, 255 = lesion.
inline void save_mask(const Mask& m, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(m.bits.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.bits[i] ? 255 : 0;
    detail::write_png(path, m.width, m.height, PNG_COLOR_TYPE_GRAY, 8, bytes);
}

/// 16-bit grayscale PNG of integer labels (big-endian samples per PNG).
inline void save_labels16(const std::vector<std::uint32_t>& labels, std::size_t width, std::size_t height,
                          const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(labels.size() * 2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 0xFFFF) throw Error("label " + std::to_string(labels[i]) + " exceeds 16 bits");
        bytes[2 * i] = static_cast<std::uint8_t>(labels[i] >> 8);
        bytes[2 * i + 1] = static_cast<std::uint8_t>(labels[i] & 0xFF);
    }
    detail::write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

inline std::vector<std::uint16_t> load_labels16(const std::filesystem::path& path, std::size_t* width,
                                                std::size_t* height) {
    std::vector<std::uint16_t> labels;
    const Raster8 r = detail::read_png(path, true, &labels);
    if (width) *width = r.width;
    if (height) *height = r.height;
    return labels;
}

}  // namespace supw
