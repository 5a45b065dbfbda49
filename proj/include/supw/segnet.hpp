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

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "supw/image.hpp"
#include "supw/ops.hpp"
#include "supw/whitening.hpp"

namespace supw {

struct NamedTensor {
    std::string name;
    Tensor value;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Toy encoder-decoder for binary segmentation.
///
/// Encoder: three blocks of (3×3 stride-2 conv -> instance norm -> ReLU). The post-norm
/// activation of each block is the whitening hook. Decoder: 1×1 conv + bias, ×8 bilinear
/// upsample, sigmoid. The 1×1 conv and the upsample are both linear and commute, so the conv
/// runs at the coarse resolution.
class SegNetwork {
public:
    static constexpr std::size_t kBlocks = 3;
    static constexpr std::size_t kDownsample = 8;
    static constexpr double kNormEps = 1e-5;

    SegNetwork() = default;

    static SegNetwork build(std::array<std::size_t, kBlocks> widths = {8, 16, 32}, std::uint64_t seed = 0) {
        SegNetwork net;
        net.widths_ = widths;
        std::mt19937_64 rng(seed);
        std::size_t cin = 3;
        for (std::size_t b = 0; b < kBlocks; ++b) {
            if (widths[b] == 0) throw Error("segnet: block widths must be positive");
            Tensor w(Shape{widths[b], cin, 3, 3});
            he_init(w, cin * 9, rng);
            net.params_.push_back({"enc" + std::to_string(b) + ".weight", std::move(w)});
            cin = widths[b];
        }
        Tensor dw(Shape{1, cin, 1, 1});
        he_init(dw, cin, rng);
        net.params_.push_back({"dec.weight", std::move(dw)});
        net.params_.push_back({"dec.bias", Tensor(Shape{1}, 0.0)});
        return net;
    }

    /// Rebuilds a network from named tensors (as stored in a checkpoint).
    static SegNetwork from_tensors(const std::vector<NamedTensor>& tensors) {
        SegNetwork net;
        auto find = [&](const std::string& name) -> const Tensor& {
            for (const auto& t : tensors)
                if (t.name == name) return t.value;
            throw Error("checkpoint: missing parameter " + name);
        };
        std::size_t cin = 3;
        for (std::size_t b = 0; b < kBlocks; ++b) {
            const Tensor& w = find("enc" + std::to_string(b) + ".weight");
            if (w.rank() != 4 || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3)
                throw Error("checkpoint: bad shape " + shape_str(w.shape()) + " for enc" + std::to_string(b));
            net.widths_[b] = w.dim(0);
            net.params_.push_back({"enc" + std::to_string(b) + ".weight", w});
            cin = w.dim(0);
        }
        const Tensor& dw = find("dec.weight");
        const Tensor& db = find("dec.bias");
        if (dw.shape() != Shape{1, cin, 1, 1} || db.shape() != Shape{1})
            throw Error("checkpoint: bad decoder shapes " + shape_str(dw.shape()) + ", " + shape_str(db.shape()));
        net.params_.push_back({"dec.weight", dw});
        net.params_.push_back({"dec.bias", db});
        return net;
    }

    const std::array<std::size_t, kBlocks>& widths() const noexcept { return widths_; }
    std::vector<NamedTensor>& parameters() noexcept { return params_; }
    const std::vector<NamedTensor>& parameters() const noexcept { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// Rounds every parameter to the nearest 32-bit float.
    void quantize_f32() {
        for (auto& p : params_)
            for (double& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
    }

    friend bool operator==(const SegNetwork&, const SegNetwork&) = default;

private:
    static void he_init(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (double& v : t.values()) v = dist(rng);
    }

    std::array<std::size_t, kBlocks> widths_{};
    std::vector<NamedTensor> params_;
};

/// Intermediate state of one forward pass, kept for the backward pass.
struct ForwardTape {
    std::array<GradPair, SegNetwork::kBlocks> conv, norm, act;
    GradPair dec_conv, dec_bias, upsample, head;
};

struct ForwardResult {
    Tensor probs;                  // [H,W] foreground probability
    std::vector<Tensor> features;  // post-norm activations [1,C,h,w] per block when captured
    ForwardTape tape;
};

inline ForwardResult forward(const SegNetwork& net, const Tensor& image, bool capture = true) {
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
        throw Error("forward: expected [1,3,H,W] input, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(2), w = image.dim(3);
    if (h % SegNetwork::kDownsample != 0 || w % SegNetwork::kDownsample != 0 || h == 0 || w == 0)
        throw Error("forward: input " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by 8");
    const auto& params = net.parameters();
    ForwardResult r;
    const Tensor* x = &image;
    for (std::size_t b = 0; b < SegNetwork::kBlocks; ++b) {
        r.tape.conv[b] = conv2d(*x, params[b].value, 2, 1);
        r.tape.norm[b] = instance_norm(r.tape.conv[b].value, SegNetwork::kNormEps);
        r.tape.act[b] = relu(r.tape.norm[b].value);
        if (capture) r.features.push_back(r.tape.norm[b].value);
        x = &r.tape.act[b].value;
    }
    r.tape.dec_conv = conv2d(*x, params[SegNetwork::kBlocks].value, 1, 0);
    r.tape.dec_bias = bias_add(r.tape.dec_conv.value, params[SegNetwork::kBlocks + 1].value);
    r.tape.upsample = upsample_bilinear(r.tape.dec_bias.value, h, w);
    r.tape.head = sigmoid(r.tape.upsample.value);
    r.probs = r.tape.head.value.reshaped(Shape{h, w});
    return r;
}

/// Parameter gradients in the order of SegNetwork::parameters().
/// d_features may be empty or hold one gradient per block (empty tensors are skipped).
inline std::vector<Tensor> backward(const SegNetwork& net, const ForwardTape& tape, const Tensor& d_probs,
                                    const std::vector<Tensor>& d_features = {}) {
    const auto& head_shape = tape.head.value.shape();
    const auto& params = net.parameters();
    std::vector<Tensor> grads(params.size());
    Tensor g;
    if (d_probs.size() == 0) {
        // Feature-only gradient: the head contributes nothing.
        grads[SegNetwork::kBlocks] = Tensor(params[SegNetwork::kBlocks].value.shape());
        grads[SegNetwork::kBlocks + 1] = Tensor(params[SegNetwork::kBlocks + 1].value.shape());
        g = Tensor(tape.act[SegNetwork::kBlocks - 1].value.shape());
    } else {
        if (d_probs.size() != tape.head.value.size())
            throw Error("backward: gradient " + shape_str(d_probs.shape()) + " vs output " + shape_str(head_shape));
        g = tape.head.backward(d_probs.reshaped(head_shape))[0];
        g = tape.upsample.backward(g)[0];
        auto db = tape.dec_bias.backward(g);
        grads[SegNetwork::kBlocks + 1] = std::move(db[1]);
        auto dc = tape.dec_conv.backward(db[0]);
        grads[SegNetwork::kBlocks] = std::move(dc[1]);
        g = std::move(dc[0]);
    }
    for (std::size_t bb = SegNetwork::kBlocks; bb-- > 0;) {
        g = tape.act[bb].backward(g)[0];
        if (bb < d_features.size() && d_features[bb].size() > 0) g += d_features[bb].reshaped(g.shape());
        g = tape.norm[bb].backward(g)[0];
        auto dconv = tape.conv[bb].backward(g);
        grads[bb] = std::move(dconv[1]);
        g = std::move(dconv[0]);
    }
    return grads;
}

/// Features of the original image and of its photometric transform, computed with one parameter set.
struct PairForward {
    ForwardResult original;
    ForwardResult transformed;
    std::vector<CovMatrix> cov_original, cov_transformed;
    std::vector<VarianceMap> variance;
};

inline PairForward forward_pair(const SegNetwork& net, const Image& x, const Image& tx) {
    PairForward out{forward(net, to_tensor(x), true), forward(net, to_tensor(tx), true), {}, {}, {}};
    for (std::size_t b = 0; b < SegNetwork::kBlocks; ++b) {
        out.cov_original.push_back(CovMatrix::from_tensor(covariance(out.original.features[b]).value));
        out.cov_transformed.push_back(CovMatrix::from_tensor(covariance(out.transformed.features[b]).value));
        out.variance.push_back(pair_variance(out.cov_original[b], out.cov_transformed[b]));
    }
    return out;
}

inline PairForward forward_pair(const SegNetwork& net, const Image& x, const PhotometricParams& params, std::uint64_t seed) {
    return forward_pair(net, x, photometric_transform(x, params, seed));
}

// ---------------------------------------------------------------------------
// Checkpoint container: "SUPW", u32 version, metadata, named f32 tensors. All little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t epoch = 0;
    std::uint64_t config_hash = 0;
    std::string rng_state;
    std::vector<NamedTensor> tensors;
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t limit = 1u << 20) {
        const std::uint32_t n = u32();
        if (n > limit) throw Error("checkpoint: corrupt string length");
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw Error("checkpoint: truncated file");
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter w;
    w.raw("SUPW", 4);
    w.u32(ck.version);
    w.u64(ck.epoch);
    w.u64(ck.config_hash);
    w.str(ck.rng_state);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.value.values()) w.f32(static_cast<float>(v));
    }
    return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes) {
    detail::ByteReader r(std::move(bytes));
    if (r.raw(4) != "SUPW") throw Error("checkpoint: bad magic");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(ck.version));
    ck.epoch = r.u64();
    ck.config_hash = r.u64();
    ck.rng_state = r.str();
    const std::uint32_t count = r.u32();
    if (count > 4096) throw Error("checkpoint: shape table corrupt (tensor count " + std::to_string(count) + ")");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(4096);
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw Error("checkpoint: shape table corrupt (rank " + std::to_string(rank) + ")");
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto& d : shape) {
            d = r.u32();
            numel *= d;
            if (numel > (1u << 28)) throw Error("checkpoint: shape table corrupt (tensor too large)");
        }
        std::vector<double> values(numel);
        for (double& v : values) v = static_cast<double>(r.f32());
        t.value = Tensor(std::move(shape), std::move(values));
        ck.tensors.push_back(std::move(t));
    }
    if (!r.at_end()) throw Error("checkpoint: trailing bytes after tensor table");
    return ck;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Checkpoint holding the network parameters plus any extra named tensors.
inline Checkpoint make_checkpoint(const SegNetwork& net, std::uint64_t epoch = 0, std::uint64_t config_hash = 0,
                                  std::string rng_state = {}, std::vector<NamedTensor> extras = {}) {
    Checkpoint ck{kCheckpointVersion, epoch, config_hash, std::move(rng_state), net.parameters()};
    for (auto& e : extras) ck.tensors.push_back(std::move(e));
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) { write_file(path, encode_checkpoint(ck)); }

inline void save_checkpoint(const SegNetwork& net, const std::filesystem::path& path) {
    save_checkpoint(make_checkpoint(net), path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

inline SegNetwork load_checkpoint(const std::filesystem::path& path) {
    return SegNetwork::from_tensors(read_checkpoint(path).tensors);
}

}  // namespace supw
