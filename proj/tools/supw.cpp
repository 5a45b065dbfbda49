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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "supw/supw.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

/// Invalid parameter values that only surface after the config is resolved.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::size_t worker_threads() {
    const char* env = std::getenv("SUPW_THREADS");
    const std::size_t cores = std::max(1u, std::thread::hardware_concurrency());
    if (!env || !*env) return cores;
    try {
        std::size_t used = 0;
        const long v = std::stol(env, &used);
        if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw UsageError(std::string("SUPW_THREADS must be a positive integer, got '") + env + "'");
    }
}

void print_config(const json& j) { std::cout << "config " << j.dump() << std::endl; }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw supw::Error("cannot write " + path.string());
    out << text;
    if (!out) throw supw::Error("write failed: " + path.string());
}

/// Training flags that override config-file values when given.
struct TrainOverrides {
    std::optional<std::size_t> epochs, batch_size, slic_k, input_size, warmup_epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr0, momentum, slic_weight, slic_m, isw_weight;
    std::optional<bool> use_slic_loss, use_isw;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--epochs", epochs, "Training epochs");
        cmd.add_option("--batch-size", batch_size, "Batch size");
        cmd.add_option("--seed", seed, "Seed for initialization, shuffling and augmentation");
        cmd.add_option("--lr", lr0, "Initial learning rate of the poly schedule");
        cmd.add_option("--momentum", momentum, "SGD momentum");
        cmd.add_option("--input-size", input_size, "Square training resolution (multiple of 8)");
        cmd.add_option("--slic-weight", slic_weight, "Superpixel loss weight w in [0,1]");
        cmd.add_option("--slic-k", slic_k, "Superpixel count k");
        cmd.add_option("--slic-m", slic_m, "Superpixel compactness m");
        cmd.add_option("--isw-weight", isw_weight, "Weight of each whitening loss term");
        cmd.add_option("--warmup-epochs", warmup_epochs, "Epochs before the style mask is frozen");
        cmd.add_option("--use-slic-loss", use_slic_loss, "Enable the superpixel loss (true/false)");
        cmd.add_option("--use-isw", use_isw, "Enable selective whitening (true/false)");
    }

    supw::TrainConfig resolve(const std::string& config_path) const {
        supw::TrainConfig c = config_path.empty() ? supw::TrainConfig{} : supw::load_config(config_path);
        auto set = [](auto& field, const auto& opt) {
            if (opt) field = *opt;
        };
        set(c.epochs, epochs);
        set(c.batch_size, batch_size);
        set(c.seed, seed);
        set(c.lr0, lr0);
        set(c.momentum, momentum);
        set(c.input_size, input_size);
        set(c.slic_weight, slic_weight);
        set(c.slic_k, slic_k);
        set(c.slic_m, slic_m);
        set(c.isw_weight, isw_weight);
        set(c.warmup_epochs, warmup_epochs);
        set(c.use_slic_loss, use_slic_loss);
        set(c.use_isw, use_isw);
        try {
            c.validate();
        } catch (const supw::Error& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

int cmd_slic(const fs::path& image, const supw::SlicParams& params, const fs::path& labels_out, const fs::path& overlay_out) {
    print_config({{"image", image.string()}, {"k", params.k}, {"m", params.m}, {"max_iter", params.max_iter},
                  {"min_region_frac", params.min_region_frac}, {"labels_out", labels_out.string()},
                  {"overlay_out", overlay_out.string()}});
    const supw::Image img = supw::load_image(image);
    try {
        params.validate(img.pixels());
    } catch (const supw::Error& e) {
        throw UsageError(e.what());
    }
    const supw::SuperpixelGrid grid = supw::slic_run(img, params);
    if (!labels_out.empty()) supw::save_labels16(grid.labels, grid.width, grid.height, labels_out);
    if (!overlay_out.empty()) supw::save_image(supw::overlay(img, grid), overlay_out);
    std::cout << "regions " << grid.num_regions << std::endl;
    return 0;
}

int cmd_synth(const std::string& domain, std::size_t n, const fs::path& out, std::uint64_t seed, std::size_t size) {
    print_config({{"domain", domain}, {"n", n}, {"out", out.string()}, {"seed", seed}, {"size", size}});
    supw::DomainSpec spec;
    try {
        spec = supw::DomainSpec::by_name(domain);
    } catch (const supw::Error& e) {
        throw UsageError(e.what());
    }
    const auto manifest = supw::gen_dataset(spec, n, out, seed, size);
    std::cout << "wrote " << manifest.size() << " samples to " << out.string() << std::endl;
    return 0;
}

int cmd_train(const supw::TrainConfig& cfg, const fs::path& data, const fs::path& out) {
    print_config(json(cfg));
    if (!fs::is_directory(data)) throw supw::Error("data directory not found: " + data.string());
    fs::create_directories(out);
    write_text(out / "config.json", json(cfg).dump(2) + "\n");
    const supw::TrainResult r = supw::train_loop(cfg, data, out, &std::cerr);
    std::cout << "best epoch " << r.best_epoch << " val IoU " << r.best_val_iou << std::endl;
    std::cout << "checkpoint " << (out / "best.ckpt").string() << std::endl;
    return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& report, const std::string& split, std::size_t size,
             const fs::path& pred_out) {
    print_config({{"ckpt", ckpt.string()}, {"data", data.string()}, {"report", report.string()}, {"split", split},
                  {"size", size}, {"pred_out", pred_out.string()}});
    if (size == 0 || size % 8 != 0) throw UsageError("--size must be a positive multiple of 8");
    const supw::SegNetwork net = supw::load_checkpoint(ckpt);
    const auto examples = supw::load_examples(data, split == "all" ? "" : split, size);
    if (examples.empty()) throw supw::Error("no images for split '" + split + "' in " + data.string());
    if (!pred_out.empty()) {
        fs::create_directories(pred_out);
        for (const auto& ex : examples) {
            const supw::ForwardResult r = supw::forward(net, supw::to_tensor(ex.image), false);
            supw::save_mask(supw::binarize(r.probs), pred_out / ex.name);
        }
    }
    const supw::Report rep = supw::evaluate(net, examples);
    write_text(report, rep.to_json().dump(2) + "\n");
    std::cout << rep.to_table(data.filename().string());
    return 0;
}

int cmd_grid(const supw::TrainConfig& cfg, const fs::path& data, const fs::path& target, const fs::path& out) {
    const std::size_t threads = worker_threads();
    json shown = cfg;
    shown["threads"] = threads;
    print_config(shown);
    const auto train = supw::load_examples(data, "train", cfg.input_size);
    const auto val = supw::load_examples(data, "val", cfg.input_size);
    const auto test = supw::load_examples(data, "test", cfg.input_size);
    const auto tgt = supw::load_examples(target, "", cfg.input_size);
    for (const auto* set : {&train, &val, &test})
        if (set->empty()) throw supw::Error("source dataset " + data.string() + " needs train, val and test entries");
    if (tgt.empty()) throw supw::Error("no target images in " + target.string());
    const auto rows = supw::grid_search(cfg, train, val, test, tgt, &std::cerr, threads);
    fs::create_directories(out);
    write_text(out / "grid.json", supw::grid_to_json(rows).dump(2) + "\n");
    const std::string table = supw::grid_to_table(rows);
    write_text(out / "grid.txt", table);
    std::cout << table;
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    print_config({{"seed", seed}, {"h", 1e-5}, {"rel_tol", 1e-3}});
    bool ok = true;
    for (const auto& c : supw::gradient_suite(seed)) {
        ok = ok && c.report.passed;
        std::cout << (c.report.passed ? "PASS " : "FAIL ") << c.name << "  max rel err " << c.report.max_rel_error
                  << "  checked " << c.report.checked << std::endl;
    }
    return ok ? 0 : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Superpixel-guided segmentation training with selective whitening"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "supw 1.0.0");

    fs::path image, labels_out, overlay_out;
    supw::SlicParams slic;
    auto* c_slic = app.add_subcommand("slic", "Compute SLIC superpixels of one image");
    c_slic->add_option("--image", image, "Input PNG/PPM image")->required();
    c_slic->add_option("--k", slic.k, "Desired superpixel count")->check(CLI::PositiveNumber);
    c_slic->add_option("--m", slic.m, "Compactness")->check(CLI::PositiveNumber);
    c_slic->add_option("--max-iter", slic.max_iter, "Maximum assignment/update iterations");
    c_slic->add_option("--min-region-frac", slic.min_region_frac, "Regions below this fraction of N/k are merged")
        ->check(CLI::NonNegativeNumber);
    c_slic->add_option("--labels-out", labels_out, "16-bit label PNG");
    c_slic->add_option("--overlay-out", overlay_out, "Boundary overlay PNG");

    std::string domain = "source";
    std::size_t n = 250, synth_size = 128;
    std::uint64_t synth_seed = 0;
    fs::path synth_out;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic lesion dataset");
    c_synth->add_option("--domain", domain, "source or target")->check(CLI::IsMember({"source", "target"}));
    c_synth->add_option("--n", n, "Number of samples (>= 10)")->check(CLI::Range(std::size_t{10}, std::size_t{1} << 20));
    c_synth->add_option("--out", synth_out, "Output dataset directory")->required();
    c_synth->add_option("--seed", synth_seed, "Generator seed");
    c_synth->add_option("--size", synth_size, "Image side length (multiple of 8)");

    std::string train_config;
    fs::path train_data, train_out;
    TrainOverrides train_over;
    auto* c_train = app.add_subcommand("train", "Train the segmentation network");
    c_train->add_option("--config", train_config, "JSON config; flags override its values");
    c_train->add_option("--data", train_data, "Dataset directory with a train/val manifest")->required();
    c_train->add_option("--out", train_out, "Output directory for best.ckpt and runlog.jsonl")->required();
    train_over.add_to(*c_train);

    fs::path ckpt, eval_data, report, pred_out;
    std::string split = "test";
    std::size_t eval_size = 256;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    c_eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    c_eval->add_option("--data", eval_data, "Dataset directory")->required();
    c_eval->add_option("--report", report, "JSON report path")->required();
    c_eval->add_option("--split", split, "Manifest split to evaluate (train, val, test) or all");
    c_eval->add_option("--size", eval_size, "Evaluation resolution (the training input size)");
    c_eval->add_option("--pred-out", pred_out, "Directory for predicted mask PNGs");

    std::string grid_config;
    fs::path grid_data, grid_target, grid_out;
    TrainOverrides grid_over;
    auto* c_grid = app.add_subcommand("grid", "Run the 10-row hyperparameter grid");
    c_grid->add_option("--config", grid_config, "JSON base config; flags override its values");
    c_grid->add_option("--data", grid_data, "Source dataset directory with train/val/test splits")->required();
    c_grid->add_option("--target", grid_target, "Target dataset directory (every image is evaluated)")->required();
    c_grid->add_option("--out", grid_out, "Output directory for grid.json and grid.txt")->required();
    grid_over.add_to(*c_grid);

    std::uint64_t gc_seed = 0;
    auto* c_grad = app.add_subcommand("gradcheck", "Verify every analytic gradient against finite differences");
    c_grad->add_option("--seed", gc_seed, "Seed for the random test inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        worker_threads();
        if (*c_slic) return cmd_slic(image, slic, labels_out, overlay_out);
        if (*c_synth) return cmd_synth(domain, n, synth_out, synth_seed, synth_size);
        if (*c_train) return cmd_train(train_over.resolve(train_config), train_data, train_out);
        if (*c_eval) return cmd_eval(ckpt, eval_data, report, split, eval_size, pred_out);
        if (*c_grid) return cmd_grid(grid_over.resolve(grid_config), grid_data, grid_target, grid_out);
        if (*c_grad) return cmd_gradcheck(gc_seed);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
