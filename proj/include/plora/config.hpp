// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plora/common.hpp"

namespace plora {

// One token-selection scale: fps center count, knn neighborhood size, and
// how many scored tokens survive top-k.
struct ScaleSpec {
    std::size_t centers = 0;
    std::size_t neighbors = 0;
    std::size_t select = 0;
};

// Full run configuration. Defaults are the reference settings the repo
// ships with; the CLI loads overrides from a plain-text key=value file.
struct RunConfig {
    // encoder
    std::size_t layers = 12;
    std::size_t dim = 384;
    std::size_t heads = 6;
    std::size_t ffn_dim = 1536;
    double drop_path = 0.1;
    std::size_t num_classes = 15;

    // backbone tokenizer
    std::size_t patch_centers = 128;
    std::size_t patch_neighbors = 32;
    std::size_t embed_h1 = 128;
    std::size_t embed_h2 = 256;
    std::size_t pos_hidden = 128;

    // low-rank adapters
    bool lora_enabled = true;
    std::size_t rank = 8;
    double lora_scaling = 1.0;

    // multi-scale token selection
    bool selection_enabled = true;
    std::vector<ScaleSpec> scales = {{128, 32, 32}, {64, 64, 8}};
    std::size_t prompt_width = 32;  // hidden width of the shared prompt MLPs
    std::size_t mask_hidden = 64;
    std::size_t prompt_h1 = 64;
    std::size_t prompt_h2 = 64;
    std::size_t prompt_pos_hidden = 128;
    bool pool_includes_prompts = true;

    // freeze-policy overrides (everything backbone stays frozen by default)
    bool unfreeze_norms = false;
    bool unfreeze_class_token = false;

    // loss
    double lambda = 0.004;
    double epsilon = 1e-6;
    double label_smoothing = 0.0;

    // optimizer
    double lr = 5e-4;
    double weight_decay = 0.05;
    std::size_t epochs = 300;
    std::size_t warmup_epochs = 10;
    std::size_t batch_size = 32;
    double lr_floor = 1e-6;
    double grad_clip = 0.0;  // 0 disables

    // synthetic data
    std::size_t points = 1024;
    std::size_t clouds_per_class = 100;
    double noise_sigma = 0.01;
    std::vector<std::string> class_names = {"sphere", "box", "torus", "cylinder"};
    std::string rotation = "so3";  // "so3" or "z"
    bool augment = true;

    std::uint64_t seed = 0;

    // state recorded in checkpoints
    bool merged = false;

    std::size_t selected_total() const {
        std::size_t n = 0;
        for (const auto& s : scales) n += s.select;
        return n;
    }
    std::size_t generated_total() const {
        std::size_t n = 0;
        for (const auto& s : scales) n += s.centers;
        return n;
    }
    std::size_t max_scale_centers() const {
        std::size_t n = 0;
        for (const auto& s : scales) n = std::max(n, s.centers);
        return n;
    }

    void validate() const;
    std::string serialize() const;

    static RunConfig from_string(const std::string& text);
    static RunConfig load(const std::string& path);
};

}  // namespace plora
