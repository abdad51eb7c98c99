// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "plora/losses.hpp"
#include "plora/model.hpp"

namespace fixtures {

using plora::Rng;
using plora::RunConfig;
using plora::Shape;
using plora::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 0.5) {
    std::vector<T> data(plora::shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * scale);
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
plora::PointCloud<T> random_cloud(std::size_t n, Rng& rng) {
    plora::PointCloud<T> cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        cloud.points.push_back({static_cast<T>(rng.uniform(-1, 1)),
                                static_cast<T>(rng.uniform(-1, 1)),
                                static_cast<T>(rng.uniform(-1, 1))});
    return cloud;
}

template <typename T>
void randomize(Tensor<T>& t, Rng& rng, double scale = 0.1) {
    for (auto& v : t.values()) v = static_cast<T>(rng.normal() * scale);
}

// small but fully featured setup used across the model tests
inline RunConfig tiny_config() {
    RunConfig cfg;
    cfg.layers = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.drop_path = 0.0;
    cfg.num_classes = 3;
    cfg.patch_centers = 6;
    cfg.patch_neighbors = 4;
    cfg.embed_h1 = 4;
    cfg.embed_h2 = 8;
    cfg.pos_hidden = 4;
    cfg.rank = 2;
    cfg.scales = {{4, 3, 2}, {2, 3, 1}};
    cfg.prompt_width = 4;
    cfg.mask_hidden = 4;
    cfg.prompt_h1 = 4;
    cfg.prompt_h2 = 4;
    cfg.prompt_pos_hidden = 4;
    cfg.lambda = 0.004;
    cfg.points = 16;
    cfg.clouds_per_class = 10;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 4;
    cfg.class_names = {"sphere", "box", "torus"};
    return cfg;
}

// makes adapters and prompt output layers non-trivial so merge and gradient
// paths are exercised away from the zero-init point
template <typename T>
void randomize_adapters(plora::Model<T>& model, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& blk : model.blocks)
        if (blk.has_lora)
            for (auto& pair : blk.qkv_lora) {
                randomize(pair.down, rng, 0.2);
                randomize(pair.up, rng, 0.2);
            }
    if (model.cfg.selection_enabled) {
        randomize(model.prompt_qkv.b.weight, rng, 0.1);
        randomize(model.prompt_qkv.b.bias, rng, 0.02);
        randomize(model.prompt_ffn.b.weight, rng, 0.1);
        randomize(model.prompt_ffn.b.bias, rng, 0.02);
    }
}

}  // namespace fixtures
