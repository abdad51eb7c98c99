// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plora/geometry.hpp"

namespace plora {

struct SyntheticSpec {
    std::vector<std::string> classes = {"sphere", "box", "torus", "cylinder"};
    std::size_t points = 1024;
    std::size_t clouds_per_class = 100;
    double noise_sigma = 0.01;
    std::string rotation = "so3";  // "so3" or "z"
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    std::vector<PointCloud<float>> train;
    std::vector<PointCloud<float>> test;
    std::size_t num_classes = 0;
};

// Analytic surface sampling per class, unit-sphere normalization (scale by
// the max point norm, no centering), gaussian jitter, then a random rotation.
// Deterministic per seed; stratified 80/20 split per class.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

PointCloud<float> sample_shape(const std::string& shape, std::size_t points, double sigma,
                               const std::string& rotation, Rng& rng);

}  // namespace plora
