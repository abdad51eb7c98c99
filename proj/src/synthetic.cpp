// SPDX-License-Identifier: Apache-2.0

#include "plora/synthetic.hpp"

#include <array>
#include <cmath>

namespace plora {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::array<float, 3> sample_sphere(Rng& rng) {
    // normalized gaussian triple
    double x, y, z, n;
    do {
        x = rng.normal();
        y = rng.normal();
        z = rng.normal();
        n = std::sqrt(x * x + y * y + z * z);
    } while (n < 1e-9);
    return {static_cast<float>(x / n), static_cast<float>(y / n), static_cast<float>(z / n)};
}

std::array<float, 3> sample_box(Rng& rng) {
    // cube surface [-1,1]^3, all faces equal area
    const std::size_t face = rng.index(6);
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    switch (face) {
        case 0: return {1.f, static_cast<float>(u), static_cast<float>(v)};
        case 1: return {-1.f, static_cast<float>(u), static_cast<float>(v)};
        case 2: return {static_cast<float>(u), 1.f, static_cast<float>(v)};
        case 3: return {static_cast<float>(u), -1.f, static_cast<float>(v)};
        case 4: return {static_cast<float>(u), static_cast<float>(v), 1.f};
        default: return {static_cast<float>(u), static_cast<float>(v), -1.f};
    }
}

std::array<float, 3> sample_torus(Rng& rng) {
    // major radius 1, minor radius 0.4; rejection keeps the surface uniform
    const double R = 1.0, r = 0.4;
    double u, v;
    while (true) {
        u = rng.uniform(0.0, 2.0 * kPi);
        v = rng.uniform(0.0, 2.0 * kPi);
        const double w = rng.uniform();
        if (w <= (R + r * std::cos(v)) / (R + r)) break;
    }
    const double x = (R + r * std::cos(v)) * std::cos(u);
    const double y = (R + r * std::cos(v)) * std::sin(u);
    const double z = r * std::sin(v);
    return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

std::array<float, 3> sample_cylinder(Rng& rng) {
    // radius 0.6, height 2; pick lateral surface or caps proportional to area
    const double r = 0.6, h = 2.0;
    const double lateral = 2.0 * kPi * r * h;
    const double caps = 2.0 * kPi * r * r;
    if (rng.uniform() < lateral / (lateral + caps)) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const double z = rng.uniform(-h / 2.0, h / 2.0);
        return {static_cast<float>(r * std::cos(a)), static_cast<float>(r * std::sin(a)),
                static_cast<float>(z)};
    }
    const double a = rng.uniform(0.0, 2.0 * kPi);
    const double rr = r * std::sqrt(rng.uniform());
    const double z = rng.uniform() < 0.5 ? -h / 2.0 : h / 2.0;
    return {static_cast<float>(rr * std::cos(a)), static_cast<float>(rr * std::sin(a)),
            static_cast<float>(z)};
}

void rotate_cloud(PointCloud<float>& cloud, const std::string& mode, Rng& rng) {
    if (mode == "z") {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const float c = static_cast<float>(std::cos(a)), s = static_cast<float>(std::sin(a));
        for (auto& p : cloud.points) {
            const float x = p[0], y = p[1];
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
        return;
    }
    // uniform SO(3) via a random unit quaternion
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    const double qw = std::sqrt(1.0 - u1) * std::sin(2.0 * kPi * u2);
    const double qx = std::sqrt(1.0 - u1) * std::cos(2.0 * kPi * u2);
    const double qy = std::sqrt(u1) * std::sin(2.0 * kPi * u3);
    const double qz = std::sqrt(u1) * std::cos(2.0 * kPi * u3);
    const double m[3][3] = {
        {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
        {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
        {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}};
    for (auto& p : cloud.points) {
        const double x = p[0], y = p[1], z = p[2];
        p[0] = static_cast<float>(m[0][0] * x + m[0][1] * y + m[0][2] * z);
        p[1] = static_cast<float>(m[1][0] * x + m[1][1] * y + m[1][2] * z);
        p[2] = static_cast<float>(m[2][0] * x + m[2][1] * y + m[2][2] * z);
    }
}

}  // namespace

PointCloud<float> sample_shape(const std::string& shape, std::size_t points, double sigma,
                               const std::string& rotation, Rng& rng) {
    if (points == 0) throw ContractError("sample_shape: points must be positive");
    PointCloud<float> cloud;
    cloud.points.reserve(points);
    for (std::size_t i = 0; i < points; ++i) {
        if (shape == "sphere")
            cloud.points.push_back(sample_sphere(rng));
        else if (shape == "box")
            cloud.points.push_back(sample_box(rng));
        else if (shape == "torus")
            cloud.points.push_back(sample_torus(rng));
        else if (shape == "cylinder")
            cloud.points.push_back(sample_cylinder(rng));
        else
            throw ContractError("sample_shape: unknown class '" + shape + "'");
    }
    // scale so the farthest point sits on the unit sphere
    float max_norm = 0.f;
    for (const auto& p : cloud.points)
        max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    if (max_norm > 0.f)
        for (auto& p : cloud.points) {
            p[0] /= max_norm;
            p[1] /= max_norm;
            p[2] /= max_norm;
        }
    if (sigma > 0.0)
        for (auto& p : cloud.points) {
            p[0] += static_cast<float>(rng.normal() * sigma);
            p[1] += static_cast<float>(rng.normal() * sigma);
            p[2] += static_cast<float>(rng.normal() * sigma);
        }
    rotate_cloud(cloud, rotation, rng);
    return cloud;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.classes.size() < 2)
        throw ContractError("generate_synthetic_dataset: need at least two classes");
    if (spec.clouds_per_class == 0)
        throw ContractError("generate_synthetic_dataset: clouds_per_class must be positive");
    SyntheticDataset ds;
    ds.num_classes = spec.classes.size();
    const std::size_t train_per_class = (spec.clouds_per_class * 8 + 9) / 10;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        Rng rng(derive_seed(spec.seed, "synthetic." + spec.classes[c]));
        for (std::size_t i = 0; i < spec.clouds_per_class; ++i) {
            auto cloud =
                sample_shape(spec.classes[c], spec.points, spec.noise_sigma, spec.rotation, rng);
            cloud.label = static_cast<int>(c);
            if (i < train_per_class)
                ds.train.push_back(std::move(cloud));
            else
                ds.test.push_back(std::move(cloud));
        }
    }
    return ds;
}

}  // namespace plora
