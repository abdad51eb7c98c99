// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "plora/geometry.hpp"

namespace plora {

// Parses whitespace-separated "x y z" triples, one per line. Blank lines and
// '#' comments are skipped; anything else is a parse error naming the line.
PointCloud<float> load_point_cloud_file(const std::string& path);

struct ManifestEntry {
    std::string path;  // resolved relative to the manifest's directory
    int label = -1;
};

// Manifest lines are "<relative-path>,<label>".
std::vector<ManifestEntry> read_manifest(const std::string& path);

// read_manifest plus loading every referenced cloud
std::vector<PointCloud<float>> load_manifest_dataset(const std::string& path);

void save_point_cloud_file(const PointCloud<float>& cloud, const std::string& path);

}  // namespace plora
