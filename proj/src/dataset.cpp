// SPDX-License-Identifier: Apache-2.0

#include "plora/dataset.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace plora {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

PointCloud<float> load_point_cloud_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open point cloud file: " + path);
    PointCloud<float> cloud;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::istringstream is(line);
        float x, y, z;
        std::string extra;
        if (!(is >> x >> y >> z) || (is >> extra))
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": expected exactly three coordinates");
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": non-finite coordinate");
        cloud.points.push_back({x, y, z});
    }
    if (cloud.points.empty()) throw ContractError(path + ": point cloud file holds no points");
    return cloud;
}

void save_point_cloud_file(const PointCloud<float>& cloud, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write point cloud file: " + path);
    for (const auto& p : cloud.points) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f\n", p[0], p[1], p[2]);
        f << buf;
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": expected <path>,<label>");
        const std::string rel = trim(line.substr(0, comma));
        const std::string label_str = trim(line.substr(comma + 1));
        if (rel.empty())
            throw ParseError(path + ": line " + std::to_string(lineno) + ": empty path");
        int label = 0;
        auto [p, ec] = std::from_chars(label_str.data(), label_str.data() + label_str.size(),
                                       label);
        if (ec != std::errc() || p != label_str.data() + label_str.size() || label < 0)
            throw ParseError(path + ": line " + std::to_string(lineno) +
                             ": label must be a non-negative integer, got '" + label_str + "'");
        if (!seen.insert(rel).second)
            throw SchemaError(path + ": duplicate path '" + rel + "'");
        entries.push_back({(base / rel).string(), label});
    }
    if (entries.empty()) throw ContractError(path + ": empty manifest");
    return entries;
}

std::vector<PointCloud<float>> load_manifest_dataset(const std::string& path) {
    auto entries = read_manifest(path);
    std::vector<PointCloud<float>> clouds;
    clouds.reserve(entries.size());
    for (const auto& e : entries) {
        auto cloud = load_point_cloud_file(e.path);
        cloud.label = e.label;
        clouds.push_back(std::move(cloud));
    }
    return clouds;
}

}  // namespace plora
