// SPDX-License-Identifier: Apache-2.0

#include "plora/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace plora {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::size_t parse_size(const std::string& v, const std::string& key) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ParseError("config: invalid integer for '" + key + "': " + v);
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParseError("config: invalid number for '" + key + "': " + v);
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("config: invalid boolean for '" + key + "': " + v);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// scales are written as g:k:n triples, e.g. "128:32:32 64:64:8"
std::vector<ScaleSpec> parse_scales(const std::string& v) {
    std::vector<ScaleSpec> out;
    for (const auto& tok : split_ws(v)) {
        ScaleSpec s;
        if (std::sscanf(tok.c_str(), "%zu:%zu:%zu", &s.centers, &s.neighbors, &s.select) != 3)
            throw ParseError("config: invalid scale triple '" + tok + "' (want g:k:n)");
        out.push_back(s);
    }
    if (out.empty()) throw ParseError("config: 'scales' must list at least one g:k:n triple");
    return out;
}

std::string fmt_scales(const std::vector<ScaleSpec>& scales) {
    std::ostringstream os;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (i) os << " ";
        os << scales[i].centers << ":" << scales[i].neighbors << ":" << scales[i].select;
    }
    return os.str();
}

}  // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ContractError("config: " + msg); };
    if (layers < 1) fail("layers must be >= 1");
    if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
    if (drop_path < 0.0 || drop_path >= 1.0) fail("drop_path must be in [0, 1)");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (lora_enabled) {
        if (rank < 1 || rank >= dim) fail("rank must satisfy 1 <= rank < dim");
    }
    if (selection_enabled) {
        for (const auto& s : scales) {
            if (s.centers == 0 || s.neighbors == 0) fail("scale sizes must be positive");
            if (s.select > s.centers) fail("scale select count exceeds its center count");
        }
        if (prompt_width == 0 || mask_hidden == 0) fail("prompt widths must be positive");
    }
    if (lambda < 0.0) fail("lambda must be >= 0");
    if (epsilon <= 0.0) fail("epsilon must be > 0");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must be in [0, 1)");
    if (warmup_epochs >= epochs) fail("warmup_epochs must be < epochs");
    if (batch_size == 0) fail("batch_size must be positive");
    if (points < patch_centers) fail("points must be >= patch_centers");
    if (selection_enabled && points < max_scale_centers())
        fail("points must be >= the largest scale center count");
    if (class_names.size() < 2) fail("at least two synthetic classes required");
    if (rotation != "so3" && rotation != "z") fail("rotation must be 'so3' or 'z'");
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "layers = " << layers << "\n";
    os << "dim = " << dim << "\n";
    os << "heads = " << heads << "\n";
    os << "ffn_dim = " << ffn_dim << "\n";
    os << "drop_path = " << fmt_double(drop_path) << "\n";
    os << "num_classes = " << num_classes << "\n";
    os << "patch_centers = " << patch_centers << "\n";
    os << "patch_neighbors = " << patch_neighbors << "\n";
    os << "embed_h1 = " << embed_h1 << "\n";
    os << "embed_h2 = " << embed_h2 << "\n";
    os << "pos_hidden = " << pos_hidden << "\n";
    os << "lora_enabled = " << (lora_enabled ? "true" : "false") << "\n";
    os << "rank = " << rank << "\n";
    os << "lora_scaling = " << fmt_double(lora_scaling) << "\n";
    os << "selection_enabled = " << (selection_enabled ? "true" : "false") << "\n";
    os << "scales = " << fmt_scales(scales) << "\n";
    os << "prompt_width = " << prompt_width << "\n";
    os << "mask_hidden = " << mask_hidden << "\n";
    os << "prompt_h1 = " << prompt_h1 << "\n";
    os << "prompt_h2 = " << prompt_h2 << "\n";
    os << "prompt_pos_hidden = " << prompt_pos_hidden << "\n";
    os << "pool_includes_prompts = " << (pool_includes_prompts ? "true" : "false") << "\n";
    os << "unfreeze_norms = " << (unfreeze_norms ? "true" : "false") << "\n";
    os << "unfreeze_class_token = " << (unfreeze_class_token ? "true" : "false") << "\n";
    os << "lambda = " << fmt_double(lambda) << "\n";
    os << "epsilon = " << fmt_double(epsilon) << "\n";
    os << "label_smoothing = " << fmt_double(label_smoothing) << "\n";
    os << "lr = " << fmt_double(lr) << "\n";
    os << "weight_decay = " << fmt_double(weight_decay) << "\n";
    os << "epochs = " << epochs << "\n";
    os << "warmup_epochs = " << warmup_epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "lr_floor = " << fmt_double(lr_floor) << "\n";
    os << "grad_clip = " << fmt_double(grad_clip) << "\n";
    os << "points = " << points << "\n";
    os << "clouds_per_class = " << clouds_per_class << "\n";
    os << "noise_sigma = " << fmt_double(noise_sigma) << "\n";
    {
        os << "classes =";
        for (const auto& c : class_names) os << " " << c;
        os << "\n";
    }
    os << "rotation = " << rotation << "\n";
    os << "augment = " << (augment ? "true" : "false") << "\n";
    os << "seed = " << seed << "\n";
    os << "merged = " << (merged ? "true" : "false") << "\n";
    return os.str();
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"layers", [](RunConfig& c, auto& k, auto& v) { c.layers = parse_size(v, k); }},
        {"dim", [](RunConfig& c, auto& k, auto& v) { c.dim = parse_size(v, k); }},
        {"heads", [](RunConfig& c, auto& k, auto& v) { c.heads = parse_size(v, k); }},
        {"ffn_dim", [](RunConfig& c, auto& k, auto& v) { c.ffn_dim = parse_size(v, k); }},
        {"drop_path", [](RunConfig& c, auto& k, auto& v) { c.drop_path = parse_double(v, k); }},
        {"num_classes", [](RunConfig& c, auto& k, auto& v) { c.num_classes = parse_size(v, k); }},
        {"patch_centers",
         [](RunConfig& c, auto& k, auto& v) { c.patch_centers = parse_size(v, k); }},
        {"patch_neighbors",
         [](RunConfig& c, auto& k, auto& v) { c.patch_neighbors = parse_size(v, k); }},
        {"embed_h1", [](RunConfig& c, auto& k, auto& v) { c.embed_h1 = parse_size(v, k); }},
        {"embed_h2", [](RunConfig& c, auto& k, auto& v) { c.embed_h2 = parse_size(v, k); }},
        {"pos_hidden", [](RunConfig& c, auto& k, auto& v) { c.pos_hidden = parse_size(v, k); }},
        {"lora_enabled", [](RunConfig& c, auto& k, auto& v) { c.lora_enabled = parse_bool(v, k); }},
        {"rank", [](RunConfig& c, auto& k, auto& v) { c.rank = parse_size(v, k); }},
        {"lora_scaling",
         [](RunConfig& c, auto& k, auto& v) { c.lora_scaling = parse_double(v, k); }},
        {"selection_enabled",
         [](RunConfig& c, auto& k, auto& v) { c.selection_enabled = parse_bool(v, k); }},
        {"scales", [](RunConfig& c, auto&, auto& v) { c.scales = parse_scales(v); }},
        {"prompt_width", [](RunConfig& c, auto& k, auto& v) { c.prompt_width = parse_size(v, k); }},
        {"mask_hidden", [](RunConfig& c, auto& k, auto& v) { c.mask_hidden = parse_size(v, k); }},
        {"prompt_h1", [](RunConfig& c, auto& k, auto& v) { c.prompt_h1 = parse_size(v, k); }},
        {"prompt_h2", [](RunConfig& c, auto& k, auto& v) { c.prompt_h2 = parse_size(v, k); }},
        {"prompt_pos_hidden",
         [](RunConfig& c, auto& k, auto& v) { c.prompt_pos_hidden = parse_size(v, k); }},
        {"pool_includes_prompts",
         [](RunConfig& c, auto& k, auto& v) { c.pool_includes_prompts = parse_bool(v, k); }},
        {"unfreeze_norms",
         [](RunConfig& c, auto& k, auto& v) { c.unfreeze_norms = parse_bool(v, k); }},
        {"unfreeze_class_token",
         [](RunConfig& c, auto& k, auto& v) { c.unfreeze_class_token = parse_bool(v, k); }},
        {"lambda", [](RunConfig& c, auto& k, auto& v) { c.lambda = parse_double(v, k); }},
        {"epsilon", [](RunConfig& c, auto& k, auto& v) { c.epsilon = parse_double(v, k); }},
        {"label_smoothing",
         [](RunConfig& c, auto& k, auto& v) { c.label_smoothing = parse_double(v, k); }},
        {"lr", [](RunConfig& c, auto& k, auto& v) { c.lr = parse_double(v, k); }},
        {"weight_decay",
         [](RunConfig& c, auto& k, auto& v) { c.weight_decay = parse_double(v, k); }},
        {"epochs", [](RunConfig& c, auto& k, auto& v) { c.epochs = parse_size(v, k); }},
        {"warmup_epochs",
         [](RunConfig& c, auto& k, auto& v) { c.warmup_epochs = parse_size(v, k); }},
        {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.batch_size = parse_size(v, k); }},
        {"lr_floor", [](RunConfig& c, auto& k, auto& v) { c.lr_floor = parse_double(v, k); }},
        {"grad_clip", [](RunConfig& c, auto& k, auto& v) { c.grad_clip = parse_double(v, k); }},
        {"points", [](RunConfig& c, auto& k, auto& v) { c.points = parse_size(v, k); }},
        {"clouds_per_class",
         [](RunConfig& c, auto& k, auto& v) { c.clouds_per_class = parse_size(v, k); }},
        {"noise_sigma", [](RunConfig& c, auto& k, auto& v) { c.noise_sigma = parse_double(v, k); }},
        {"classes", [](RunConfig& c, auto&, auto& v) { c.class_names = split_ws(v); }},
        {"rotation", [](RunConfig& c, auto&, auto& v) { c.rotation = v; }},
        {"augment", [](RunConfig& c, auto& k, auto& v) { c.augment = parse_bool(v, k); }},
        {"seed",
         [](RunConfig& c, auto& k, auto& v) {
             c.seed = static_cast<std::uint64_t>(parse_size(v, k));
         }},
        {"merged", [](RunConfig& c, auto& k, auto& v) { c.merged = parse_bool(v, k); }},
    };

    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                             "'");
        it->second(cfg, key, value);
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_string(buf.str());
}

}  // namespace plora
