// SPDX-License-Identifier: Apache-2.0

#include "plora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace plora {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'R', 'K'};
constexpr std::size_t kAlign = 64;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

std::uint64_t align_up(std::uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string shape_to_text(const Shape& s) {
    std::ostringstream os;
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
    return os.str();
}

Shape shape_from_text(const std::string& text) {
    std::istringstream is(text);
    Shape s;
    std::size_t v;
    while (is >> v) s.push_back(v);
    return s;
}

std::string compose_header(const std::string& config_text,
                           const std::vector<TensorEntry>& entries) {
    std::ostringstream os;
    os << "format = plrk\n";
    os << "version = " << kCheckpointVersion << "\n";
    os << "tensor_count = " << entries.size() << "\n";
    os << "[config]\n" << config_text;
    for (const auto& e : entries) {
        os << "[tensor]\n";
        os << "name = " << e.name << "\n";
        os << "dtype = " << e.dtype << "\n";
        os << "shape = " << shape_to_text(e.shape) << "\n";
        os << "offset = " << e.offset << "\n";
        os << "nbytes = " << e.nbytes << "\n";
        os << "frozen = " << (e.frozen ? 1 : 0) << "\n";
    }
    return os.str();
}

CheckpointHeader parse_header(const std::string& text) {
    CheckpointHeader h;
    std::istringstream is(text);
    std::string line;
    enum class Section { Top, Config, Tensor } section = Section::Top;
    std::size_t declared_count = 0;
    while (std::getline(is, line)) {
        if (line == "[config]") {
            section = Section::Config;
            continue;
        }
        if (line == "[tensor]") {
            section = Section::Tensor;
            h.entries.emplace_back();
            continue;
        }
        if (section == Section::Config) {
            h.config_text += line;
            h.config_text += "\n";
            continue;
        }
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint header: malformed line: " + t);
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section == Section::Top) {
            if (key == "version")
                h.version = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "tensor_count")
                declared_count = std::stoul(value);
            else if (key != "format")
                throw FormatError("checkpoint header: unknown top-level key '" + key + "'");
        } else {
            auto& e = h.entries.back();
            if (key == "name")
                e.name = value;
            else if (key == "dtype")
                e.dtype = value;
            else if (key == "shape")
                e.shape = shape_from_text(value);
            else if (key == "offset")
                e.offset = std::stoull(value);
            else if (key == "nbytes")
                e.nbytes = std::stoull(value);
            else if (key == "frozen")
                e.frozen = value == "1";
            else
                throw FormatError("checkpoint header: unknown tensor key '" + key + "'");
        }
    }
    if (declared_count != h.entries.size())
        throw FormatError("checkpoint header: tensor_count does not match entry list");
    return h;
}

// the config section ends where tensor sections begin, so the config text in
// [config] is exactly what RunConfig::serialize produced
struct RawFile {
    std::uint32_t version = 0;
    std::string header_text;
    std::uint64_t payload_base = 0;
    std::uint64_t file_size = 0;
};

RawFile read_preamble(std::ifstream& f, const std::string& path) {
    RawFile raw;
    f.seekg(0, std::ios::end);
    raw.file_size = static_cast<std::uint64_t>(f.tellg());
    f.seekg(0);
    char magic[4];
    if (raw.file_size < 16 || !f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + ": not a PLRK checkpoint");
    std::uint32_t version = 0;
    std::uint64_t header_size = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&header_size), 8);
    if (!f) throw FormatError(path + ": truncated preamble");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    if (16 + header_size > raw.file_size) throw FormatError(path + ": truncated header");
    raw.version = version;
    raw.header_text.resize(header_size);
    f.read(raw.header_text.data(), static_cast<std::streamsize>(header_size));
    if (!f) throw FormatError(path + ": truncated header");
    raw.payload_base = align_up(16 + header_size);
    return raw;
}

}  // namespace

void save_checkpoint(Model<float>& model, const std::string& path) {
    std::vector<TensorEntry> entries;
    std::vector<Tensor<float>> tensors;
    std::uint64_t cursor = 0;
    visit_params(model, [&](const ParamRef<float>& p) {
        TensorEntry e;
        e.name = p.name;
        e.dtype = "f32";
        e.shape = p.tensor.shape();
        e.nbytes = p.tensor.size() * sizeof(float);
        e.offset = cursor;
        e.frozen = !param_is_trainable(model.cfg, p);
        cursor = align_up(cursor + e.nbytes);
        entries.push_back(std::move(e));
        tensors.push_back(p.tensor);
    });

    const std::string header = compose_header(model.cfg.serialize(), entries);
    const std::uint64_t header_size = header.size();
    const std::uint64_t payload_base = align_up(16 + header_size);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, 4);
    const std::uint32_t version = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&header_size), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    const std::string pad(payload_base - 16 - header_size, '\0');
    f.write(pad.data(), static_cast<std::streamsize>(pad.size()));
    std::uint64_t written = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].offset > written) {
            const std::string gap(entries[i].offset - written, '\0');
            f.write(gap.data(), static_cast<std::streamsize>(gap.size()));
            written = entries[i].offset;
        }
        const auto v = tensors[i].values();
        f.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(entries[i].nbytes));
        written += entries[i].nbytes;
    }
    if (!f) throw IoError("failed while writing checkpoint: " + path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    auto raw = read_preamble(f, path);
    auto header = parse_header(raw.header_text);
    header.version = raw.version;

    // structural validation: offsets aligned, in bounds, non-overlapping
    std::uint64_t expected = 0;
    for (const auto& e : header.entries) {
        if (e.dtype != "f32") throw FormatError(path + ": unsupported dtype " + e.dtype);
        if (e.offset % kAlign != 0)
            throw FormatError(path + ": tensor '" + e.name + "' is misaligned");
        if (e.offset < expected)
            throw FormatError(path + ": overlapping tensor payload at '" + e.name + "'");
        if (e.nbytes != shape_numel(e.shape) * sizeof(float))
            throw FormatError(path + ": tensor '" + e.name + "' byte length disagrees with shape");
        if (raw.payload_base + e.offset + e.nbytes > raw.file_size)
            throw FormatError(path + ": truncated payload at '" + e.name + "'");
        expected = e.offset + e.nbytes;
    }
    return header;
}

Model<float> load_checkpoint(const std::string& path) {
    auto header = read_checkpoint_header(path);
    RunConfig cfg = RunConfig::from_string(header.config_text);
    Model<float> model = build_model<float>(cfg, 0);

    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    auto raw = read_preamble(f, path);

    std::size_t matched = 0;
    visit_params(model, [&](const ParamRef<float>& p) {
        const TensorEntry* entry = nullptr;
        for (const auto& e : header.entries)
            if (e.name == p.name) {
                entry = &e;
                break;
            }
        if (entry == nullptr)
            throw SchemaError(path + ": missing tensor '" + p.name + "' for this config");
        if (entry->shape != p.tensor.shape())
            throw SchemaError(path + ": tensor '" + p.name + "' has shape " +
                              shape_str(entry->shape) + ", model expects " +
                              shape_str(p.tensor.shape()));
        auto dst = const_cast<Tensor<float>&>(p.tensor);
        f.seekg(static_cast<std::streamoff>(raw.payload_base + entry->offset));
        f.read(reinterpret_cast<char*>(dst.values().data()),
               static_cast<std::streamsize>(entry->nbytes));
        if (!f) throw FormatError(path + ": truncated payload at '" + p.name + "'");
        dst.set_requires_grad(!entry->frozen);
        ++matched;
    });
    if (matched != header.entries.size())
        throw SchemaError(path + ": checkpoint holds tensors the config does not describe");
    return model;
}

}  // namespace plora
