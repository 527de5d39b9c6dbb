#pragma once

// Checkpoint container (version 1), little-endian:
//   "VSEGCKPT"            8 bytes
//   u32 version
//   u64 header length N
//   N bytes JSON header   {spec, spec_hash, epoch, dtype, tensors:[{name, shape, offset, size}]}
//   raw parameter values  (f32 or f64, offsets in elements)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "vesselseg/nn/unet.hpp"

namespace vesselseg::nn {

inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json spec_to_json(const UNetSpec& s) {
    return {{"in_channels", s.in_channels},
            {"num_classes", s.num_classes},
            {"depth", s.depth},
            {"base_channels", s.base_channels},
            {"attention", s.attention},
            {"norm", s.norm == NormKind::kInstance ? "instance" : "batch"},
            {"alpha_mode", s.alpha_mode == AlphaMode::kPerChannel ? "per-channel" : "class-averaged"}};
}

inline UNetSpec spec_from_json(const nlohmann::json& j) {
    UNetSpec s;
    s.in_channels = j.at("in_channels").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.depth = j.at("depth").get<int>();
    s.base_channels = j.at("base_channels").get<int>();
    s.attention = j.at("attention").get<bool>();
    const auto norm = j.at("norm").get<std::string>();
    if (norm != "instance" && norm != "batch") throw FormatError("checkpoint: unknown norm '" + norm + "'");
    s.norm = norm == "instance" ? NormKind::kInstance : NormKind::kBatch;
    const auto alpha = j.at("alpha_mode").get<std::string>();
    if (alpha != "per-channel" && alpha != "class-averaged")
        throw FormatError("checkpoint: unknown alpha_mode '" + alpha + "'");
    s.alpha_mode = alpha == "per-channel" ? AlphaMode::kPerChannel : AlphaMode::kClassAveraged;
    return s;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

template <typename T>
void write_checkpoint(std::ostream& os, const ModelParams<T>& p) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    nlohmann::json h;
    h["spec"] = spec_to_json(p.spec);
    h["spec_hash"] = hex64(p.spec.hash());
    h["epoch"] = p.epoch;
    h["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
    h["count"] = p.values.size();
    auto& tensors = h["tensors"] = nlohmann::json::array();
    for (const auto& e : p.entries)
        tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"size", e.size}});
    const std::string header = h.dump();
    const std::uint64_t len = header.size();
    os.write(kCheckpointMagic, 8);
    os.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(header.data(), static_cast<std::streamsize>(len));
    os.write(reinterpret_cast<const char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(T)));
    if (!os) throw FormatError("checkpoint: write failed");
}

template <typename T = float>
ModelParams<T> read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic (bytes 0-7)");
    std::uint32_t version = 0;
    if (!is.read(reinterpret_cast<char*>(&version), 4)) throw FormatError("checkpoint: truncated at version (bytes 8-11)");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t len = 0;
    if (!is.read(reinterpret_cast<char*>(&len), 8)) throw FormatError("checkpoint: truncated header length (bytes 12-19)");
    if (len > (std::uint64_t{1} << 30)) throw FormatError("checkpoint: implausible header length");
    std::string header(len, '\0');
    if (!is.read(header.data(), static_cast<std::streamsize>(len)))
        throw FormatError("checkpoint: truncated header (bytes 20-" + std::to_string(20 + len - 1) + ")");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    const std::string dtype = h.at("dtype").get<std::string>();
    const bool is_f32 = dtype == "f32";
    if (!is_f32 && dtype != "f64") throw FormatError("checkpoint: unsupported dtype '" + dtype + "'");

    ModelParams<T> p;
    p.spec = spec_from_json(h.at("spec"));
    if (h.at("spec_hash").get<std::string>() != hex64(p.spec.hash()))
        throw FormatError("checkpoint: spec_hash does not match the stored spec");
    p.epoch = h.at("epoch").get<std::int64_t>();
    p.entries = param_layout(p.spec);
    const auto& tensors = h.at("tensors");
    if (tensors.size() != p.entries.size()) throw FormatError("checkpoint: tensor list does not match the spec layout");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = tensors[i];
        const auto& e = p.entries[i];
        if (t.at("name").get<std::string>() != e.name || t.at("shape").get<std::vector<std::int64_t>>() != e.shape ||
            t.at("offset").get<std::size_t>() != e.offset || t.at("size").get<std::size_t>() != e.size)
            throw FormatError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' does not match the layout");
    }
    const std::size_t count = h.at("count").get<std::size_t>();
    if (count != (p.entries.empty() ? 0 : p.entries.back().offset + p.entries.back().size))
        throw FormatError("checkpoint: value count does not match the spec layout");
    const std::size_t width = is_f32 ? 4 : 8;
    std::vector<char> raw(count * width);
    const std::uint64_t data_start = 20 + len;
    if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
        const auto got = static_cast<std::uint64_t>(is.gcount());
        throw FormatError("checkpoint: truncated parameter data (missing bytes " + std::to_string(data_start + got) +
                          "-" + std::to_string(data_start + raw.size() - 1) + ")");
    }
    p.values.resize(count);
    if (is_f32) {
        std::vector<float> v(count);
        std::memcpy(v.data(), raw.data(), raw.size());
        p.values.assign(v.begin(), v.end());
    } else {
        std::vector<double> v(count);
        std::memcpy(v.data(), raw.data(), raw.size());
        p.values.assign(v.begin(), v.end());
    }
    return p;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(os, p);
}

template <typename T = float>
ModelParams<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
    return read_checkpoint<T>(is);
}

} // namespace vesselseg::nn
