#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pcvs/common.hpp"
#include "pcvs/params.hpp"

namespace pcvs {

// Checkpoint files: the magic "PCVS", a u32 format version, then one record
// per tensor: [u32 name_len][name][u32 rank][u32 dims...][f32 payload], all
// little-endian. Records are written in name order, so two identical training
// runs produce byte-identical files. Names starting with '_' carry run
// metadata (e.g. "_config") rather than learnable parameters.

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& f, std::uint32_t x) {
    char b[4] = {static_cast<char>(x & 0xff), static_cast<char>((x >> 8) & 0xff),
                 static_cast<char>((x >> 16) & 0xff), static_cast<char>((x >> 24) & 0xff)};
    f.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("checkpoint: " + path + ": truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& f, float x) { put_u32(f, std::bit_cast<std::uint32_t>(x)); }

inline float get_f32(std::istream& f, const std::string& path) {
    return std::bit_cast<float>(get_u32(f, path));
}

}  // namespace detail

struct CheckpointRecord {
    Shape shape;
    std::vector<float> data;
};

using CheckpointData = std::map<std::string, CheckpointRecord>;

template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store,
                     const CheckpointData& extra = {}) {
    CheckpointData records = extra;
    for (const auto& [name, t] : store.all()) {
        CheckpointRecord r;
        r.shape = t.shape();
        r.data.reserve(t.numel());
        for (T x : t.value()) r.data.push_back(static_cast<float>(x));
        if (!records.emplace(name, std::move(r)).second)
            throw IoError("checkpoint: duplicate record '" + name + "'");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    f.write("PCVS", 4);
    detail::put_u32(f, kCheckpointVersion);
    for (const auto& [name, r] : records) {
        detail::put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(f, static_cast<std::uint32_t>(r.shape.size()));
        for (int d : r.shape) detail::put_u32(f, static_cast<std::uint32_t>(d));
        for (float x : r.data) detail::put_f32(f, x);
    }
    if (!f) throw IoError("checkpoint: short write to " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "PCVS")
        throw IoError("checkpoint: " + path + ": bad magic");
    const std::uint32_t version = detail::get_u32(f, path);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: " + path + ": unsupported version " + std::to_string(version));
    CheckpointData out;
    while (f.peek() != std::ifstream::traits_type::eof()) {
        const std::uint32_t name_len = detail::get_u32(f, path);
        std::string name(name_len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!f) throw IoError("checkpoint: " + path + ": truncated file");
        CheckpointRecord r;
        const std::uint32_t rank = detail::get_u32(f, path);
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            r.shape.push_back(static_cast<int>(detail::get_u32(f, path)));
            numel *= static_cast<std::size_t>(r.shape.back());
        }
        r.data.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) r.data[i] = detail::get_f32(f, path);
        if (!out.emplace(std::move(name), std::move(r)).second)
            throw IoError("checkpoint: " + path + ": duplicate record");
    }
    return out;
}

/// Copy matching records into the store. Every store parameter must be present
/// with the right shape; metadata records ('_' prefix) are ignored here.
template <typename T>
void load_checkpoint_into(const CheckpointData& ck, ParameterStore<T>& store) {
    for (auto& [name, t] : store.all()) {
        auto it = ck.find(name);
        if (it == ck.end()) throw IoError("checkpoint: parameter '" + name + "' not found");
        if (it->second.shape != t.shape())
            throw IoError("checkpoint: parameter '" + name + "' has shape " +
                          shape_str(it->second.shape) + ", model expects " + shape_str(t.shape()));
        auto& v = t.value();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(it->second.data[i]);
    }
}

}  // namespace pcvs
