#pragma once

// Binary checkpoint container shared by every trained model.
//
// Layout (little-endian):
//   "VQSC" | u32 format_version | u32 metadata_bytes | metadata (UTF-8 key=value lines)
//   | u32 tensor_count | tensor*
// tensor: u32 name_bytes | name | u32 rank | i64 dims[rank] | f32 values[prod(dims)]

#include "strata/kv.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace strata {

struct NamedTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> values;

    std::int64_t numel() const;
};

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::uint32_t format_version = kFormatVersion;
    /// Free-form metadata: kind, serialized config, epoch, val_loss, references to other artifacts.
    std::vector<std::pair<std::string, std::string>> metadata;
    std::map<std::string, NamedTensor> tensors;

    void set_meta(const std::string& key, const std::string& value);
    bool has_meta(const std::string& key) const;
    const std::string& meta(const std::string& key) const;
    std::string meta_or(const std::string& key, std::string fallback) const;

    std::string kind() const { return meta_or("kind", ""); }
    int epoch() const;
    double val_loss() const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    /// Stable identifier derived from the serialized bytes.
    std::string id() const;
};

std::string fnv1a_hex(const std::uint8_t* data, std::size_t n);

}  // namespace strata
