#pragma once

#include "cfsynth/nn/params.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cfs::nn {

// Binary container layout (little-endian):
//   8 bytes  magic "CFSCKPT\0"
//   u32      format version
//   u64      metadata length, then UTF-8 JSON metadata
//   u64      array count, then per array:
//              u32 name length, name; u32 group length, group;
//              u32 rank, i64 dims[rank]; f64 values[prod(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::string group;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Arrays for every parameter in `store`.
std::vector<NamedArray> export_params(const ParamStore& store);

// Loads values by name. Every parameter of `store` must be present with a
// matching shape.
void import_params(ParamStore& store, const Checkpoint& ckpt);

}  // namespace cfs::nn
