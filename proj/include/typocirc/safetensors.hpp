#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "typocirc/tensor.hpp"

namespace typocirc {

using TensorMap = std::map<std::string, Tensor>;

struct TensorFile {
    TensorMap tensors;
    std::map<std::string, std::string> metadata;  // "__metadata__" entries
};

// safetensors container: u64 little-endian header length, JSON header, raw
// little-endian data. Only F32 payloads are read or written.
TensorFile read_safetensors(const std::filesystem::path& path);
void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {});

/// Stable 64-bit FNV-1a digest over tensor names, shapes and data in name
/// order, as a 16-digit hex string.
std::string tensor_map_digest(const TensorMap& tensors);

}  // namespace typocirc
