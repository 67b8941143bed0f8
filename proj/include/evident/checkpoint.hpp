#pragma once

// Self-describing model archives: an 8-byte magic, a length-prefixed JSON
// header (schema version, architecture config, tensor table) and the raw
// little-endian tensor payload.

#include <filesystem>

#include <torch/torch.h>

#include "json.hpp"

namespace evident::checkpoint {

inline constexpr int kSchemaVersion = 1;

/// Writes every parameter and buffer of `module` under its dotted name.
void save(const std::filesystem::path& path, const torch::nn::Module& module, const nlohmann::json& config);

/// The `config` object stored at save time.
nlohmann::json read_config(const std::filesystem::path& path);

/// Copies stored tensors into `module`; names and shapes must match exactly.
void load_into(const std::filesystem::path& path, torch::nn::Module& module);

}  // namespace evident::checkpoint
