#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "swt/config.hpp"
#include "swt/model.hpp"

namespace swt::checkpoint {

// Layout, little-endian throughout:
//   "SWTC" | u32 version | u32 config length | config JSON bytes |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u32 dims[rank], f64 payload[numel]
// Student tensors are stored as "student/<name>", teacher as "teacher/<name>".
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Tensor>> tensors;

    config::RunConfig config() const;
};

std::vector<std::uint8_t> encode(const std::string& config_json, const model::ModelState& state);
Checkpoint decode(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& file, const config::RunConfig& config, const model::ModelState& state);
Checkpoint load(const std::filesystem::path& file);  // NotFoundError, FormatError

// Rebuilds a model for `model_config` from the checkpoint tensors. Every
// mismatch (missing, extra or differently shaped tensor) is listed in one
// ConfigError.
model::ModelState restore(const Checkpoint& ckpt, const model::ModelConfig& model_config, double ema_decay);

std::string file_hash(const std::filesystem::path& file);  // FNV-1a of the bytes, hex

}  // namespace swt::checkpoint
