#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyneter/backbone.hpp"
#include "hyneter/harness.hpp"

namespace hyneter {

/// Configuration file error; the message names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses JSON object text. Top-level keys configure the model, an optional
/// "train" object configures training. Unknown keys are rejected.
///
/// Either "variant" (hyneter-1.0 | hyneter-plus | hyneter-max |
/// hyneter-micro) or all of "d", "cnn_layers" and "transformer_blocks" must
/// be present; other keys override the variant's values. When "d" is set
/// but "heads" is not, heads default to max(1, stage channels / 32).
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);

/// Reference table of every config key, its type and default.
std::string config_reference();

/// Canonical JSON for a model config (sorted keys, no whitespace).
std::string model_config_json(const ModelConfig& config);

// Checkpoint layout (all integers little-endian):
//   magic "HYNCKPT\0" | u32 version (1) | u32 config length | config JSON
//   u32 parameter count | per parameter: u32 path length, path bytes,
//   u8 dtype tag (1 = float64), u32 rank, u64 extents[rank]
//   payload: every parameter's values as little-endian float64, in
//   manifest order.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
/// Validates the whole buffer against the live model before assigning
/// anything; on any error the model is left untouched.
void deserialize_checkpoint(Model& model, std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
void load_checkpoint(Model& model, const std::filesystem::path& path);

/// Header plus one row per record, ascending by value, fixed 6 decimals,
/// missing values as empty fields, LF line endings. All records must share
/// one factor.
std::string format_csv(std::span<const SweepRecord> records);
void emit_csv(std::span<const SweepRecord> records, const std::filesystem::path& path);

}  // namespace hyneter
