#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyneter/attention.hpp"
#include "hyneter/tape.hpp"
#include "hyneter/tensor.hpp"

namespace hyneter {

inline constexpr std::size_t kStages = 4;
using StageCounts = std::array<std::size_t, kStages>;

/// Hyperparameters of a Hyneter variant. Stage channels are d, 2d, 4d, 8d.
struct ModelConfig {
  std::string variant = "custom";
  std::size_t d = 16;
  StageCounts cnn_layers{1, 1, 1, 1};
  StageCounts transformer_blocks{1, 1, 1, 1};
  StageCounts heads{1, 1, 2, 4};
  std::size_t patch = 4;
  std::size_t window = 4;
  std::size_t image_size = 32;
  double delta = 1.0;
  /// false removes the off-diagonal scaler from the attention code path.
  bool scaler_branch = true;
  bool enable_hnb = true;
  bool enable_ds = true;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 3;

  std::size_t stage_channels(std::size_t stage) const { return d << stage; }
  std::size_t stage_grid(std::size_t stage) const { return (image_size / patch) >> stage; }
  std::size_t mlp_hidden(std::size_t stage) const;
  /// Attention window actually used by a windowed stage: the configured
  /// window, shrunk to the grid when the grid is smaller.
  std::size_t effective_window(std::size_t stage) const;
  /// Stage 1 and 2 (0-based 0, 1) fuse a conv branch when HNB is enabled.
  bool stage_has_conv(std::size_t stage) const { return enable_hnb && stage < 2 && cnn_layers[stage] > 0; }

  /// Throws std::invalid_argument naming the offending field or stage.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// hyneter-1.0, hyneter-plus, hyneter-max, hyneter-micro.
const std::vector<std::string>& variant_names();
ModelConfig variant_config(const std::string& name);

enum class ParamInit { kTruncNormal002, kFanIn, kZeros, kOnes };

struct ParamSpec {
  std::string path;
  Shape shape;
  ParamInit init;
};

/// Every parameter of a config in construction order; no allocation.
std::vector<ParamSpec> parameter_manifest(const ModelConfig& config);
std::size_t count_params(const ModelConfig& config, bool include_head = true);

struct Parameter {
  std::string path;
  Tensor value;
};

struct BackboneOutput {
  /// Stage feature maps [N, d*2^i, g_i, g_i].
  std::array<Var, kStages> stages;
  Var logits;
};

class Model {
 public:
  /// Deterministic initialisation from `seed`.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Tensor& parameter(const std::string& path) const;
  Tensor& parameter(const std::string& path);
  bool has_parameter(const std::string& path) const { return index_.contains(path); }

  /// Runs the backbone and the classification head on [N,3,H,W] images.
  /// With `trainable`, parameters are recorded as gradient leaves.
  BackboneOutput forward(Tape& tape, const Tensor& images, bool trainable = false) const;

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

Model build_variant(const std::string& name, std::uint64_t seed = 0);
std::size_t count_params(const Model& model, bool include_head = true);

/// Binds model parameters onto a tape, once per path.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const Model& model, bool trainable) : tape_(tape), model_(model), trainable_(trainable) {}

  Var operator()(const std::string& path);
  /// Block parameters under `prefix` ("stages.2.blocks.0").
  BlockParams block(const std::string& prefix, std::size_t heads, std::optional<double> delta);

 private:
  Tape& tape_;
  const Model& model_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

}  // namespace hyneter
