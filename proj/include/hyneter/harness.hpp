#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyneter/backbone.hpp"
#include "hyneter/tensor.hpp"

namespace hyneter {

// ---------------------------------------------------------------------------
// Synthetic size-stratified classification task

enum class SizeBand { kSmall = 0, kMedium = 1, kLarge = 2 };

/// Band thresholds are fractions of the image area covered by the shape's
/// bounding box: small <= small_max < medium <= medium_max < large <= large_max.
struct SyntheticConfig {
  std::size_t image_size = 32;
  std::size_t num_classes = 3;
  std::size_t samples = 2000;
  double small_max = 0.02;
  double medium_max = 0.10;
  double large_max = 0.40;

  void validate() const;
};

/// One shape per image. Class is the shape type (0 filled square, 1 cross,
/// 2 hollow frame, 3 disc); colour and position are random, the background
/// is a low-frequency pattern plus pixel noise.
struct SyntheticTask {
  SyntheticConfig config;
  std::uint64_t seed = 0;
  Tensor images;  // [S, 3, H, W]
  std::vector<int> labels;
  std::vector<SizeBand> bands;
  std::vector<std::size_t> box_sides;

  std::size_t size() const { return labels.size(); }
  /// Copies the listed samples into a [B,3,H,W] batch.
  Tensor batch(std::span<const std::size_t> indices) const;
};

/// Pure function of (config, seed). Each band gets a third of the samples and
/// every class appears equally often within a band (up to rounding).
SyntheticTask gen_synthetic(const SyntheticConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

struct StratifiedMetrics {
  std::optional<double> total;
  std::optional<double> small;
  std::optional<double> medium;
  std::optional<double> large;
  /// total / small; missing when small is missing or zero.
  std::optional<double> ratio;
};

StratifiedMetrics stratified_metrics(std::span<const int> predictions, std::span<const int> labels,
                                     std::span<const SizeBand> bands);

/// Sample Pearson correlation. Missing when either input has zero variance.
/// Throws on length mismatch or fewer than two points.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { kSgd, kAdamW };

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdamW;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;  // sgd only
  std::size_t steps = 500;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  /// Full-task evaluation every this many steps (0: only at the end).
  std::size_t eval_every = 0;
  /// Written after the last step (or the last finite state on divergence).
  std::string checkpoint_path;
  /// Stop at the first evaluation whose total accuracy reaches this.
  std::optional<double> stop_at_accuracy;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EvalResult {
  double loss = 0.0;
  std::vector<int> predictions;
  StratifiedMetrics metrics;
};

EvalResult evaluate(const Model& model, const SyntheticTask& task, std::size_t chunk = 64);

struct EvalPoint {
  std::size_t step = 0;
  double loss = 0.0;
  StratifiedMetrics metrics;
};

struct TrainHistory {
  std::vector<double> step_loss;
  /// Step 0 (before any update), every eval_every steps, and the final step.
  std::vector<EvalPoint> evals;
  bool diverged = false;
};

TrainHistory train(Model& model, const SyntheticTask& task, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Factor sweeps

enum class Factor { kCL, kTB, kNT, kDelta };

std::string factor_name(Factor factor);
Factor parse_factor(const std::string& name);

struct SweepRecord {
  Factor factor = Factor::kDelta;
  double value = 0.0;
  std::size_t param_count = 0;
  double final_loss = 0.0;
  std::optional<double> acc_total;
  std::optional<double> acc_small;
  std::optional<double> acc_medium;
  std::optional<double> acc_large;
  std::optional<double> ratio_total_over_small;

  bool operator==(const SweepRecord&) const = default;
};

struct SweepSetup {
  ModelConfig model = variant_config("hyneter-micro");
  TrainConfig train;
  SyntheticConfig data;
  std::uint64_t data_seed = 0;
  std::uint64_t model_seed = 0;
  /// Held-out samples used for the accuracy columns.
  std::size_t test_samples = 300;
  /// Sweep points trained concurrently.
  std::size_t workers = 1;
};

/// CL: conv layers per stage; TB: blocks per stage; NT: stage-1 token count
/// (realised through the patch size); delta: attention score scaler.
ModelConfig apply_factor(ModelConfig config, Factor factor, double value);

/// Trains and evaluates one model for a single factor value.
SweepRecord run_point(Factor factor, double value, const SweepSetup& setup);

struct SweepResult {
  /// Ascending factor value; on failure, the points finished before it.
  std::vector<SweepRecord> records;
  std::optional<std::string> error;
};

SweepResult run_sweep(Factor factor, std::vector<double> values, const SweepSetup& setup);

}  // namespace hyneter
