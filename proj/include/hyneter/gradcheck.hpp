#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hyneter/backbone.hpp"
#include "hyneter/tape.hpp"

namespace hyneter {

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// vanishing gradients from turning finite-difference round-off into large
/// relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Floor for per-operation checks on N(0,1) inputs (the Caffe gradient-checker
/// convention). Gradients there are O(1) or larger; below the floor the check
/// is absolute, since central differences at h=1e-5 resolve ~1e-9 at best.
inline constexpr double kOpFloor = 1.0;
/// Floor for the whole-model check, where a cross-entropy of ~ln(K) leaves
/// most parameter gradients small.
inline constexpr double kModelFloor = 1e-6;

struct GradCheckResult {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string worst_label;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss from leaf variables (one per input tensor).
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Central differences with step h over every element of every input.
GradCheckResult gradcheck_function(std::vector<Tensor> inputs, const LossBuilder& build, double h = 1e-5,
                                   double floor = kOpFloor);

/// Central differences on `samples` randomly chosen scalar parameters of the
/// model, using a cross-entropy loss over a fixed random batch.
GradCheckResult gradcheck_model(Model& model, std::size_t samples, std::uint64_t seed, double h = 1e-5,
                                std::size_t batch = 2, double floor = kModelFloor);

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};

/// Per-operation checks (conv2d, linear, softmax_rows, layer_norm, gmsa,
/// hnb_stage, ds_block) on N(0,1) inputs, `seeds` seeds each, starting at
/// `first_seed`.
std::vector<NamedGradCheck> op_gradcheck_suite(std::uint64_t first_seed, std::size_t seeds);

}  // namespace hyneter
