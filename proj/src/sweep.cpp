#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "hyneter/harness.hpp"

namespace hyneter {
namespace {

std::size_t as_count(double value, const char* factor) {
  if (!(value >= 0.0) || value != std::floor(value) || value > 1e6) {
    throw std::invalid_argument(std::string("sweep: ") + factor + " values must be non-negative integers, got " +
                                std::to_string(value));
  }
  return static_cast<std::size_t>(value);
}

}  // namespace

std::string factor_name(Factor factor) {
  switch (factor) {
    case Factor::kCL:
      return "CL";
    case Factor::kTB:
      return "TB";
    case Factor::kNT:
      return "NT";
    case Factor::kDelta:
      return "delta";
  }
  return "?";
}

Factor parse_factor(const std::string& name) {
  if (name == "CL" || name == "cl") return Factor::kCL;
  if (name == "TB" || name == "tb") return Factor::kTB;
  if (name == "NT" || name == "nt") return Factor::kNT;
  if (name == "delta") return Factor::kDelta;
  throw std::invalid_argument("unknown factor '" + name + "'; valid factors: CL, TB, NT, delta");
}

ModelConfig apply_factor(ModelConfig config, Factor factor, double value) {
  switch (factor) {
    case Factor::kCL: {
      const std::size_t n = as_count(value, "CL");
      config.cnn_layers = {n, n, n, n};
      break;
    }
    case Factor::kTB: {
      const std::size_t n = as_count(value, "TB");
      config.transformer_blocks = {n, n, n, n};
      break;
    }
    case Factor::kNT: {
      const std::size_t tokens = as_count(value, "NT");
      const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
      if (tokens == 0 || side * side != tokens || config.image_size % side != 0) {
        throw std::invalid_argument("sweep: NT value " + std::to_string(tokens) +
                                    " is not a square grid that tiles a " + std::to_string(config.image_size) +
                                    "px image");
      }
      config.patch = config.image_size / side;
      break;
    }
    case Factor::kDelta:
      config.delta = value;
      break;
  }
  config.validate();
  return config;
}

SweepRecord run_point(Factor factor, double value, const SweepSetup& setup) {
  const ModelConfig mc = apply_factor(setup.model, factor, value);
  SyntheticConfig data = setup.data;
  data.image_size = mc.image_size;
  data.num_classes = mc.num_classes;
  const SyntheticTask train_task = gen_synthetic(data, setup.data_seed);
  SyntheticConfig held_out = data;
  held_out.samples = setup.test_samples;
  const SyntheticTask test_task = gen_synthetic(held_out, setup.data_seed + 1);

  Model model(mc, setup.model_seed);
  const TrainHistory history = train(model, train_task, setup.train);
  if (history.diverged) {
    throw std::runtime_error("sweep: training diverged at " + factor_name(factor) + "=" + std::to_string(value));
  }
  const EvalResult test = evaluate(model, test_task);

  SweepRecord r;
  r.factor = factor;
  r.value = value;
  r.param_count = count_params(model);
  r.final_loss = history.evals.back().loss;
  r.acc_total = test.metrics.total;
  r.acc_small = test.metrics.small;
  r.acc_medium = test.metrics.medium;
  r.acc_large = test.metrics.large;
  r.ratio_total_over_small = test.metrics.ratio;
  return r;
}

SweepResult run_sweep(Factor factor, std::vector<double> values, const SweepSetup& setup) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<std::optional<SweepRecord>> done(n);
  std::vector<std::optional<std::string>> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};

  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        done[i] = run_point(factor, values[i], setup);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        failed.store(true);
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(setup.workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  SweepResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (done[i]) result.records.push_back(*done[i]);
    if (errors[i] && !result.error) result.error = *errors[i];
  }
  return result;
}

}  // namespace hyneter
