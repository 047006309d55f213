#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "hyneter/harness.hpp"
#include "hyneter/io.hpp"
#include "hyneter/ops.hpp"

namespace hyneter {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

bool decays(const Parameter& p) { return p.value.rank() >= 2; }

class BatchSampler {
 public:
  BatchSampler(std::size_t size, std::uint64_t seed) : order_(size), rng_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  // Zero is allowed: it is the documented "parameters unchanged" case.
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be a finite value >= 0");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (steps == 0) throw std::invalid_argument("train: steps must be >= 1");
  if (batch == 0) throw std::invalid_argument("train: batch must be >= 1");
  if (stop_at_accuracy && !(*stop_at_accuracy >= 0.0 && *stop_at_accuracy <= 1.0)) {
    throw std::invalid_argument("train: stop_at_accuracy must be in [0, 1]");
  }
}

EvalResult evaluate(const Model& model, const SyntheticTask& task, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  EvalResult result;
  result.predictions.resize(task.size());
  double loss_total = 0.0;
  for (std::size_t start = 0; start < task.size(); start += chunk) {
    const std::size_t count = std::min(chunk, task.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    const BackboneOutput out = model.forward(tape, task.batch(idx), false);
    const std::span<const int> labels(task.labels.data() + start, count);
    loss_total += ops::cross_entropy(out.logits, labels).value()[0] * static_cast<double>(count);
    const Tensor& logits = out.logits.value();
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = logits.data().data() + i * classes;
      result.predictions[start + i] = static_cast<int>(std::max_element(row, row + classes) - row);
    }
  }
  result.loss = loss_total / static_cast<double>(task.size());
  result.metrics = stratified_metrics(result.predictions, task.labels, task.bands);
  return result;
}

TrainHistory train(Model& model, const SyntheticTask& task, const TrainConfig& config) {
  config.validate();
  const ModelConfig& mc = model.config();
  if (mc.num_classes != task.config.num_classes) {
    throw std::invalid_argument("train: model head has " + std::to_string(mc.num_classes) + " classes, task has " +
                                std::to_string(task.config.num_classes));
  }
  if (mc.image_size != task.config.image_size) {
    throw std::invalid_argument("train: model expects " + std::to_string(mc.image_size) + "px images, task has " +
                                std::to_string(task.config.image_size) + "px");
  }

  auto& params = model.parameters();
  std::vector<Tensor> first, second;
  for (const Parameter& p : params) {
    first.emplace_back(p.value.shape());
    if (config.optimizer == Optimizer::kAdamW) second.emplace_back(p.value.shape());
  }

  TrainHistory history;
  auto record_eval = [&](std::size_t step) {
    const EvalResult r = evaluate(model, task);
    history.evals.push_back({step, r.loss, r.metrics});
    return config.stop_at_accuracy && r.metrics.total && *r.metrics.total >= *config.stop_at_accuracy;
  };
  if (record_eval(0)) {
    if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    return history;
  }

  BatchSampler sampler(task.size(), config.seed);
  std::vector<Tensor> backup(params.size());
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto idx = sampler.next(config.batch);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = task.labels[idx[i]];

    Tape tape;
    const BackboneOutput out = model.forward(tape, task.batch(idx), true);
    Var loss = ops::cross_entropy(out.logits, labels);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      history.diverged = true;
      break;
    }
    const auto grads = tape.backward(loss);

    for (std::size_t i = 0; i < params.size(); ++i) backup[i] = params[i].value;
    const double lr = config.learning_rate;
    const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    bool finite = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      const auto g = grads.at(p.path).data();
      auto w = p.value.data();
      auto m = first[i].data();
      const double wd = decays(p) ? config.weight_decay : 0.0;
      if (config.optimizer == Optimizer::kAdamW) {
        auto v = second[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
          v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
          const double update = (m[j] / bias1) / (std::sqrt(v[j] / bias2) + kAdamEps);
          w[j] = w[j] - lr * (update + wd * w[j]);
          finite = finite && std::isfinite(w[j]);
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = config.momentum * m[j] + g[j] + wd * w[j];
          w[j] = w[j] - lr * m[j];
          finite = finite && std::isfinite(w[j]);
        }
      }
    }
    if (!finite) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(backup[i]);
      history.diverged = true;
      break;
    }
    history.step_loss.push_back(loss_value);
    if (config.eval_every > 0 && step % config.eval_every == 0 && record_eval(step)) break;
  }
  if (!history.diverged && history.evals.back().step != history.step_loss.size()) {
    record_eval(history.step_loss.size());
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
  return history;
}

}  // namespace hyneter
