#include "hyneter/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hyneter/dual_switching.hpp"
#include "hyneter/hnb.hpp"
#include "hyneter/ops.hpp"

namespace hyneter {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * normal(rng);
  return t;
}

// Leaves for a block of width c with the given MLP width, in BlockParams order.
void push_block_inputs(std::vector<Tensor>& in, std::size_t c, std::size_t hidden, std::mt19937_64& rng) {
  for (Shape s : {Shape{c}, Shape{c}, Shape{c, 3 * c}, Shape{3 * c}, Shape{c, c}, Shape{c}, Shape{c}, Shape{c},
                  Shape{c, hidden}, Shape{hidden}, Shape{hidden, c}, Shape{c}}) {
    in.push_back(random_tensor(std::move(s), rng));
  }
}

BlockParams block_from(const std::vector<Var>& v, std::size_t at, std::size_t heads, double delta) {
  BlockParams p;
  p.norm1_gain = v[at];
  p.norm1_shift = v[at + 1];
  p.attention = {v[at + 2], v[at + 3], v[at + 4], v[at + 5], heads, delta};
  p.norm2_gain = v[at + 6];
  p.norm2_shift = v[at + 7];
  p.mlp = {v[at + 8], v[at + 9], v[at + 10], v[at + 11]};
  return p;
}

void merge(GradCheckResult& into, const GradCheckResult& r, const std::string& label) {
  into.checked += r.checked;
  if (r.worst >= into.worst) {
    into.worst = r.worst;
    into.worst_label = label + ":" + r.worst_label;
    into.worst_analytic = r.worst_analytic;
    into.worst_numeric = r.worst_numeric;
  }
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck_function(std::vector<Tensor> inputs, const LossBuilder& build, double h, double floor) {
  auto evaluate = [&](bool with_grad, std::map<std::string, Tensor>* grads) {
    Tape tape;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      leaves.push_back(with_grad ? tape.borrow(inputs[i], "in" + std::to_string(i), true)
                                 : tape.borrow(inputs[i], "", false));
    }
    Var loss = build(tape, leaves);
    if (grads) *grads = tape.backward(loss);
    return loss.value()[0];
  };
  std::map<std::string, Tensor> grads;
  evaluate(true, &grads);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = grads.at("in" + std::to_string(i));
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = evaluate(false, nullptr);
      inputs[i][j] = saved - h;
      const double down = evaluate(false, nullptr);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[j], numeric, floor);
      ++result.checked;
      if (err >= result.worst) {
        result.worst = err;
        result.worst_label = "in" + std::to_string(i) + "[" + std::to_string(j) + "]";
        result.worst_analytic = analytic[j];
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult gradcheck_model(Model& model, std::size_t samples, std::uint64_t seed, double h, std::size_t batch,
                                double floor) {
  std::mt19937_64 rng(seed);
  const ModelConfig& c = model.config();
  const Tensor images = random_tensor(Shape{batch, 3, c.image_size, c.image_size}, rng);
  std::vector<int> labels(batch);
  for (int& l : labels) l = static_cast<int>(rng() % c.num_classes);

  auto loss_of = [&](std::map<std::string, Tensor>* grads) {
    Tape tape;
    const BackboneOutput out = model.forward(tape, images, grads != nullptr);
    Var loss = ops::cross_entropy(out.logits, labels);
    if (grads) *grads = tape.backward(loss);
    return loss.value()[0];
  };
  std::map<std::string, Tensor> grads;
  loss_of(&grads);

  auto& params = model.parameters();
  GradCheckResult result;
  for (std::size_t s = 0; s < samples; ++s) {
    Parameter& p = params[rng() % params.size()];
    const std::size_t j = rng() % p.value.numel();
    const double saved = p.value[j];
    p.value[j] = saved + h;
    const double up = loss_of(nullptr);
    p.value[j] = saved - h;
    const double down = loss_of(nullptr);
    p.value[j] = saved;
    const double analytic = grads.at(p.path)[j];
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(analytic, numeric, floor);
    ++result.checked;
    if (err >= result.worst) {
      result.worst = err;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
      result.worst_label = p.path + "[" + std::to_string(j) + "]";
    }
  }
  return result;
}

std::vector<NamedGradCheck> op_gradcheck_suite(std::uint64_t first_seed, std::size_t seeds) {
  std::vector<NamedGradCheck> out{{"conv2d", {}},     {"linear", {}},    {"softmax_rows", {}}, {"layer_norm", {}},
                                  {"gmsa", {}},       {"hnb_stage", {}}, {"ds_block", {}}};
  for (std::size_t k = 0; k < seeds; ++k) {
    const std::uint64_t seed = first_seed + k;
    const std::string tag = "seed" + std::to_string(seed);
    std::mt19937_64 rng(seed);
    {
      const std::size_t stride = 1 + k % 2;
      const Tensor probe = random_tensor(Shape{2, 3, (5 + 2 - 3) / stride + 1, (5 + 2 - 3) / stride + 1}, rng);
      std::vector<Tensor> in{random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                             random_tensor({3}, rng)};
      merge(out[0].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 return ops::weighted_sum(ops::conv2d(v[0], v[1], v[2], stride, 1), probe);
                               }),
            tag);
    }
    {
      const Tensor probe = random_tensor({3, 2}, rng);
      std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)};
      merge(out[1].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 return ops::weighted_sum(ops::linear(v[0], v[1], v[2]), probe);
                               }),
            tag);
    }
    {
      const Tensor probe = random_tensor({3, 5}, rng);
      merge(out[2].result,
            gradcheck_function({random_tensor({3, 5}, rng)},
                               [&](Tape&, const std::vector<Var>& v) {
                                 return ops::weighted_sum(ops::softmax_rows(v[0]), probe);
                               }),
            tag);
    }
    {
      const Tensor probe = random_tensor({3, 4}, rng);
      std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)};
      merge(out[3].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 return ops::weighted_sum(ops::layer_norm(v[0], v[1], v[2]), probe);
                               }),
            tag);
    }
    {
      const std::size_t c = 8;
      const Tensor probe = random_tensor({2, 16, c}, rng);
      const bool windowed = k % 2 == 1;
      std::vector<Tensor> in{random_tensor({2, 16, c}, rng), random_tensor({c, 3 * c}, rng, 0.5),
                             random_tensor({3 * c}, rng), random_tensor({c, c}, rng), random_tensor({c}, rng)};
      merge(out[4].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 AttentionParams p{v[1], v[2], v[3], v[4], 2, 1.5};
                                 TokenGrid g = gmsa({v[0], 4, 4}, p,
                                                    windowed ? std::optional<std::size_t>(2) : std::nullopt);
                                 return ops::weighted_sum(g.tokens, probe);
                               }),
            tag);
    }
    {
      const std::size_t c = 4;
      const Tensor probe = random_tensor({1, 16, c}, rng);
      std::vector<Tensor> in{random_tensor({1, 16, c}, rng)};
      push_block_inputs(in, c, 2 * c, rng);
      in.push_back(random_tensor({c, c, 1, 1}, rng, 0.5));
      in.push_back(random_tensor({c, c, 3, 3}, rng, 0.2));
      in.push_back(random_tensor({c, c, 5, 5}, rng, 0.1));
      merge(out[5].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 HnbStageParams p;
                                 p.transformer_branch.push_back(block_from(v, 1, 1, 1.0));
                                 p.conv_branch.push_back({v[13], v[14], v[15]});
                                 return ops::weighted_sum(hnb_stage({v[0], 4, 4}, p).tokens, probe);
                               }),
            tag);
    }
    {
      const std::size_t c = 4;
      const Tensor probe = random_tensor({1, 16, c}, rng);
      std::vector<Tensor> in{random_tensor({1, 16, c}, rng)};
      push_block_inputs(in, c, 2 * c, rng);
      merge(out[6].result,
            gradcheck_function(in,
                               [&](Tape&, const std::vector<Var>& v) {
                                 return ops::weighted_sum(ds_block({v[0], 4, 4}, block_from(v, 1, 2, 2.0), 2).tokens,
                                                          probe);
                               }),
            tag);
    }
  }
  return out;
}

}  // namespace hyneter
