#include "hyneter/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hyneter/dual_switching.hpp"
#include "hyneter/hnb.hpp"

namespace hyneter {
namespace {

std::string stage_prefix(std::size_t stage) { return "stages." + std::to_string(stage); }

std::string block_prefix(std::size_t stage, std::size_t block) {
  return stage_prefix(stage) + ".blocks." + std::to_string(block);
}

std::string conv_prefix(std::size_t stage, std::size_t layer) {
  return stage_prefix(stage) + ".conv." + std::to_string(layer);
}

std::string downsample_prefix(std::size_t stage) { return "downsample." + std::to_string(stage); }

void fail(const std::string& message) { throw std::invalid_argument(message); }

}  // namespace

std::size_t ModelConfig::mlp_hidden(std::size_t stage) const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(stage_channels(stage)) * mlp_ratio));
}

std::size_t ModelConfig::effective_window(std::size_t stage) const {
  return std::min(window, stage_grid(stage));
}

void ModelConfig::validate() const {
  if (d == 0) fail("config: d must be positive");
  if (patch == 0) fail("config: patch must be positive");
  if (window == 0) fail("config: window must be positive");
  if (num_classes == 0) fail("config: num_classes must be positive");
  if (!(delta > 0.0) || !std::isfinite(delta)) fail("config: delta must be a positive finite number");
  if (!(mlp_ratio > 0.0) || !std::isfinite(mlp_ratio)) fail("config: mlp_ratio must be positive");
  if (image_size == 0 || image_size % (patch * 8) != 0) {
    fail("config: image_size " + std::to_string(image_size) + " must be a positive multiple of patch*8 = " +
         std::to_string(patch * 8) + " so all four stage grids are integral");
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t c = stage_channels(s);
    if (heads[s] == 0 || c % heads[s] != 0) {
      fail("config: stage " + std::to_string(s + 1) + " has " + std::to_string(c) + " channels, not divisible by " +
           std::to_string(heads[s]) + " heads");
    }
    if (mlp_hidden(s) == 0) fail("config: stage " + std::to_string(s + 1) + " MLP hidden width is zero");
  }
  for (std::size_t s = 2; s < kStages; ++s) {
    const std::size_t grid = stage_grid(s);
    const std::size_t w = effective_window(s);
    if (grid % w != 0) {
      fail("config: stage " + std::to_string(s + 1) + " grid " + std::to_string(grid) + "x" + std::to_string(grid) +
           " is not divisible by window " + std::to_string(w));
    }
  }
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"hyneter-1.0", "hyneter-plus", "hyneter-max", "hyneter-micro"};
  return names;
}

ModelConfig variant_config(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "hyneter-1.0") {
    c.d = 96;
    c.cnn_layers = {2, 2, 2, 2};
    c.transformer_blocks = {2, 2, 2, 2};
    c.heads = {3, 6, 12, 24};
    c.window = 7;
    c.image_size = 224;
  } else if (name == "hyneter-plus") {
    c.d = 96;
    c.cnn_layers = {2, 2, 3, 2};
    c.transformer_blocks = {2, 2, 6, 2};
    c.heads = {3, 6, 12, 24};
    c.window = 7;
    c.image_size = 224;
  } else if (name == "hyneter-max") {
    c.d = 128;
    c.cnn_layers = {2, 2, 6, 2};
    c.transformer_blocks = {2, 2, 18, 2};
    c.heads = {4, 8, 16, 32};
    c.window = 7;
    c.image_size = 224;
  } else if (name == "hyneter-micro") {
    c.d = 16;
    c.cnn_layers = {1, 1, 1, 1};
    c.transformer_blocks = {1, 1, 1, 1};
    c.heads = {1, 1, 2, 4};
    c.window = 4;
    c.image_size = 32;
  } else {
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    fail("unknown variant '" + name + "'; valid variants: " + valid);
  }
  return c;
}

std::vector<ParamSpec> parameter_manifest(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  const std::size_t d = config.d;
  const std::size_t tokens = config.stage_grid(0) * config.stage_grid(0);
  specs.push_back({"patch_embed.weight", {d, 3, config.patch, config.patch}, ParamInit::kFanIn});
  specs.push_back({"pos_embed", {tokens, d}, ParamInit::kTruncNormal002});
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t c = config.stage_channels(s);
    const std::size_t hidden = config.mlp_hidden(s);
    for (std::size_t b = 0; b < config.transformer_blocks[s]; ++b) {
      const std::string p = block_prefix(s, b);
      specs.push_back({p + ".norm1.gain", {c}, ParamInit::kOnes});
      specs.push_back({p + ".norm1.shift", {c}, ParamInit::kZeros});
      specs.push_back({p + ".attn.qkv.weight", {c, 3 * c}, ParamInit::kTruncNormal002});
      specs.push_back({p + ".attn.qkv.bias", {3 * c}, ParamInit::kZeros});
      specs.push_back({p + ".attn.proj.weight", {c, c}, ParamInit::kTruncNormal002});
      specs.push_back({p + ".attn.proj.bias", {c}, ParamInit::kZeros});
      specs.push_back({p + ".norm2.gain", {c}, ParamInit::kOnes});
      specs.push_back({p + ".norm2.shift", {c}, ParamInit::kZeros});
      specs.push_back({p + ".mlp.fc1.weight", {c, hidden}, ParamInit::kTruncNormal002});
      specs.push_back({p + ".mlp.fc1.bias", {hidden}, ParamInit::kZeros});
      specs.push_back({p + ".mlp.fc2.weight", {hidden, c}, ParamInit::kTruncNormal002});
      specs.push_back({p + ".mlp.fc2.bias", {c}, ParamInit::kZeros});
    }
    if (config.stage_has_conv(s)) {
      for (std::size_t l = 0; l < config.cnn_layers[s]; ++l) {
        const std::string p = conv_prefix(s, l);
        specs.push_back({p + ".k1.weight", {c, c, 1, 1}, ParamInit::kFanIn});
        specs.push_back({p + ".k3.weight", {c, c, 3, 3}, ParamInit::kFanIn});
        specs.push_back({p + ".k5.weight", {c, c, 5, 5}, ParamInit::kFanIn});
      }
    }
    if (s + 1 < kStages) {
      const std::string p = downsample_prefix(s);
      specs.push_back({p + ".weight", {2 * c, c, 2, 2}, ParamInit::kFanIn});
      specs.push_back({p + ".bias", {2 * c}, ParamInit::kZeros});
    }
  }
  const std::size_t top = config.stage_channels(kStages - 1);
  specs.push_back({"head.weight", {top, config.num_classes}, ParamInit::kTruncNormal002});
  specs.push_back({"head.bias", {config.num_classes}, ParamInit::kZeros});
  return specs;
}

std::size_t count_params(const ModelConfig& config, bool include_head) {
  std::size_t total = 0;
  for (const ParamSpec& spec : parameter_manifest(config)) {
    if (!include_head && spec.path.starts_with("head.")) continue;
    total += shape_numel(spec.shape);
  }
  return total;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  const auto specs = parameter_manifest(config_);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Truncated at two standard deviations by resampling.
  auto truncated = [&] {
    for (;;) {
      const double z = normal(rng);
      if (std::abs(z) <= 2.0) return z;
    }
  };
  params_.reserve(specs.size());
  for (const ParamSpec& spec : specs) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case ParamInit::kZeros:
        break;
      case ParamInit::kOnes:
        t.fill(1.0);
        break;
      case ParamInit::kTruncNormal002:
        for (double& v : t.data()) v = 0.02 * truncated();
        break;
      case ParamInit::kFanIn: {
        // std = 1/sqrt(Cin * k * k)
        const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
        const double std_dev = 1.0 / std::sqrt(fan_in);
        for (double& v : t.data()) v = std_dev * truncated();
        break;
      }
    }
    index_.emplace(spec.path, params_.size());
    params_.push_back({spec.path, std::move(t)});
  }
}

const Tensor& Model::parameter(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("model has no parameter '" + path + "'");
  return params_[it->second].value;
}

Tensor& Model::parameter(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("model has no parameter '" + path + "'");
  return params_[it->second].value;
}

Var ParamBinder::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  Var v = tape_.borrow(model_.parameter(path), path, trainable_);
  bound_.emplace(path, v);
  return v;
}

BlockParams ParamBinder::block(const std::string& prefix, std::size_t heads, std::optional<double> delta) {
  auto& self = *this;
  BlockParams p;
  p.norm1_gain = self(prefix + ".norm1.gain");
  p.norm1_shift = self(prefix + ".norm1.shift");
  p.attention.qkv_weight = self(prefix + ".attn.qkv.weight");
  p.attention.qkv_bias = self(prefix + ".attn.qkv.bias");
  p.attention.proj_weight = self(prefix + ".attn.proj.weight");
  p.attention.proj_bias = self(prefix + ".attn.proj.bias");
  p.attention.heads = heads;
  p.attention.delta = delta;
  p.norm2_gain = self(prefix + ".norm2.gain");
  p.norm2_shift = self(prefix + ".norm2.shift");
  p.mlp.fc1_weight = self(prefix + ".mlp.fc1.weight");
  p.mlp.fc1_bias = self(prefix + ".mlp.fc1.bias");
  p.mlp.fc2_weight = self(prefix + ".mlp.fc2.weight");
  p.mlp.fc2_bias = self(prefix + ".mlp.fc2.bias");
  return p;
}

BackboneOutput Model::forward(Tape& tape, const Tensor& images, bool trainable) const {
  const ModelConfig& cfg = config_;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3) fail("forward: images must be [N,3,H,W], got " + shape_str(s));
  if (s[2] != cfg.image_size || s[3] != cfg.image_size) {
    fail("forward: model built for " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
         " inputs, got " + std::to_string(s[2]) + "x" + std::to_string(s[3]));
  }
  ParamBinder bind(tape, *this, trainable);
  const std::optional<double> delta = cfg.scaler_branch ? std::optional<double>(cfg.delta) : std::nullopt;

  BackboneOutput out;
  TokenGrid x = patch_partition(tape.constant(images), cfg.patch, bind("patch_embed.weight"), std::nullopt,
                                bind("pos_embed"));
  for (std::size_t stage = 0; stage < kStages; ++stage) {
    if (stage > 0) {
      const std::string p = downsample_prefix(stage - 1);
      x = flatten(ops::conv2d(re_view(x), bind(p + ".weight"), bind(p + ".bias"), 2, 0));
    }
    if (stage < 2) {
      HnbStageParams params;
      for (std::size_t b = 0; b < cfg.transformer_blocks[stage]; ++b) {
        params.transformer_branch.push_back(bind.block(block_prefix(stage, b), cfg.heads[stage], delta));
      }
      if (cfg.stage_has_conv(stage)) {
        for (std::size_t l = 0; l < cfg.cnn_layers[stage]; ++l) {
          const std::string p = conv_prefix(stage, l);
          params.conv_branch.push_back({bind(p + ".k1.weight"), bind(p + ".k3.weight"), bind(p + ".k5.weight")});
        }
      }
      x = hnb_stage(x, params);
    } else {
      const std::size_t window = cfg.effective_window(stage);
      for (std::size_t b = 0; b < cfg.transformer_blocks[stage]; ++b) {
        x = ds_block(x, bind.block(block_prefix(stage, b), cfg.heads[stage], delta), window, cfg.enable_ds);
      }
    }
    out.stages[stage] = re_view(x);
  }
  Var pooled = ops::mean_tokens(x.tokens);
  out.logits = ops::linear(pooled, bind("head.weight"), bind("head.bias"));
  return out;
}

Model build_variant(const std::string& name, std::uint64_t seed) { return Model(variant_config(name), seed); }

std::size_t count_params(const Model& model, bool include_head) {
  std::size_t total = 0;
  for (const Parameter& p : model.parameters()) {
    if (!include_head && p.path.starts_with("head.")) continue;
    total += p.value.numel();
  }
  return total;
}

}  // namespace hyneter
