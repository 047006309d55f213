#include "hyneter/hnb.hpp"

#include <stdexcept>
#include <string>

namespace hyneter {
namespace {

void check_kernel(const Var& w, std::size_t k, const char* name) {
  const Shape& s = w.shape();
  if (s.size() != 4 || s[2] != k || s[3] != k) {
    throw std::invalid_argument(std::string("multi_granularity_conv: ") + name + " must be [Cout,Cin," +
                                std::to_string(k) + "," + std::to_string(k) + "], got " + shape_str(s));
  }
}

}  // namespace

Var multi_granularity_conv(const Var& feature_map, const ConvTriple& layer) {
  check_kernel(layer.k1, 1, "k1");
  check_kernel(layer.k3, 3, "k3");
  check_kernel(layer.k5, 5, "k5");
  if (layer.k1.shape()[0] != layer.k3.shape()[0] || layer.k1.shape()[0] != layer.k5.shape()[0]) {
    throw std::invalid_argument("multi_granularity_conv: kernels disagree on output channels: " +
                                shape_str(layer.k1.shape()) + ", " + shape_str(layer.k3.shape()) + ", " +
                                shape_str(layer.k5.shape()));
  }
  Var a = ops::conv2d(feature_map, layer.k1, std::nullopt, 1, 0);
  Var b = ops::conv2d(feature_map, layer.k3, std::nullopt, 1, 1);
  Var c = ops::conv2d(feature_map, layer.k5, std::nullopt, 1, 2);
  return ops::add(ops::add(a, b), c);
}

Var conv_branch(const Var& feature_map, const std::vector<ConvTriple>& layers) {
  Var x = feature_map;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0) x = ops::gelu(x);
    x = multi_granularity_conv(x, layers[i]);
  }
  return x;
}

Var hnb_fuse(const Var& x, const Var& s1) {
  if (x.shape() != s1.shape()) {
    throw std::invalid_argument("hnb_fuse: transformer map " + shape_str(x.shape()) + " vs conv map " +
                                shape_str(s1.shape()));
  }
  return ops::add(x, ops::tanh(ops::mul(x, s1)));
}

TokenGrid hnb_stage(const TokenGrid& input, const HnbStageParams& params) {
  TokenGrid x = input;
  for (const BlockParams& block : params.transformer_branch) x = transformer_block(x, block, std::nullopt);
  if (params.conv_branch.empty()) return x;
  Var transformer_map = re_view(x);
  Var local_map = conv_branch(re_view(input), params.conv_branch);
  if (local_map.shape() != transformer_map.shape()) {
    throw std::invalid_argument("hnb_stage: conv branch output " + shape_str(local_map.shape()) +
                                " does not match transformer branch " + shape_str(transformer_map.shape()));
  }
  return flatten(hnb_fuse(transformer_map, local_map));
}

}  // namespace hyneter
