#pragma once

#include <vector>

#include "hyneter/attention.hpp"

namespace hyneter {

/// One multi-granularity layer: parallel 1x1, 3x3 and 5x5 kernels with
/// same-size padding, no bias.
struct ConvTriple {
  Var k1;  // [Cout, Cin, 1, 1]
  Var k3;  // [Cout, Cin, 3, 3]
  Var k5;  // [Cout, Cin, 5, 5]
};

struct HnbStageParams {
  std::vector<ConvTriple> conv_branch;
  std::vector<BlockParams> transformer_branch;
};

/// Sum of the three kernel responses; output keeps the input's spatial size.
Var multi_granularity_conv(const Var& feature_map, const ConvTriple& layer);

/// Stacked multi-granularity layers with GELU between consecutive layers.
Var conv_branch(const Var& feature_map, const std::vector<ConvTriple>& layers);

/// Fusion step on same-shaped maps: x + tanh(x * s1), elementwise.
Var hnb_fuse(const Var& x, const Var& s1);

/// One HNB stage. The transformer branch runs global attention over S; the
/// conv branch reads the re-viewed stage input S. With an empty conv branch
/// the stage is a plain transformer stage.
TokenGrid hnb_stage(const TokenGrid& input, const HnbStageParams& params);

}  // namespace hyneter
