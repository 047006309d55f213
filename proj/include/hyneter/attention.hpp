#pragma once

#include <cstddef>
#include <optional>

#include "hyneter/ops.hpp"
#include "hyneter/tape.hpp"

namespace hyneter {

/// Token sequence [N, L, C] together with the spatial grid it came from.
/// Token l sits at row l / grid_w, column l % grid_w.
struct TokenGrid {
  Var tokens;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t batch() const { return tokens.shape()[0]; }
  std::size_t length() const { return tokens.shape()[1]; }
  std::size_t channels() const { return tokens.shape()[2]; }
};

/// [N,L,C] -> [N,C,Hg,Wg]. Pure layout permutation.
Var re_view(const TokenGrid& grid);
/// [N,C,H,W] -> tokens [N,H*W,C] with grid (H,W).
TokenGrid flatten(const Var& feature_map);

/// Learned patch embedding (stride = kernel = patch) plus an absolute
/// positional embedding [L,C]. H and W must be multiples of `patch`.
TokenGrid patch_partition(const Var& images, std::size_t patch, const Var& embed_weight,
                          const std::optional<Var>& embed_bias, const Var& positional);

/// Packed projections: qkv maps C -> 3C laid out as [q | k | v], each split
/// into `heads` contiguous slices of head_dim = C / heads.
struct AttentionParams {
  Var qkv_weight;   // [C, 3C]
  Var qkv_bias;     // [3C]
  Var proj_weight;  // [C, C]
  Var proj_bias;    // [C]
  std::size_t heads = 1;
  /// Off-diagonal logit scaler; nullopt removes the branch altogether.
  std::optional<double> delta = 1.0;
};

/// Multi-head self-attention over the token grid. Without a window every
/// token attends to all L tokens; with one, the grid is tiled into
/// window x window blocks that attend independently.
TokenGrid gmsa(const TokenGrid& x, const AttentionParams& params, std::optional<std::size_t> window);

struct MlpParams {
  Var fc1_weight;  // [C, hidden]
  Var fc1_bias;
  Var fc2_weight;  // [hidden, C]
  Var fc2_bias;
};

/// Two-layer perceptron with GELU applied per token.
TokenGrid mlp(const TokenGrid& x, const MlpParams& params);

struct BlockParams {
  Var norm1_gain;
  Var norm1_shift;
  AttentionParams attention;
  Var norm2_gain;
  Var norm2_shift;
  MlpParams mlp;
};

/// Pre-norm transformer block: x + GMSA(LN(x)), then x + MLP(LN(x)).
TokenGrid transformer_block(const TokenGrid& x, const BlockParams& params, std::optional<std::size_t> window);

}  // namespace hyneter
