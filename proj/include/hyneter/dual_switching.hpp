#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "hyneter/attention.hpp"

namespace hyneter {

/// Fixed spatial relabeling of an Hg x Wg grid, applied in three steps:
///   1. swap column pairs (2j, 2j+1)
///   2. swap row pairs (2i, 2i+1)
///   3. within each aligned group of four, swap columns (4k, 4k+2) and
///      (4k+1, 4k+3), then the same for rows.
/// A row or column without a complete pair/group stays put for that step,
/// so the map is a bijection for every grid size and never leaves the
/// aligned 4x4 tile of a full tile.
class DsPermutation {
 public:
  DsPermutation(std::size_t grid_h, std::size_t grid_w);

  /// Shared instance per grid shape; built at most once, safe for
  /// concurrent callers.
  static std::shared_ptr<const DsPermutation> for_grid(std::size_t grid_h, std::size_t grid_w);

  std::size_t grid_h() const { return grid_h_; }
  std::size_t grid_w() const { return grid_w_; }
  /// mapping()[src] is the destination of the element at flat position src.
  const std::vector<std::size_t>& mapping() const { return mapping_; }
  /// inverse()[dst] is the source position that lands at dst.
  const std::vector<std::size_t>& inverse() const { return inverse_; }

 private:
  std::size_t grid_h_;
  std::size_t grid_w_;
  std::vector<std::size_t> mapping_;
  std::vector<std::size_t> inverse_;
};

/// Destination of a single row/column index along an axis of `extent`.
std::size_t ds_axis_destination(std::size_t index, std::size_t extent);

/// Applies the permutation to every channel of [N,C,H,W].
Var ds_permute(const Var& feature_map);

/// One DS block: tokens are re-viewed, switched and flattened, then a
/// pre-norm windowed transformer block runs on the result. With
/// `switching` false this is exactly transformer_block.
TokenGrid ds_block(const TokenGrid& x, const BlockParams& params, std::size_t window, bool switching = true);

}  // namespace hyneter
