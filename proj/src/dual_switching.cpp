#include "hyneter/dual_switching.hpp"

#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace hyneter {

std::size_t ds_axis_destination(std::size_t index, std::size_t extent) {
  // Step 1/2: adjacent pair swap, only when the pair is complete.
  if ((index | 1) < extent) index ^= 1;
  // Step 3: interlaced swap inside a complete aligned group of four.
  if ((index / 4) * 4 + 3 < extent) index ^= 2;
  return index;
}

DsPermutation::DsPermutation(std::size_t grid_h, std::size_t grid_w)
    : grid_h_(grid_h), grid_w_(grid_w), mapping_(grid_h * grid_w), inverse_(grid_h * grid_w) {
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("DsPermutation: empty grid");
  // Rows and columns move independently, so the column step followed by the
  // row step reduces to one destination per axis.
  for (std::size_t r = 0; r < grid_h; ++r) {
    const std::size_t dr = ds_axis_destination(r, grid_h);
    for (std::size_t c = 0; c < grid_w; ++c) {
      const std::size_t src = r * grid_w + c;
      const std::size_t dst = dr * grid_w + ds_axis_destination(c, grid_w);
      mapping_[src] = dst;
      inverse_[dst] = src;
    }
  }
}

std::shared_ptr<const DsPermutation> DsPermutation::for_grid(std::size_t grid_h, std::size_t grid_w) {
  static std::mutex guard;
  static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const DsPermutation>> cache;
  std::lock_guard lock(guard);
  auto& slot = cache[{grid_h, grid_w}];
  if (!slot) slot = std::make_shared<const DsPermutation>(grid_h, grid_w);
  return slot;
}

Var ds_permute(const Var& feature_map) {
  const Shape& s = feature_map.shape();
  if (s.size() != 4) throw std::invalid_argument("ds_permute: expected [N,C,H,W], got " + shape_str(s));
  const auto perm = DsPermutation::for_grid(s[2], s[3]);
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
  std::vector<std::size_t> index(planes * area);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t dst = 0; dst < area; ++dst) index[p * area + dst] = p * area + perm->inverse()[dst];
  }
  return ops::gather(feature_map, std::make_shared<const std::vector<std::size_t>>(std::move(index)), s);
}

TokenGrid ds_block(const TokenGrid& x, const BlockParams& params, std::size_t window, bool switching) {
  if (!switching) return transformer_block(x, params, window);
  TokenGrid switched = flatten(ds_permute(re_view(x)));
  return transformer_block(switched, params, window);
}

}  // namespace hyneter
