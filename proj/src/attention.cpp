#include "hyneter/attention.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyneter {
namespace {

using ops::IndexMap;

IndexMap make_map(std::vector<std::size_t> index) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(index));
}

void check_grid(const TokenGrid& grid, const char* where) {
  const Shape& s = grid.tokens.shape();
  if (s.size() != 3 || s[1] != grid.grid_h * grid.grid_w) {
    throw std::invalid_argument(std::string(where) + ": tokens " + shape_str(s) + " inconsistent with grid " +
                                std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w));
  }
}

// Per-window geometry for gmsa. Global mode is a single window covering the grid.
struct Tiling {
  std::size_t win_h, win_w, per_row, per_col;
  std::size_t count() const { return per_row * per_col; }
  std::size_t window_len() const { return win_h * win_w; }
};

Tiling tiling_for(const TokenGrid& x, std::optional<std::size_t> window) {
  if (!window) return {x.grid_h, x.grid_w, 1, 1};
  const std::size_t w = *window;
  if (w == 0 || x.grid_h % w != 0 || x.grid_w % w != 0) {
    throw std::invalid_argument("gmsa: grid " + std::to_string(x.grid_h) + "x" + std::to_string(x.grid_w) +
                                " is not divisible by window " + std::to_string(w));
  }
  return {w, w, x.grid_w / w, x.grid_h / w};
}

// Token index (within one sample) of position t of window `win`.
std::size_t token_of(const Tiling& t, std::size_t grid_w, std::size_t win, std::size_t pos) {
  const std::size_t wy = win / t.per_row, wx = win % t.per_row;
  const std::size_t ty = pos / t.win_w, tx = pos % t.win_w;
  return (wy * t.win_h + ty) * grid_w + wx * t.win_w + tx;
}

}  // namespace

Var re_view(const TokenGrid& grid) {
  check_grid(grid, "re_view");
  const std::size_t n = grid.batch(), len = grid.length(), c = grid.channels();
  std::vector<std::size_t> index(n * len * c);
  std::size_t i = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t l = 0; l < len; ++l) index[i++] = (b * len + l) * c + ch;
    }
  }
  return ops::gather(grid.tokens, make_map(std::move(index)), Shape{n, c, grid.grid_h, grid.grid_w});
}

TokenGrid flatten(const Var& feature_map) {
  const Shape& s = feature_map.shape();
  if (s.size() != 4) throw std::invalid_argument("flatten: expected [N,C,H,W], got " + shape_str(s));
  const std::size_t n = s[0], c = s[1], len = s[2] * s[3];
  std::vector<std::size_t> index(n * len * c);
  std::size_t i = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t ch = 0; ch < c; ++ch) index[i++] = (b * c + ch) * len + l;
    }
  }
  return {ops::gather(feature_map, make_map(std::move(index)), Shape{n, len, c}), s[2], s[3]};
}

TokenGrid patch_partition(const Var& images, std::size_t patch, const Var& embed_weight,
                          const std::optional<Var>& embed_bias, const Var& positional) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw std::invalid_argument("patch_partition: expected [N,3,H,W], got " + shape_str(s));
  if (patch == 0 || s[2] % patch != 0 || s[3] % patch != 0) {
    throw std::invalid_argument("patch_partition: image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " must be divisible by patch size " + std::to_string(patch));
  }
  const Shape& ws = embed_weight.shape();
  if (ws.size() != 4 || ws[2] != patch || ws[3] != patch) {
    throw std::invalid_argument("patch_partition: embed weight " + shape_str(ws) + " does not match patch " +
                                std::to_string(patch));
  }
  TokenGrid grid = flatten(ops::conv2d(images, embed_weight, embed_bias, patch, 0));
  grid.tokens = ops::add_bias(grid.tokens, positional);
  return grid;
}

TokenGrid gmsa(const TokenGrid& x, const AttentionParams& params, std::optional<std::size_t> window) {
  check_grid(x, "gmsa");
  const std::size_t n = x.batch(), len = x.length(), c = x.channels();
  const std::size_t heads = params.heads;
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("gmsa: " + std::to_string(c) + " channels not divisible into " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dh = c / heads;
  const Tiling tiles = tiling_for(x, window);
  const std::size_t wl = tiles.window_len();
  const std::size_t groups = n * tiles.count() * heads;

  Var flat = ops::reshape(x.tokens, Shape{n * len, c});
  Var qkv = ops::linear(flat, params.qkv_weight, params.qkv_bias);

  // Gather q/k/v into [groups, wl, dh]; group = (sample, window, head).
  std::vector<std::size_t> token_index(tiles.count() * wl);
  for (std::size_t win = 0; win < tiles.count(); ++win) {
    for (std::size_t pos = 0; pos < wl; ++pos) token_index[win * wl + pos] = token_of(tiles, x.grid_w, win, pos);
  }
  auto split = [&](std::size_t part) {
    std::vector<std::size_t> index(groups * wl * dh);
    std::size_t i = 0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t win = 0; win < tiles.count(); ++win) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t pos = 0; pos < wl; ++pos) {
            const std::size_t row = b * len + token_index[win * wl + pos];
            for (std::size_t e = 0; e < dh; ++e) index[i++] = row * 3 * c + part * c + h * dh + e;
          }
        }
      }
    }
    return ops::gather(qkv, make_map(std::move(index)), Shape{groups, wl, dh});
  };
  Var q = split(0), k = split(1), v = split(2);

  Var scores = ops::scaled_scores(q, k, params.delta);
  Var attn = ops::softmax_rows(scores);
  Var mixed = ops::bmm(attn, v);

  // Back to [N*L, C].
  std::vector<std::size_t> merge(n * len * c);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t win = 0; win < tiles.count(); ++win) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t group = (b * tiles.count() + win) * heads + h;
        for (std::size_t pos = 0; pos < wl; ++pos) {
          const std::size_t row = b * len + token_index[win * wl + pos];
          for (std::size_t e = 0; e < dh; ++e) merge[row * c + h * dh + e] = (group * wl + pos) * dh + e;
        }
      }
    }
  }
  Var merged = ops::gather(mixed, make_map(std::move(merge)), Shape{n * len, c});
  Var projected = ops::linear(merged, params.proj_weight, params.proj_bias);
  return {ops::reshape(projected, Shape{n, len, c}), x.grid_h, x.grid_w};
}

TokenGrid mlp(const TokenGrid& x, const MlpParams& params) {
  check_grid(x, "mlp");
  const std::size_t n = x.batch(), len = x.length(), c = x.channels();
  Var flat = ops::reshape(x.tokens, Shape{n * len, c});
  Var hidden = ops::gelu(ops::linear(flat, params.fc1_weight, params.fc1_bias));
  Var out = ops::linear(hidden, params.fc2_weight, params.fc2_bias);
  return {ops::reshape(out, Shape{n, len, c}), x.grid_h, x.grid_w};
}

TokenGrid transformer_block(const TokenGrid& x, const BlockParams& params, std::optional<std::size_t> window) {
  TokenGrid normed{ops::layer_norm(x.tokens, params.norm1_gain, params.norm1_shift), x.grid_h, x.grid_w};
  TokenGrid attended = gmsa(normed, params.attention, window);
  TokenGrid mid{ops::add(attended.tokens, x.tokens), x.grid_h, x.grid_w};
  TokenGrid normed2{ops::layer_norm(mid.tokens, params.norm2_gain, params.norm2_shift), x.grid_h, x.grid_w};
  TokenGrid fed = mlp(normed2, params.mlp);
  return {ops::add(fed.tokens, mid.tokens), x.grid_h, x.grid_w};
}

}  // namespace hyneter
