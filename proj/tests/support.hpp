#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hyneter/tape.hpp"
#include "hyneter/tensor.hpp"

namespace testing {

using hyneter::Shape;
using hyneter::Tape;
using hyneter::Tensor;
using hyneter::Var;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * normal(rng);
  return t;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return random_tensor(std::move(shape), rng, scale);
}

// Builds a scalar loss from leaf variables on a fresh tape.
using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdReport {
  double worst = 0.0;
  std::size_t checked = 0;
};

// Central-difference oracle, written independently of the library checker.
// Error per element: |a - n| / max(|a|, |n|, floor).
inline FdReport finite_difference_check(std::vector<Tensor> inputs, const Build& build, double h = 1e-5,
                                        double floor = 1.0) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.parameter("x" + std::to_string(i), inputs[i]));
    auto grads = tape.backward(build(tape, leaves));
    for (std::size_t i = 0; i < inputs.size(); ++i) analytic.push_back(grads.at("x" + std::to_string(i)));
  }
  auto eval = [&] {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
    return build(tape, leaves).value()[0];
  };
  FdReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + h;
      const double up = eval();
      inputs[i][j] = keep - h;
      const double down = eval();
      inputs[i][j] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      report.worst = std::max(report.worst, err);
      ++report.checked;
    }
  }
  return report;
}

// Direct cross-correlation over valid taps only.
inline Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                            std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out(Shape{n, cout, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += w.at({co, ci, ky, kx}) * x.at({b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)});
              }
          if (bias) acc += (*bias)[co];
          out.at({b, co, oy, ox}) = acc;
        }
  return out;
}

inline Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at({i, t}) * b.at({t, j});
      out.at({i, j}) = acc;
    }
  return out;
}

// Physically swaps columns then rows of a label grid, step by step.
inline std::vector<std::size_t> switched_labels(std::size_t h, std::size_t w) {
  std::vector<std::vector<std::size_t>> g(h, std::vector<std::size_t>(w));
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) g[r][c] = r * w + c;
  auto swap_cols = [&](std::size_t a, std::size_t b) {
    for (auto& row : g) std::swap(row[a], row[b]);
  };
  auto swap_rows = [&](std::size_t a, std::size_t b) { std::swap(g[a], g[b]); };
  for (std::size_t j = 0; 2 * j + 1 < w; ++j) swap_cols(2 * j, 2 * j + 1);
  for (std::size_t i = 0; 2 * i + 1 < h; ++i) swap_rows(2 * i, 2 * i + 1);
  for (std::size_t k = 0; 4 * k + 3 < w; ++k) {
    swap_cols(4 * k, 4 * k + 2);
    swap_cols(4 * k + 1, 4 * k + 3);
  }
  for (std::size_t k = 0; 4 * k + 3 < h; ++k) {
    swap_rows(4 * k, 4 * k + 2);
    swap_rows(4 * k + 1, 4 * k + 3);
  }
  std::vector<std::size_t> flat;
  for (const auto& row : g) flat.insert(flat.end(), row.begin(), row.end());
  return flat;  // flat[dst] = src
}

}  // namespace testing
