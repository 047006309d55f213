#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hyneter/harness.hpp"

namespace hyneter {

StratifiedMetrics stratified_metrics(std::span<const int> predictions, std::span<const int> labels,
                                     std::span<const SizeBand> bands) {
  if (predictions.size() != labels.size() || labels.size() != bands.size()) {
    throw std::invalid_argument("stratified_metrics: " + std::to_string(predictions.size()) + " predictions, " +
                                std::to_string(labels.size()) + " labels, " + std::to_string(bands.size()) +
                                " bands");
  }
  std::size_t hits[3] = {0, 0, 0}, counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto b = static_cast<std::size_t>(bands[i]);
    ++counts[b];
    if (predictions[i] == labels[i]) ++hits[b];
  }
  auto rate = [](std::size_t h, std::size_t c) -> std::optional<double> {
    if (c == 0) return std::nullopt;
    return static_cast<double>(h) / static_cast<double>(c);
  };
  StratifiedMetrics m;
  m.total = rate(hits[0] + hits[1] + hits[2], counts[0] + counts[1] + counts[2]);
  m.small = rate(hits[0], counts[0]);
  m.medium = rate(hits[1], counts[1]);
  m.large = rate(hits[2], counts[2]);
  if (m.total && m.small && *m.small > 0.0) m.ratio = *m.total / *m.small;
  return m;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("pearson: length mismatch " + std::to_string(xs.size()) + " vs " +
                                std::to_string(ys.size()));
  }
  if (xs.size() < 2) throw std::invalid_argument("pearson: needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace hyneter
