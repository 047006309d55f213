#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "hyneter/harness.hpp"

namespace hyneter {
namespace {

constexpr std::size_t kMinSide = 3;
constexpr std::size_t kShapeTypes = 4;

struct SideRange {
  std::size_t lo;
  std::size_t hi;
};

// Bounding-box sides s with lower < s*s/area <= upper.
SideRange sides_for(double lower, double upper, std::size_t image_size) {
  const double area = static_cast<double>(image_size * image_size);
  const auto hi = static_cast<std::size_t>(std::floor(std::sqrt(upper * area) + 1e-9));
  auto lo = static_cast<std::size_t>(std::floor(std::sqrt(lower * area) + 1e-9)) + 1;
  if (lower <= 0.0) lo = 1;
  return {std::max(lo, kMinSide), std::min(hi, image_size)};
}

bool shape_pixel(int label, std::size_t side, std::size_t y, std::size_t x) {
  const long s = static_cast<long>(side);
  const long cy = 2 * static_cast<long>(y) - (s - 1);
  const long cx = 2 * static_cast<long>(x) - (s - 1);
  switch (label) {
    case 0:
      return true;
    case 1: {
      const long arm = std::max<long>(1, s / 3);
      return std::abs(cy) <= arm || std::abs(cx) <= arm;
    }
    case 2: {
      const std::size_t border = std::max<std::size_t>(1, side / 5);
      return y < border || y >= side - border || x < border || x >= side - border;
    }
    default:
      return cy * cy + cx * cx <= s * s;
  }
}

}  // namespace

void SyntheticConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("synthetic: image_size must be >= 16");
  if (num_classes == 0 || num_classes > kShapeTypes) {
    throw std::invalid_argument("synthetic: num_classes must be in [1, " + std::to_string(kShapeTypes) + "]");
  }
  if (samples == 0) throw std::invalid_argument("synthetic: samples must be positive");
  if (!(small_max > 0.0 && small_max < medium_max && medium_max < large_max)) {
    throw std::invalid_argument("synthetic: band thresholds must satisfy 0 < small_max < medium_max < large_max");
  }
  if (large_max > 1.0) throw std::invalid_argument("synthetic: large band exceeds the image area");
  const SideRange bands[] = {sides_for(0.0, small_max, image_size), sides_for(small_max, medium_max, image_size),
                             sides_for(medium_max, large_max, image_size)};
  const char* names[] = {"small", "medium", "large"};
  for (int b = 0; b < 3; ++b) {
    if (bands[b].lo > bands[b].hi) {
      throw std::invalid_argument(std::string("synthetic: ") + names[b] + " band admits no shape of side >= " +
                                  std::to_string(kMinSide) + " at image size " + std::to_string(image_size));
    }
  }
}

Tensor SyntheticTask::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = 3 * config.image_size * config.image_size;
  Tensor out(Shape{indices.size(), 3, config.image_size, config.image_size});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("synthetic batch index out of range");
    std::copy_n(images.data().begin() + static_cast<long>(indices[i] * per), per,
                out.data().begin() + static_cast<long>(i * per));
  }
  return out;
}

SyntheticTask gen_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = config.samples, size = config.image_size;
  const SideRange ranges[] = {sides_for(0.0, config.small_max, size), sides_for(config.small_max, config.medium_max, size),
                              sides_for(config.medium_max, config.large_max, size)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  SyntheticTask task;
  task.config = config;
  task.seed = seed;
  task.images = Tensor(Shape{n, 3, size, size});
  task.labels.resize(n);
  task.bands.resize(n);
  task.box_sides.resize(n);
  const std::size_t plane = size * size;
  for (std::size_t slot = 0; slot < n; ++slot) {
    const std::size_t i = order[slot];
    const auto band = static_cast<SizeBand>(slot % 3);
    const int label = static_cast<int>((slot / 3) % config.num_classes);
    const SideRange r = ranges[static_cast<int>(band)];
    const std::size_t side = r.lo + static_cast<std::size_t>(unit(rng) * static_cast<double>(r.hi - r.lo + 1)) % (r.hi - r.lo + 1);
    task.labels[i] = label;
    task.bands[i] = band;
    task.box_sides[i] = side;

    double* img = task.images.data().data() + i * 3 * plane;
    const double amp = 0.15 * unit(rng);
    const double fy = 0.1 + 0.3 * unit(rng), fx = 0.1 + 0.3 * unit(rng);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double phase = 6.283185307179586 * unit(rng);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          img[ch * plane + y * size + x] =
              amp * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase) + noise(rng);
        }
      }
    }
    double colour[3];
    for (double& c : colour) c = 0.6 + 0.4 * unit(rng);
    const std::size_t top = static_cast<std::size_t>(unit(rng) * static_cast<double>(size - side + 1)) % (size - side + 1);
    const std::size_t left = static_cast<std::size_t>(unit(rng) * static_cast<double>(size - side + 1)) % (size - side + 1);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        if (!shape_pixel(label, side, y, x)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + (top + y) * size + left + x] = colour[ch];
      }
    }
  }
  return task;
}

}  // namespace hyneter
