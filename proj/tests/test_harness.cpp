#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hyneter/harness.hpp"
#include "support.hpp"

using namespace hyneter;

namespace {

SyntheticConfig small_data(std::size_t samples) {
  SyntheticConfig d;
  d.samples = samples;
  return d;
}

// Pairwise form: r = sum_{i<j} dx dy / sqrt(sum dx^2 * sum dy^2).
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      sxy += dx * dy;
      sxx += dx * dx;
      syy += dy * dy;
    }
  }
  return sxy / std::sqrt(sxx * syy);
}

SweepSetup quick_setup() {
  SweepSetup s;
  s.train.steps = 3;
  s.train.batch = 4;
  s.data = small_data(60);
  s.test_samples = 30;
  return s;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("synthetic task is a pure function of config and seed") {
  const SyntheticTask a = gen_synthetic(small_data(90), 4), b = gen_synthetic(small_data(90), 4);
  const SyntheticTask c = gen_synthetic(small_data(90), 5);
  CHECK(bit_equal(a.images, b.images));
  CHECK(a.labels == b.labels);
  CHECK(a.bands == b.bands);
  CHECK_FALSE(bit_equal(a.images, c.images));
  CHECK(a.images.shape() == Shape{90, 3, 32, 32});
}

TEST_CASE("bands and classes are balanced and box sizes respect the thresholds") {
  const SyntheticConfig cfg = small_data(300);
  const SyntheticTask t = gen_synthetic(cfg, 1);
  std::size_t band_count[3] = {0, 0, 0};
  std::size_t class_in_band[3][3] = {};
  const double area = static_cast<double>(cfg.image_size * cfg.image_size);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto b = static_cast<std::size_t>(t.bands[i]);
    ++band_count[b];
    ++class_in_band[b][t.labels[i]];
    const double frac = static_cast<double>(t.box_sides[i] * t.box_sides[i]) / area;
    const double lo[3] = {0.0, cfg.small_max, cfg.medium_max};
    const double hi[3] = {cfg.small_max, cfg.medium_max, cfg.large_max};
    CHECK(frac > lo[b]);
    CHECK(frac <= hi[b]);
  }
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(band_count[b] >= 80);
    for (std::size_t k = 0; k < 3; ++k) CHECK(class_in_band[b][k] >= 30);
  }
}

TEST_CASE("a single class task labels everything 0") {
  SyntheticConfig cfg = small_data(12);
  cfg.num_classes = 1;
  const SyntheticTask t = gen_synthetic(cfg, 2);
  for (int label : t.labels) CHECK(label == 0);
}

TEST_CASE("synthetic config rejects bad thresholds") {
  SyntheticConfig cfg = small_data(12);
  cfg.medium_max = 0.01;
  CHECK_THROWS_AS(gen_synthetic(cfg, 0), std::invalid_argument);
}

TEST_CASE("pearson: hand cases and a pairwise oracle") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> up{2, 4, 6, 8}, down{8, 6, 4, 2}, flat{5, 5, 5, 5};
  CHECK(*pearson(x, up) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(*pearson(x, down) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n : {2, 3, 5, 10, 40}) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = normal(rng);
      b[i] = 0.3 * a[i] + normal(rng);
    }
    CHECK(std::abs(*pearson(a, b) - pearson_oracle(a, b)) <= 1e-12);
  }
}

TEST_CASE("stratified metrics per band and the ratio rule") {
  const std::vector<SizeBand> bands{SizeBand::kSmall, SizeBand::kSmall,  SizeBand::kMedium,
                                    SizeBand::kMedium, SizeBand::kLarge, SizeBand::kLarge};
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const std::vector<int> preds{0, 2, 2, 0, 0, 2};
  const StratifiedMetrics m = stratified_metrics(preds, labels, bands);
  CHECK(*m.total == doctest::Approx(4.0 / 6.0));
  CHECK(*m.small == 0.5);
  CHECK(*m.medium == 1.0);
  CHECK(*m.large == 0.5);
  CHECK(*m.ratio == doctest::Approx(4.0 / 3.0));

  const std::vector<int> miss_small{1, 0, 2, 0, 1, 2};
  const StratifiedMetrics z = stratified_metrics(miss_small, labels, bands);
  CHECK(*z.small == 0.0);
  CHECK_FALSE(z.ratio.has_value());

  const std::vector<SizeBand> no_small{SizeBand::kLarge, SizeBand::kMedium};
  const StratifiedMetrics e = stratified_metrics(std::vector<int>{0, 1}, std::vector<int>{0, 0}, no_small);
  CHECK_FALSE(e.small.has_value());
  CHECK_FALSE(e.ratio.has_value());
  CHECK(*e.total == 0.5);
}

TEST_CASE("training is bit-reproducible and a zero learning rate changes nothing") {
  const SyntheticTask task = gen_synthetic(small_data(30), 3);
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch = 4;
  cfg.eval_every = 2;
  Model a = build_variant("hyneter-micro", 1), b = build_variant("hyneter-micro", 1);
  const TrainHistory ha = train(a, task, cfg), hb = train(b, task, cfg);
  CHECK(ha.step_loss == hb.step_loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(bit_equal(a.parameters()[i].value, b.parameters()[i].value));

  cfg.learning_rate = 0.0;
  Model frozen = build_variant("hyneter-micro", 1);
  const Model before = frozen;
  const TrainHistory hf = train(frozen, task, cfg);
  for (std::size_t i = 0; i < frozen.parameters().size(); ++i) {
    CHECK(bit_equal(frozen.parameters()[i].value, before.parameters()[i].value));
  }
  REQUIRE(hf.evals.size() >= 2);
  for (const EvalPoint& p : hf.evals) CHECK(p.loss == hf.evals.front().loss);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.stop_at_accuracy = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("factor application") {
  const ModelConfig base = variant_config("hyneter-micro");
  CHECK(apply_factor(base, Factor::kCL, 2).cnn_layers == StageCounts{2, 2, 2, 2});
  CHECK(apply_factor(base, Factor::kTB, 3).transformer_blocks == StageCounts{3, 3, 3, 3});
  CHECK(apply_factor(base, Factor::kNT, 256).patch == 2);
  CHECK(apply_factor(base, Factor::kDelta, 1.25).delta == 1.25);
  CHECK_THROWS_AS(apply_factor(base, Factor::kNT, 7), std::invalid_argument);
  CHECK_THROWS_AS(apply_factor(base, Factor::kNT, 16), std::invalid_argument);
  CHECK_THROWS_AS(apply_factor(base, Factor::kTB, 1.5), std::invalid_argument);
  CHECK(parse_factor("TB") == Factor::kTB);
  CHECK_THROWS_WITH_AS(parse_factor("XX"), doctest::Contains("CL, TB, NT, delta"), std::invalid_argument);
}

TEST_CASE("delta sweep keeps the parameter count; TB sweep grows it") {
  const SweepResult d = run_sweep(Factor::kDelta, {1.5, 0.5, 1.0}, quick_setup());
  REQUIRE_FALSE(d.error.has_value());
  REQUIRE(d.records.size() == 3);
  CHECK(d.records[0].value == 0.5);
  CHECK(d.records[2].value == 1.5);
  for (const SweepRecord& r : d.records) CHECK(r.param_count == d.records[0].param_count);

  const SweepResult tb = run_sweep(Factor::kTB, {1, 2, 3}, quick_setup());
  REQUIRE(tb.records.size() == 3);
  CHECK(tb.records[0].param_count < tb.records[1].param_count);
  CHECK(tb.records[1].param_count < tb.records[2].param_count);
}

TEST_CASE("a one-point sweep equals training and evaluating directly") {
  const SweepSetup setup = quick_setup();
  const SweepResult sweep = run_sweep(Factor::kCL, {2}, setup);
  REQUIRE(sweep.records.size() == 1);

  ModelConfig mc = variant_config("hyneter-micro");
  mc.cnn_layers = {2, 2, 2, 2};
  Model model(mc, setup.model_seed);
  const TrainHistory h = train(model, gen_synthetic(setup.data, setup.data_seed), setup.train);
  SyntheticConfig held = setup.data;
  held.samples = setup.test_samples;
  const EvalResult test = evaluate(model, gen_synthetic(held, setup.data_seed + 1));
  const SweepRecord& r = sweep.records[0];
  CHECK(r.final_loss == h.evals.back().loss);
  CHECK(r.acc_total == test.metrics.total);
  CHECK(r.acc_small == test.metrics.small);
  CHECK(r.param_count == count_params(model));
}

TEST_CASE("parallel sweep workers give the same records") {
  SweepSetup setup = quick_setup();
  const SweepResult serial = run_sweep(Factor::kDelta, {0.5, 2.0}, setup);
  setup.workers = 2;
  const SweepResult parallel = run_sweep(Factor::kDelta, {0.5, 2.0}, setup);
  CHECK(serial.records == parallel.records);
}

TEST_CASE("a failing sweep point reports the error and keeps earlier records") {
  const SweepResult r = run_sweep(Factor::kNT, {64, 7}, quick_setup());
  REQUIRE(r.error.has_value());
  CHECK(r.error->find("NT value 7") != std::string::npos);
  CHECK(r.records.empty());
}

}  // TEST_SUITE
