#include "hyneter/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "hyneter/backbone.hpp"
#include "hyneter/gradcheck.hpp"
#include "hyneter/harness.hpp"
#include "hyneter/io.hpp"

namespace hyneter {
namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

std::string full_variant_name(const std::string& name) {
  return name.starts_with("hyneter-") ? name : "hyneter-" + name;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v, "%.4f") : std::string("-"); }

// Model selection shared by several subcommands.
struct ModelChoice {
  std::string variant = "micro";
  std::string config_path;
  std::uint64_t seed = 0;

  void add_to(CLI::App* app) {
    app->add_option("--variant,--model", variant, "1.0 | plus | max | micro (or hyneter-*)");
    app->add_option("--config", config_path, "JSON config file (overrides --variant)");
    app->add_option("--seed", seed, "parameter initialisation seed");
  }

  RunConfig resolve() const {
    if (!config_path.empty()) return parse_config_file(config_path);
    RunConfig run;
    run.model = variant_config(full_variant_name(variant));
    return run;
  }
};

int cmd_build(const ModelChoice& choice, std::ostream& out) {
  const RunConfig run = choice.resolve();
  const Model model(run.model, choice.seed);
  out << "config: " << model_config_json(model.config()) << "\n";
  out << "params: " << count_params(model) << "\n";
  out << "backbone_params: " << count_params(model, false) << "\n";
  return 0;
}

int cmd_forward(const ModelChoice& choice, std::size_t batch, std::uint64_t input_seed, std::ostream& out) {
  const RunConfig run = choice.resolve();
  const Model model(run.model, choice.seed);
  const ModelConfig& c = model.config();
  std::mt19937_64 rng(input_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor images(Shape{batch, 3, c.image_size, c.image_size});
  for (double& v : images.data()) v = normal(rng);
  Tape tape;
  const BackboneOutput result = model.forward(tape, images, false);
  bool ok = true;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Shape expected{batch, c.stage_channels(s), c.stage_grid(s), c.stage_grid(s)};
    const Shape& got = result.stages[s].shape();
    const bool match = got == expected && result.stages[s].value().all_finite();
    ok = ok && match;
    out << "stage " << s + 1 << ": " << shape_str(got) << " expected " << shape_str(expected)
        << (match ? " ok" : " MISMATCH") << "\n";
  }
  const Shape logits_expected{batch, c.num_classes};
  const bool logits_ok = result.logits.shape() == logits_expected && result.logits.value().all_finite();
  ok = ok && logits_ok;
  out << "logits: " << shape_str(result.logits.shape()) << (logits_ok ? " ok" : " MISMATCH") << "\n";
  out << "status: " << (ok ? "pass" : "fail") << "\n";
  return ok ? 0 : 1;
}

int cmd_gradcheck(const ModelChoice& choice, std::size_t samples, std::size_t op_seeds, std::ostream& out) {
  bool ok = true;
  double worst = 0.0;
  for (const auto& [name, r] : op_gradcheck_suite(choice.seed, op_seeds)) {
    const bool pass = r.worst <= kOpTolerance;
    ok = ok && pass;
    worst = std::max(worst, r.worst);
    out << "op " << name << ": checked " << r.checked << " worst_relative_error " << fmt(r.worst) << " at "
        << r.worst_label << " (analytic " << fmt(r.worst_analytic, "%.10g") << ", numeric "
        << fmt(r.worst_numeric, "%.10g") << ")" << (pass ? " ok" : " FAIL") << "\n";
  }
  const RunConfig run = choice.resolve();
  Model model(run.model, choice.seed);
  const GradCheckResult r = gradcheck_model(model, samples, choice.seed);
  const bool pass = r.worst <= kModelTolerance;
  ok = ok && pass;
  worst = std::max(worst, r.worst);
  out << "model " << model.config().variant << ": checked " << r.checked << " worst_relative_error " << fmt(r.worst)
      << " at " << r.worst_label << (pass ? " ok" : " FAIL") << "\n";
  out << "worst_relative_error: " << fmt(worst) << "\n";
  out << "status: " << (ok ? "pass" : "fail") << "\n";
  return ok ? 0 : 1;
}

struct DataOptions {
  std::size_t samples = 2000;
  std::uint64_t data_seed = 0;
  void add_to(CLI::App* app) {
    app->add_option("--samples", samples, "synthetic training samples");
    app->add_option("--data-seed", data_seed, "synthetic data seed");
  }
};

struct TrainOverrides {
  std::optional<std::size_t> steps, batch, eval_every;
  std::optional<double> lr, stop_at;
  std::optional<std::string> optimizer, checkpoint;
  std::optional<std::uint64_t> seed;
  void add_to(CLI::App* app) {
    app->add_option("--steps", steps, "optimisation steps");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--optimizer", optimizer, "adamw | sgd")->check(CLI::IsMember({"adamw", "sgd"}));
    app->add_option("--eval-every", eval_every, "evaluate every N steps");
    app->add_option("--checkpoint", checkpoint, "checkpoint written after training");
    app->add_option("--train-seed", seed, "batch order seed");
    app->add_option("--stop-at-accuracy", stop_at, "stop at the first evaluation reaching this total accuracy");
  }
  void apply(TrainConfig& t) const {
    if (steps) t.steps = *steps;
    if (batch) t.batch = *batch;
    if (eval_every) t.eval_every = *eval_every;
    if (lr) t.learning_rate = *lr;
    if (optimizer) t.optimizer = *optimizer == "sgd" ? Optimizer::kSgd : Optimizer::kAdamW;
    if (checkpoint) t.checkpoint_path = *checkpoint;
    if (seed) t.seed = *seed;
    if (stop_at) t.stop_at_accuracy = *stop_at;
  }
};

int cmd_train(const ModelChoice& choice, const DataOptions& data, const TrainOverrides& overrides, std::ostream& out) {
  RunConfig run = choice.resolve();
  overrides.apply(run.train);
  SyntheticConfig sc;
  sc.image_size = run.model.image_size;
  sc.num_classes = run.model.num_classes;
  sc.samples = data.samples;
  const SyntheticTask task = gen_synthetic(sc, data.data_seed);
  Model model(run.model, choice.seed);
  const TrainHistory history = train(model, task, run.train);
  for (const EvalPoint& e : history.evals) {
    out << "step " << e.step << " loss " << fmt(e.loss, "%.6f") << " acc_total " << fmt_opt(e.metrics.total)
        << " acc_small " << fmt_opt(e.metrics.small) << " acc_medium " << fmt_opt(e.metrics.medium) << " acc_large "
        << fmt_opt(e.metrics.large) << "\n";
  }
  if (history.diverged) {
    out << "status: diverged after " << history.step_loss.size() << " steps\n";
    return 1;
  }
  out << "status: ok\n";
  return 0;
}

int cmd_sweep(const ModelChoice& choice, const DataOptions& data, const TrainOverrides& overrides,
              const std::string& factor_text, const std::string& values_text, const std::string& out_path,
              std::size_t test_samples, std::size_t workers, std::ostream& out, std::ostream& err) {
  const Factor factor = parse_factor(factor_text);
  std::vector<double> values;
  for (const auto& item : split_list(values_text)) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw std::invalid_argument("--values: '" + item + "' is not a number");
    }
  }
  if (values.empty()) throw std::invalid_argument("--values: need at least one value");
  const RunConfig run = choice.resolve();
  SweepSetup setup;
  setup.model = run.model;
  setup.train = run.train;
  overrides.apply(setup.train);
  setup.data.samples = data.samples;
  setup.data_seed = data.data_seed;
  setup.model_seed = choice.seed;
  setup.test_samples = test_samples;
  setup.workers = workers;
  const SweepResult result = run_sweep(factor, values, setup);
  if (!out_path.empty()) emit_csv(result.records, out_path);
  out << format_csv(result.records);
  if (result.error) {
    err << "sweep aborted: " << *result.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_params(const std::string& variants_text, std::ostream& out) {
  const auto names = split_list(variants_text);
  if (names.empty()) throw std::invalid_argument("--variants: need at least one variant");
  std::vector<std::size_t> counts;
  for (const auto& name : names) {
    const ModelConfig c = variant_config(full_variant_name(name));
    counts.push_back(count_params(c, false));
    out << c.variant << ": " << counts.back() << " backbone params (" << count_params(c, true) << " with head)\n";
  }
  for (std::size_t i = 1; i < names.size(); ++i) {
    out << "ratio " << full_variant_name(names[i]) << "/" << full_variant_name(names[0]) << ": "
        << fmt(static_cast<double>(counts[i]) / static_cast<double>(counts[0]), "%.4f") << "\n";
  }
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyneter backbone toolkit", "hyneter"};
  app.require_subcommand(1);

  ModelChoice build_model, forward_model, grad_model, train_model, sweep_model;
  auto* build = app.add_subcommand("build", "build a model and print its config and parameter count");
  build_model.add_to(build);

  auto* forward = app.add_subcommand("forward", "run a forward pass on random input and audit stage shapes");
  forward_model.add_to(forward);
  std::size_t batch = 1;
  std::uint64_t input_seed = 0;
  forward->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
  forward->add_option("--input-seed", input_seed, "random input seed");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_model.add_to(grad);
  std::size_t samples = 100, op_seeds = 20;
  grad->add_option("--samples", samples, "model parameters sampled");
  grad->add_option("--op-seeds", op_seeds, "seeds per operation check");

  auto* trn = app.add_subcommand("train", "train on the synthetic size-stratified task");
  train_model.add_to(trn);
  DataOptions train_data;
  train_data.add_to(trn);
  TrainOverrides train_over;
  train_over.add_to(trn);

  auto* swp = app.add_subcommand("sweep", "factor sweep written as CSV");
  sweep_model.add_to(swp);
  DataOptions sweep_data;
  sweep_data.samples = 300;
  sweep_data.add_to(swp);
  TrainOverrides sweep_over;
  sweep_over.add_to(swp);
  std::string factor, values, out_path;
  std::size_t test_samples = 300, workers = 1;
  swp->add_option("--factor", factor, "CL | TB | NT | delta")->required();
  swp->add_option("--values", values, "comma-separated factor values")->required();
  swp->add_option("--out", out_path, "CSV output path");
  swp->add_option("--test-samples", test_samples, "held-out samples for accuracy");
  swp->add_option("--workers", workers, "sweep points trained concurrently");

  auto* params = app.add_subcommand("params", "backbone parameter counts and size ratios");
  std::string variants = "1.0,plus,max";
  params->add_option("--variants", variants, "comma-separated variants; ratios are relative to the first");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (build->parsed()) return cmd_build(build_model, out);
    if (forward->parsed()) return cmd_forward(forward_model, batch, input_seed, out);
    if (grad->parsed()) return cmd_gradcheck(grad_model, samples, op_seeds, out);
    if (trn->parsed()) return cmd_train(train_model, train_data, train_over, out);
    if (swp->parsed()) {
      return cmd_sweep(sweep_model, sweep_data, sweep_over, factor, values, out_path, test_samples, workers, out, err);
    }
    if (params->parsed()) return cmd_params(variants, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace hyneter
