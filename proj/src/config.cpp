#include <fstream>
#include <set>
#include <sstream>

#include "hyneter/io.hpp"
#include "json.hpp"

namespace hyneter {
namespace {

using nlohmann::json;

const std::set<std::string> kModelKeys{"variant",   "d",         "cnn_layers",    "transformer_blocks",
                                       "heads",     "patch",     "window",        "image_size",
                                       "delta",     "scaler_branch", "enable_hnb", "enable_ds",
                                       "mlp_ratio", "num_classes", "train"};
const std::set<std::string> kTrainKeys{"optimizer", "learning_rate", "weight_decay", "momentum", "steps",
                                       "batch",     "seed",          "eval_every",   "checkpoint",   "stop_at_accuracy"};

[[noreturn]] void bad(const std::string& message) { throw ConfigError("config: " + message); }

std::size_t get_count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 0) bad("key '" + path + "' must be a non-negative integer");
  return j.get<std::size_t>();
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) bad("key '" + path + "' must be a number");
  return j.get<double>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) bad("key '" + path + "' must be true or false");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) bad("key '" + path + "' must be a string");
  return j.get<std::string>();
}

StageCounts get_counts(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != kStages) bad("key '" + path + "' must be an array of 4 non-negative integers");
  StageCounts out{};
  for (std::size_t i = 0; i < kStages; ++i) out[i] = get_count(j[i], path + "[" + std::to_string(i) + "]");
  return out;
}

TrainConfig parse_train(const json& j) {
  if (!j.is_object()) bad("key 'train' must be an object");
  TrainConfig t;
  for (const auto& [key, value] : j.items()) {
    const std::string path = "train." + key;
    if (!kTrainKeys.contains(key)) bad("unknown key '" + path + "'");
    if (key == "optimizer") {
      const std::string name = get_string(value, path);
      if (name == "sgd") {
        t.optimizer = Optimizer::kSgd;
      } else if (name == "adamw") {
        t.optimizer = Optimizer::kAdamW;
      } else {
        bad("key '" + path + "' must be \"sgd\" or \"adamw\", got \"" + name + "\"");
      }
    } else if (key == "learning_rate") {
      t.learning_rate = get_number(value, path);
    } else if (key == "weight_decay") {
      t.weight_decay = get_number(value, path);
    } else if (key == "momentum") {
      t.momentum = get_number(value, path);
    } else if (key == "steps") {
      t.steps = get_count(value, path);
    } else if (key == "batch") {
      t.batch = get_count(value, path);
    } else if (key == "seed") {
      t.seed = get_count(value, path);
    } else if (key == "eval_every") {
      t.eval_every = get_count(value, path);
    } else if (key == "checkpoint") {
      t.checkpoint_path = get_string(value, path);
    } else if (key == "stop_at_accuracy") {
      t.stop_at_accuracy = get_number(value, path);
    }
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return t;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("top level must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kModelKeys.contains(key)) bad("unknown key '" + key + "'");
  }

  RunConfig run;
  if (j.contains("variant")) {
    try {
      run.model = variant_config(get_string(j["variant"], "variant"));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      bad(std::string("key 'variant': ") + e.what());
    }
  } else {
    for (const char* key : {"d", "cnn_layers", "transformer_blocks"}) {
      if (!j.contains(key)) bad(std::string("missing required key '") + key + "' (or set 'variant')");
    }
  }

  ModelConfig& m = run.model;
  if (j.contains("d")) m.d = get_count(j["d"], "d");
  if (j.contains("cnn_layers")) m.cnn_layers = get_counts(j["cnn_layers"], "cnn_layers");
  if (j.contains("transformer_blocks")) m.transformer_blocks = get_counts(j["transformer_blocks"], "transformer_blocks");
  if (j.contains("heads")) {
    m.heads = get_counts(j["heads"], "heads");
  } else if (j.contains("d")) {
    for (std::size_t s = 0; s < kStages; ++s) m.heads[s] = std::max<std::size_t>(1, m.stage_channels(s) / 32);
  }
  if (j.contains("patch")) m.patch = get_count(j["patch"], "patch");
  if (j.contains("window")) m.window = get_count(j["window"], "window");
  if (j.contains("image_size")) m.image_size = get_count(j["image_size"], "image_size");
  if (j.contains("delta")) m.delta = get_number(j["delta"], "delta");
  if (j.contains("scaler_branch")) m.scaler_branch = get_bool(j["scaler_branch"], "scaler_branch");
  if (j.contains("enable_hnb")) m.enable_hnb = get_bool(j["enable_hnb"], "enable_hnb");
  if (j.contains("enable_ds")) m.enable_ds = get_bool(j["enable_ds"], "enable_ds");
  if (j.contains("mlp_ratio")) m.mlp_ratio = get_number(j["mlp_ratio"], "mlp_ratio");
  if (j.contains("num_classes")) m.num_classes = get_count(j["num_classes"], "num_classes");
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("train")) run.train = parse_train(j["train"]);
  return run;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_reference() {
  return R"(key                       type          default (hyneter-micro base)
variant                   string        - (hyneter-1.0 | hyneter-plus | hyneter-max | hyneter-micro)
d                         int           16 (stage channels d, 2d, 4d, 8d)
cnn_layers                int[4]        [1,1,1,1] (conv layers used in stages 1-2)
transformer_blocks        int[4]        [1,1,1,1]
heads                     int[4]        [1,1,2,4] (derived max(1, C/32) when d is given)
patch                     int           4
window                    int           4 (7 for the full-size variants)
image_size                int           32 (224 for the full-size variants)
delta                     number        1.0
scaler_branch             bool          true
enable_hnb                bool          true
enable_ds                 bool          true
mlp_ratio                 number        4.0
num_classes               int           3
train.optimizer           string        "adamw" ("sgd" | "adamw")
train.learning_rate       number        0.001
train.weight_decay        number        0.0001
train.momentum            number        0.9 (sgd only)
train.steps               int           500
train.batch               int           16
train.seed                int           0
train.eval_every          int           0 (evaluate only at start and end)
train.checkpoint          string        "" (no checkpoint)
train.stop_at_accuracy    number        unset (stop at the first evaluation reaching it)
)";
}

std::string model_config_json(const ModelConfig& c) {
  json j;
  j["variant"] = c.variant;
  j["d"] = c.d;
  j["cnn_layers"] = c.cnn_layers;
  j["transformer_blocks"] = c.transformer_blocks;
  j["heads"] = c.heads;
  j["patch"] = c.patch;
  j["window"] = c.window;
  j["image_size"] = c.image_size;
  j["delta"] = c.delta;
  j["scaler_branch"] = c.scaler_branch;
  j["enable_hnb"] = c.enable_hnb;
  j["enable_ds"] = c.enable_ds;
  j["mlp_ratio"] = c.mlp_ratio;
  j["num_classes"] = c.num_classes;
  return j.dump();
}

}  // namespace hyneter
