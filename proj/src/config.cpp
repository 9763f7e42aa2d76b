#include "nerv360/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace nerv360 {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json to_json(const ViewportSpec& v) {
  return {{"hfov", v.hfov}, {"out_h", v.out_h}, {"out_w", v.out_w}};
}

ViewportSpec viewport_from_json(const json& j) {
  reject_unknown(j, {"hfov", "hfov_deg", "out_h", "out_w"}, "train.viewport");
  ViewportSpec v;
  if (j.contains("hfov") && j.contains("hfov_deg")) {
    throw ConfigError("train.viewport: give either hfov or hfov_deg, not both");
  }
  double deg = radians_to_degrees(v.hfov);
  read(j, "hfov_deg", deg, "train.viewport");
  v.hfov = degrees_to_radians(deg);
  read(j, "hfov", v.hfov, "train.viewport");
  read(j, "out_h", v.out_h, "train.viewport");
  read(j, "out_w", v.out_w, "train.viewport");
  return v;
}

const char* to_string(FrequencyMode m) {
  return m == FrequencyMode::magnitude ? "magnitude" : "complex_parts";
}

const char* to_string(Precision p) { return p == Precision::mixed ? "mixed" : "full"; }

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"strides", c.strides},
          {"c1", c.c1},
          {"d", c.d},
          {"c2", c.c2},
          {"reduction", c.reduction},
          {"pe", {{"base", c.pe.base}, {"levels", c.pe.levels}}},
          {"generator_hidden", c.generator_hidden},
          {"param_target", c.param_target},
          {"min_channels", c.min_channels},
          {"expand_before_extract", c.expand_before_extract},
          {"stat_view_inputs", c.stat_view_inputs}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"warmup_frac", c.warmup_frac},
          {"seed", c.seed},
          {"precision", to_string(c.precision)},
          {"viewport", to_json(c.viewport)},
          {"loss",
           {{"lambda", c.loss.lambda},
            {"alpha", c.loss.alpha},
            {"frequency", to_string(c.loss.frequency)}}},
          {"adan",
           {{"beta1", c.adan.beta1},
            {"beta2", c.adan.beta2},
            {"beta3", c.adan.beta3},
            {"eps", c.adan.eps},
            {"weight_decay", c.adan.weight_decay}}},
          {"checkpoint_every", c.checkpoint_every}};
}

json to_json(const RunConfig& c) {
  return {{"version", kConfigVersion}, {"model", to_json(c.model)}, {"train", to_json(c.train)}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string w = "model";
  reject_unknown(j,
                 {"strides", "c1", "d", "c2", "reduction", "pe", "generator_hidden", "param_target",
                  "min_channels", "expand_before_extract", "stat_view_inputs"},
                 w);
  ModelConfig c;
  read(j, "strides", c.strides, w);
  read(j, "c1", c.c1, w);
  read(j, "d", c.d, w);
  read(j, "c2", c.c2, w);
  read(j, "reduction", c.reduction, w);
  if (auto it = j.find("pe"); it != j.end()) {
    reject_unknown(*it, {"base", "levels"}, "model.pe");
    read(*it, "base", c.pe.base, "model.pe");
    read(*it, "levels", c.pe.levels, "model.pe");
  }
  read(j, "generator_hidden", c.generator_hidden, w);
  read(j, "param_target", c.param_target, w);
  read(j, "min_channels", c.min_channels, w);
  read(j, "expand_before_extract", c.expand_before_extract, w);
  read(j, "stat_view_inputs", c.stat_view_inputs, w);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  const std::string w = "train";
  reject_unknown(j,
                 {"epochs", "batch_size", "base_lr", "warmup_frac", "seed", "precision", "viewport",
                  "loss", "adan", "checkpoint_every"},
                 w);
  TrainConfig c;
  read(j, "epochs", c.epochs, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "base_lr", c.base_lr, w);
  read(j, "warmup_frac", c.warmup_frac, w);
  read(j, "seed", c.seed, w);
  std::string precision = to_string(c.precision);
  read(j, "precision", precision, w);
  if (precision == "full") {
    c.precision = Precision::full;
  } else if (precision == "mixed") {
    c.precision = Precision::mixed;
  } else {
    throw ConfigError("train.precision: expected 'full' or 'mixed', got '" + precision + "'");
  }
  if (auto it = j.find("viewport"); it != j.end()) c.viewport = viewport_from_json(*it);
  if (auto it = j.find("loss"); it != j.end()) {
    reject_unknown(*it, {"lambda", "alpha", "frequency"}, "train.loss");
    read(*it, "lambda", c.loss.lambda, "train.loss");
    read(*it, "alpha", c.loss.alpha, "train.loss");
    std::string mode = to_string(c.loss.frequency);
    read(*it, "frequency", mode, "train.loss");
    if (mode == "complex_parts") {
      c.loss.frequency = FrequencyMode::complex_parts;
    } else if (mode == "magnitude") {
      c.loss.frequency = FrequencyMode::magnitude;
    } else {
      throw ConfigError("train.loss.frequency: unknown mode '" + mode + "'");
    }
  }
  if (auto it = j.find("adan"); it != j.end()) {
    reject_unknown(*it, {"beta1", "beta2", "beta3", "eps", "weight_decay"}, "train.adan");
    read(*it, "beta1", c.adan.beta1, "train.adan");
    read(*it, "beta2", c.adan.beta2, "train.adan");
    read(*it, "beta3", c.adan.beta3, "train.adan");
    read(*it, "eps", c.adan.eps, "train.adan");
    read(*it, "weight_decay", c.adan.weight_decay, "train.adan");
  }
  read(j, "checkpoint_every", c.checkpoint_every, w);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"version", "model", "train", "comment"}, "config");
  auto v = j.find("version");
  if (v == j.end()) throw ConfigError("config: missing required key 'version'");
  if (!v->is_number_integer() || v->get<int>() != kConfigVersion) {
    throw ConfigError("config: unsupported version " + v->dump() + " (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  RunConfig c;
  if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it);
  if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace nerv360
