#include "rst/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace rst {

using nlohmann::json;

std::string to_string(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::kF32;
  if (text == "f64") return Precision::kF64;
  throw ConfigError("precision must be f32 or f64, got '" + text + "'");
}

namespace {

const char* to_string(GateAxis g) { return g == GateAxis::kSectors ? "sectors" : "offset_groups"; }
const char* to_string(BiasGranularity b) { return b == BiasGranularity::kBins ? "bins" : "continuous"; }

GateAxis parse_gate_axis(const std::string& s) {
  if (s == "sectors") return GateAxis::kSectors;
  if (s == "offset_groups") return GateAxis::kOffsetGroups;
  throw ConfigError("gate_axis must be sectors or offset_groups, got '" + s + "'");
}

BiasGranularity parse_granularity(const std::string& s) {
  if (s == "bins") return BiasGranularity::kBins;
  if (s == "continuous") return BiasGranularity::kContinuous;
  throw ConfigError("bias_granularity must be bins or continuous, got '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename U>
void read(const json& j, const char* key, U& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<U>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json model_to_json(const ModelConfig& m) {
  return {{"levels", m.levels},
          {"blocks", m.blocks},
          {"channels", m.channels},
          {"sectors", m.sectors},
          {"n_phi", m.n_phi},
          {"n_r", m.n_r},
          {"theta_max", m.theta_max},
          {"patch", m.patch},
          {"heads", m.heads},
          {"ffn_expansion", m.ffn_expansion},
          {"conv_bias", m.conv_bias},
          {"shared_offset_conv", m.shared_offset_conv},
          {"gate_axis", to_string(m.gate_axis)},
          {"bias_granularity", to_string(m.bias_granularity)},
          {"precision", rst::to_string(m.precision)}};
}

ModelConfig model_from_json(const json& j) {
  reject_unknown(j,
                 {"levels", "blocks", "channels", "sectors", "n_phi", "n_r", "theta_max", "patch", "heads",
                  "ffn_expansion", "conv_bias", "shared_offset_conv", "gate_axis", "bias_granularity", "precision"},
                 "model");
  ModelConfig m;
  const std::string w = "model";
  read(j, "levels", m.levels, w);
  read(j, "blocks", m.blocks, w);
  read(j, "channels", m.channels, w);
  read(j, "sectors", m.sectors, w);
  read(j, "n_phi", m.n_phi, w);
  read(j, "n_r", m.n_r, w);
  read(j, "theta_max", m.theta_max, w);
  read(j, "patch", m.patch, w);
  read(j, "heads", m.heads, w);
  read(j, "ffn_expansion", m.ffn_expansion, w);
  read(j, "conv_bias", m.conv_bias, w);
  read(j, "shared_offset_conv", m.shared_offset_conv, w);
  std::string s;
  if (j.contains("gate_axis")) {
    read(j, "gate_axis", s, w);
    m.gate_axis = parse_gate_axis(s);
  }
  if (j.contains("bias_granularity")) {
    read(j, "bias_granularity", s, w);
    m.bias_granularity = parse_granularity(s);
  }
  if (j.contains("precision")) {
    read(j, "precision", s, w);
    m.precision = parse_precision(s);
  }
  return m;
}

json train_to_json(const TrainConfig& t) {
  return {{"lr_start", t.lr_start},       {"lr_end", t.lr_end}, {"steps", t.steps},
          {"batch", t.batch},             {"lambda_freq", t.lambda_freq}, {"beta1", t.beta1},
          {"beta2", t.beta2},             {"weight_decay", t.weight_decay}, {"eps", t.eps}};
}

TrainConfig train_from_json(const json& j) {
  reject_unknown(j, {"lr_start", "lr_end", "steps", "batch", "lambda_freq", "beta1", "beta2", "weight_decay", "eps"},
                 "train");
  TrainConfig t;
  const std::string w = "train";
  read(j, "lr_start", t.lr_start, w);
  read(j, "lr_end", t.lr_end, w);
  read(j, "steps", t.steps, w);
  read(j, "batch", t.batch, w);
  read(j, "lambda_freq", t.lambda_freq, w);
  read(j, "beta1", t.beta1, w);
  read(j, "beta2", t.beta2, w);
  read(j, "weight_decay", t.weight_decay, w);
  read(j, "eps", t.eps, w);
  if (t.batch != 1) throw ConfigError("train.batch: only a batch of 1 is supported");
  return t;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"model", "seed", "input", "output", "train"}, "config");
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j["model"]);
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  read(j, "seed", c.seed, "config");
  read(j, "input", c.input, "config");
  read(j, "output", c.output, "config");
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string serialize_run_config(const RunConfig& c) {
  json j = {{"model", model_to_json(c.model)},
            {"seed", c.seed},
            {"input", c.input},
            {"output", c.output},
            {"train", train_to_json(c.train)}};
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace rst
