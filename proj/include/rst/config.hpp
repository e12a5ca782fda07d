#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "rst/model.hpp"

namespace rst {

struct TrainConfig {
  double lr_start = 1e-3;
  double lr_end = 1e-7;  // cosine-decayed toward this
  std::size_t steps = 200;
  std::size_t batch = 1;
  double lambda_freq = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::string input;
  std::string output;
  TrainConfig train;

  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing keys keep their defaults; unknown keys and wrongly typed values
// throw ConfigError. The model block is validated after parsing.
RunConfig parse_run_config(const std::string& json_text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

}  // namespace rst
