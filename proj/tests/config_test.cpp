#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "rst/config.hpp"

using namespace rst;

namespace {

RunConfig random_config(std::mt19937_64& rng) {
  RunConfig c;
  auto& m = c.model;
  m.levels = 1 + rng() % 4;
  m.blocks.clear();
  m.n_phi.clear();
  m.n_r.clear();
  for (std::size_t l = 0; l < m.levels; ++l) {
    m.blocks.push_back(1 + rng() % 12);
    m.n_phi.push_back(1 + rng() % 16);
    m.n_r.push_back(1 + rng() % 16);
  }
  m.heads = std::size_t{1} << (rng() % 3);
  m.channels = m.heads * (1 + rng() % 16);
  m.sectors = std::size_t{1} << (1 + rng() % 4);
  m.theta_max = 0.1 + 3 * testing::unit(rng);
  m.patch = 1 + rng() % 16;
  m.ffn_expansion = 1 + rng() % 4;
  m.conv_bias = rng() % 2;
  m.shared_offset_conv = rng() % 2;
  m.gate_axis = rng() % 2 ? GateAxis::kSectors : GateAxis::kOffsetGroups;
  m.bias_granularity = rng() % 2 ? BiasGranularity::kBins : BiasGranularity::kContinuous;
  m.precision = rng() % 2 ? Precision::kF32 : Precision::kF64;
  c.seed = rng();
  c.input = "in_" + std::to_string(rng() % 100) + ".ppm";
  c.output = rng() % 2 ? "" : "out.ppm";
  c.train.lr_start = testing::unit(rng) * 1e-2;
  c.train.lr_end = testing::unit(rng) * 1e-6;
  c.train.steps = 1 + rng() % 500;
  c.train.lambda_freq = testing::unit(rng);
  c.train.beta1 = 0.5 + 0.5 * testing::unit(rng);
  c.train.beta2 = 0.9 + 0.0999 * testing::unit(rng);
  c.train.weight_decay = testing::unit(rng) * 0.1;
  c.train.eps = 1e-9 + testing::unit(rng) * 1e-7;
  return c;
}

}  // namespace

TEST_CASE("config round trip for random valid configs") {
  std::mt19937_64 rng(70);
  for (int i = 0; i < 200; ++i) {
    auto c = random_config(rng);
    auto text = serialize_run_config(c);
    CHECK(parse_run_config(text) == c);
    CHECK(serialize_run_config(parse_run_config(text)) == text);
  }
}

TEST_CASE("missing keys keep defaults") {
  auto c = parse_run_config(R"({"seed": 9})");
  CHECK(c.seed == 9);
  CHECK(c.model == ModelConfig{});
  CHECK(c.train.lr_start == 1e-3);
  CHECK(c.train.lr_end == 1e-7);
  CHECK(c.train.lambda_freq == 0.1);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(parse_run_config(R"({"sed": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"chanels": 8}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"lr": 0.1}})"), ConfigError);
  try {
    parse_run_config(R"({"model": {"levels": 3, "typo": 1}})");
    FAIL("accepted unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("typo") != std::string::npos);
  }
}

TEST_CASE("wrong types and invalid models are rejected") {
  CHECK_THROWS_AS(parse_run_config(R"({"seed": "seven"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"blocks": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"precision": "f16"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"gate_axis": "pixels"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"levels": 2}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch": 4}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ConfigError);
}

TEST_CASE("serialized form is one JSON document with enum names") {
  RunConfig c;
  c.model.gate_axis = GateAxis::kOffsetGroups;
  c.model.precision = Precision::kF64;
  auto j = nlohmann::json::parse(serialize_run_config(c));
  CHECK(j["model"]["gate_axis"] == "offset_groups");
  CHECK(j["model"]["precision"] == "f64");
  CHECK(j["model"]["bias_granularity"] == "bins");
  CHECK(parse_precision("f32") == Precision::kF32);
  CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
}

TEST_CASE("bundled toy config loads") {
  auto c = load_run_config(std::filesystem::path(RST_SOURCE_DIR) / "data" / "toy.json");
  CHECK(c.model.levels == 2);
  CHECK(c.seed == 7);
  CHECK(c.train.steps == 200);
}
