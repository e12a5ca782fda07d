#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "rst/config.hpp"
#include "rst/io.hpp"
#include "rst/train.hpp"

using namespace rst;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// stdout only; stderr is redirected by the caller when it matters.
Result run(const std::string& args) {
  const std::string cmd = std::string(RST_CLI) + " " + args;
  Result r;
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.levels = 2;
  m.blocks = {1, 1};
  m.channels = 4;
  m.n_phi = {4, 4};
  m.n_r = {4, 4};
  return m;
}

std::string tiny_config(const fs::path& dir) {
  RunConfig c;
  c.model = tiny_model();
  const auto path = dir / "tiny.json";
  std::ofstream(path) << serialize_run_config(c);
  return "--config " + path.string();
}

}  // namespace

TEST_CASE("init is deterministic and reports the parameter count") {
  auto dir = testing::scratch_dir("cli_init");
  const auto cfg = tiny_config(dir);
  auto a = run(cfg + " --seed 3 --out " + (dir / "a.rstw").string() + " init");
  auto b = run(cfg + " --seed 3 --out " + (dir / "b.rstw").string() + " init");
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  CHECK(a.out.find("parameters " + std::to_string(expected_parameter_count(tiny_model()))) != std::string::npos);
  CHECK(a.out.find("seed 3") != std::string::npos);
  CHECK(slurp(dir / "a.rstw") == slurp(dir / "b.rstw"));
  CHECK(run(cfg + " --seed 4 --out " + (dir / "c.rstw").string() + " init").code == 0);
  CHECK(slurp(dir / "a.rstw") != slurp(dir / "c.rstw"));
}

TEST_CASE("forward with a zeroed output projection reproduces the input file") {
  auto dir = testing::scratch_dir("cli_identity");
  const auto cfg = tiny_config(dir);
  auto ws = build<float>(tiny_model(), 5);
  for (auto& v : ws.get("out.weight").mutable_data()) v = 0.0f;
  io::save_weights(dir / "zero.rstw", ws);
  io::write_ppm(dir / "in.ppm", make_synthetic_pair(19, 2).blur);
  auto r = run(cfg + " --weights " + (dir / "zero.rstw").string() + " --out " + (dir / "out.ppm").string() +
               " forward " + (dir / "in.ppm").string());
  CHECK(r.code == 0);
  CHECK(slurp(dir / "in.ppm") == slurp(dir / "out.ppm"));

  r = run(cfg + " --precision f64 --weights " + (dir / "zero.rstw").string() + " --out " +
          (dir / "out64.ppm").string() + " forward " + (dir / "in.ppm").string());
  CHECK(r.code == 0);
  CHECK(slurp(dir / "in.ppm") == slurp(dir / "out64.ppm"));
}

TEST_CASE("forward over a directory writes one output per image") {
  auto dir = testing::scratch_dir("cli_dir");
  const auto cfg = tiny_config(dir);
  fs::create_directories(dir / "in");
  for (int i = 0; i < 3; ++i) io::write_ppm(dir / "in" / ("img" + std::to_string(i) + ".ppm"), make_synthetic_pair(12, i).blur);
  REQUIRE(run(cfg + " --out " + (dir / "w.rstw").string() + " init").code == 0);
  const std::string cmd = std::string("RST_THREADS=2 ") + RST_CLI + " " + cfg + " --weights " +
                          (dir / "w.rstw").string() + " --out " + (dir / "out").string() + " forward " +
                          (dir / "in").string() + " > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
  for (int i = 0; i < 3; ++i) CHECK(fs::exists(dir / "out" / ("img" + std::to_string(i) + ".ppm")));
}

TEST_CASE("corrupted weights exit with the I/O code and name the file") {
  auto dir = testing::scratch_dir("cli_crc");
  const auto cfg = tiny_config(dir);
  const auto w = dir / "w.rstw";
  REQUIRE(run(cfg + " --out " + w.string() + " init").code == 0);
  auto bytes = io::read_file(w);
  bytes[bytes.size() / 2] ^= 1;
  io::write_file(w, bytes);
  io::write_ppm(dir / "in.ppm", make_synthetic_pair(8, 2).blur);
  auto r = run(cfg + " --weights " + w.string() + " --out " + (dir / "o.ppm").string() + " forward " +
               (dir / "in.ppm").string() + " 2>&1");
  CHECK(r.code == 3);
  CHECK(r.out.find(w.string()) != std::string::npos);
  CHECK(r.out.find("CRC") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("--bogus init 2>/dev/null").code == 1);
  CHECK(run("2>/dev/null").code == 1);
  CHECK(run("--precision f16 init 2>/dev/null").code == 1);
  CHECK(run("init 2>/dev/null").code == 1);  // no --out
  auto dir = testing::scratch_dir("cli_usage");
  CHECK(run("--out " + (dir / "x").string() + " train-demo --data " + dir.string() + " --steps 501 2>/dev/null").code ==
        1);
  CHECK(run("--config " + (dir / "missing.json").string() + " --out x init 2>/dev/null").code == 3);
}

TEST_CASE("bench emits the fixed CSV header") {
  auto dir = testing::scratch_dir("cli_bench");
  auto r = run(tiny_config(dir) + " bench --sizes 16,32 2>/dev/null");
  CHECK(r.code == 0);
  CHECK(r.out.starts_with("size,flops,params,ms\n"));
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  const auto flops = count_flops(tiny_model(), 16, 16).total();
  const auto params = expected_parameter_count(tiny_model());
  CHECK(line.starts_with("16," + std::to_string(flops) + "," + std::to_string(params) + ","));
}

TEST_CASE("audit emits JSON lines and fails under fault injection") {
  auto ok = run("audit --scope tensor 2>/dev/null");
  CHECK(ok.code == 0);
  std::istringstream lines(ok.out);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("op"));
    CHECK(j["passed"] == true);
  }
  CHECK(n > 30);

  auto bad = run("audit --scope tensor --inject-fault 2>/dev/null");
  CHECK(bad.code == 2);
  bool named = false;
  std::istringstream blines(bad.out);
  for (std::string line; std::getline(blines, line);) {
    auto j = nlohmann::json::parse(line);
    if (j["passed"] == false && j["op"].get<std::string>().find("conv2d") != std::string::npos) named = true;
  }
  CHECK(named);
}

TEST_CASE("masks and windows dumps") {
  auto dir = testing::scratch_dir("cli_dumps");
  CHECK(run("--out " + (dir / "m").string() + " masks --size 9x12 --sectors 8 > /dev/null").code == 0);
  for (int s = 0; s < 8; ++s) CHECK(fs::exists(dir / "m" / ("sector_" + std::to_string(s) + ".pgm")));
  CHECK(slurp(dir / "m" / "sector_0.pgm").starts_with("P5\n12 9\n255\n"));

  const auto cfg = tiny_config(dir);
  io::write_ppm(dir / "img.ppm", make_synthetic_pair(16, 1).blur);
  REQUIRE(run(cfg + " --out " + (dir / "w.rstw").string() + " init").code == 0);
  CHECK(run(cfg + " --weights " + (dir / "w.rstw").string() + " --out " + (dir / "m2").string() + " masks " +
            (dir / "img.ppm").string() + " > /dev/null")
            .code == 0);
  CHECK(fs::exists(dir / "m2" / "offset_magnitude.pgm"));

  CHECK(run("--out " + (dir / "w").string() + " windows --size 8 --n-phi 4 --n-r 2 > /dev/null").code == 0);
  auto layout = nlohmann::json::parse(slurp(dir / "w" / "layout.json"));
  CHECK(layout["windows"].size() == 4);
  CHECK(io::read_image(dir / "w" / "windows.ppm").width == 8);
}

TEST_CASE("train-demo writes weights and a seeded loss log") {
  auto dir = testing::scratch_dir("cli_train");
  const auto cfg = tiny_config(dir);
  auto p = make_synthetic_pair(16, 4);
  fs::create_directories(dir / "data");
  io::write_ppm(dir / "data" / "s_blur.ppm", p.blur);
  io::write_ppm(dir / "data" / "s_sharp.ppm", p.sharp);
  auto go = [&](const std::string& tag) {
    return run(cfg + " --seed 11 --out " + (dir / (tag + ".rstw")).string() + " train-demo --data " +
               (dir / "data").string() + " --steps 20 --log " + (dir / (tag + ".csv")).string());
  };
  auto a = go("a"), b = go("b");
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  CHECK(a.out.find("psnr blurred") != std::string::npos);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv").starts_with("# seed 11\nstep,lr,loss\n"));
  CHECK(slurp(dir / "a.rstw") == slurp(dir / "b.rstw"));
  CHECK(run(cfg + " --out x train-demo --data " + (dir / "nothing").string() + " 2>/dev/null").code == 3);
}
