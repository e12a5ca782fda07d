#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "rst/audit.hpp"
#include "rst/config.hpp"
#include "rst/dre.hpp"
#include "rst/io.hpp"
#include "rst/model.hpp"
#include "rst/polar.hpp"
#include "rst/train.hpp"

namespace fs = std::filesystem;
using namespace rst;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitAudit = 2;
constexpr int kExitIo = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::string weights;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string precision;
  std::string out;
};

RunConfig resolve_config(const Globals& g) {
  if (!g.config.empty() && !fs::is_regular_file(g.config)) throw io::IoError(g.config + ": cannot open config");
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed_given) c.seed = g.seed;
  if (!g.precision.empty()) c.model.precision = parse_precision(g.precision);
  if (!g.out.empty()) c.output = g.out;
  return c;
}

std::string require_out(const Globals& g, const char* verb) {
  if (g.out.empty()) throw UsageError(std::string(verb) + " needs --out");
  return g.out;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  std::size_t h = 0, w = 0;
  char x = 0;
  std::istringstream in(text);
  if (!(in >> h)) throw UsageError("bad size '" + text + "' (expected HxW or N)");
  if (in >> x) {
    if (x != 'x' || !(in >> w)) throw UsageError("bad size '" + text + "' (expected HxW or N)");
  } else {
    w = h;
  }
  if (h == 0 || w == 0) throw UsageError("size must be positive");
  return {h, w};
}

template <typename T>
io::Image restore(const io::Image& input, const WeightStore<float>& weights, const ModelConfig& cfg) {
  NoGradGuard no_grad;
  const std::size_t min_extent = std::size_t{1} << (cfg.levels - 1);
  if (input.height < min_extent || input.width < min_extent) {
    throw UsageError("image " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                     " is below the minimum extent " + std::to_string(min_extent));
  }
  if constexpr (std::is_same_v<T, float>) {
    return io::from_tensor(forward(io::to_tensor<float>(input), weights, cfg));
  } else {
    return io::from_tensor(forward(io::to_tensor<double>(input), weights.cast<double>(), cfg));
  }
}

io::Image restore_any(const io::Image& input, const WeightStore<float>& weights, const ModelConfig& cfg) {
  return cfg.precision == Precision::kF64 ? restore<double>(input, weights, cfg) : restore<float>(input, weights, cfg);
}

WeightStore<float> load_checked(const Globals& g, const ModelConfig& cfg) {
  if (g.weights.empty()) throw UsageError("--weights is required");
  auto ws = io::load_weights(g.weights);
  const auto reference = build<float>(cfg, 0);
  for (const auto& [name, t] : reference.entries()) {
    if (!ws.contains(name)) throw UsageError(g.weights + ": missing tensor " + name + " required by the config");
    if (ws.get(name).shape() != t.shape()) {
      throw UsageError(g.weights + ": tensor " + name + " has shape " + to_string(ws.get(name).shape()) +
                       ", config expects " + to_string(t.shape()));
    }
  }
  if (ws.size() != reference.size()) throw UsageError(g.weights + ": extra tensors not used by the config");
  return ws;
}

int cmd_init(const Globals& g) {
  const auto cfg = resolve_config(g);
  const auto out = require_out(g, "init");
  const auto ws = build<float>(cfg.model, cfg.seed);
  io::save_weights(out, ws);
  std::cout << "seed " << cfg.seed << "\nparameters " << ws.parameter_count() << "\nwrote " << out << "\n";
  return kExitOk;
}

int cmd_forward(const Globals& g, const std::string& input) {
  const auto cfg = resolve_config(g);
  const std::string in = input.empty() ? cfg.input : input;
  const std::string out = g.out.empty() ? cfg.output : g.out;
  if (in.empty() || out.empty()) throw UsageError("forward needs an input image (or directory) and --out");
  const auto weights = load_checked(g, cfg.model);
  if (!fs::is_directory(in)) {
    io::write_ppm(out, restore_any(io::read_image(in), weights, cfg.model));
    return kExitOk;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".png")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out);
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RST_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) workers = std::min<std::size_t>(workers, static_cast<std::size_t>(cap));
  }
  workers = std::min(workers, std::max<std::size_t>(files.size(), 1));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex log;
  auto work = [&] {
    for (std::size_t i = next++; i < files.size(); i = next++) {
      const auto dst = fs::path(out) / (files[i].stem().string() + ".ppm");
      try {
        io::write_ppm(dst, restore_any(io::read_image(files[i]), weights, cfg.model));
      } catch (const std::exception& e) {
        failed = true;
        std::lock_guard lock(log);
        std::cerr << "error: " << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  std::cout << "restored " << files.size() << " images with " << workers << " workers into " << out << "\n";
  return failed ? kExitIo : kExitOk;
}

int cmd_train(const Globals& g, const std::string& data, std::size_t steps, const std::string& log_path) {
  const auto cfg = resolve_config(g);
  const auto out = require_out(g, "train-demo");
  if (steps == 0) steps = cfg.train.steps;
  if (steps > 500) throw UsageError("train-demo is desk scale: at most 500 steps");
  const auto pairs = load_pairs(data);
  TrainLog log;
  const auto ws = train_demo(cfg, pairs, steps, cfg.seed, &log);
  io::save_weights(out, ws);
  const auto csv = log.to_csv();
  if (!log_path.empty()) {
    io::write_file(log_path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  } else {
    std::cout << csv;
  }
  NoGradGuard no_grad;
  for (const auto& p : pairs) {
    const auto restored = restore<float>(p.blur, ws, cfg.model);
    // Score what a written file would contain.
    const auto written = io::decode_ppm(io::encode_ppm(restored), p.name);
    std::printf("# %s psnr blurred %.4f restored %.4f\n", p.name.c_str(), psnr(p.blur.pixels, p.sharp.pixels),
                psnr(written.pixels, p.sharp.pixels));
  }
  return kExitOk;
}

int cmd_bench(const Globals& g, const std::string& sizes_text) {
  const auto cfg = resolve_config(g);
  std::vector<std::size_t> sizes;
  std::stringstream ss(sizes_text);
  for (std::string item; std::getline(ss, item, ',');) sizes.push_back(parse_size(item).first);
  const auto ws = build<float>(cfg.model, cfg.seed);
  std::ostringstream csv;
  csv << "size,flops,params,ms\n";
  for (auto s : sizes) {
    const auto flops = count_flops(cfg.model, s, s).total();
    const auto image = io::Image{s, s, std::vector<float>(3 * s * s, 0.5f)};
    const auto start = std::chrono::steady_clock::now();
    restore_any(image, ws, cfg.model);
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    char line[128];
    std::snprintf(line, sizeof line, "%zu,%llu,%zu,%.3f\n", s, static_cast<unsigned long long>(flops),
                  ws.parameter_count(), ms);
    csv << line;
  }
  if (g.out.empty()) {
    std::cout << csv.str();
  } else {
    const auto text = csv.str();
    io::write_file(g.out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  const ModelConfig defaults;
  std::fprintf(stderr,
               "# default config: %.3f M params (published 14.3 M), "
               "%.3f G multiply-adds at 256x256 (published 112.48 G)\n",
               static_cast<double>(expected_parameter_count(defaults)) / 1e6,
               static_cast<double>(count_flops(defaults, 256, 256).total()) / 1e9);
  return kExitOk;
}

int cmd_audit(const Globals& g, const std::string& scope, bool inject) {
  audit::Options opt;
  if (g.seed_given) opt.seed = g.seed;
  if (inject) debug::set_fault(debug::Fault::kConv2dKernelGrad);
  std::FILE* sink = stdout;
  if (!g.out.empty()) {
    sink = std::fopen(g.out.c_str(), "w");
    if (!sink) throw io::IoError(g.out + ": cannot open for writing");
  }
  std::size_t total = 0;
  const auto failures = audit::run(audit::parse_scope(scope), opt, [&](const audit::Report& r) {
    ++total;
    std::fprintf(sink, "%s\n", r.to_json_line().c_str());
  });
  if (sink != stdout) std::fclose(sink);
  std::fprintf(stderr, "audit %s: %zu reports, %zu failed\n", scope.c_str(), total, failures);
  return failures == 0 ? kExitOk : kExitAudit;
}

std::uint8_t to_gray(double v) { return io::quantize(static_cast<float>(v)); }

int cmd_masks(const Globals& g, const std::string& image_path, const std::string& size, std::size_t sectors) {
  const auto cfg = resolve_config(g);
  const auto out = require_out(g, "masks");
  std::size_t h = 0, w = 0;
  io::Image image;
  if (!image_path.empty()) {
    image = io::read_image(image_path);
    h = image.height;
    w = image.width;
  } else {
    std::tie(h, w) = parse_size(size.empty() ? "32" : size);
  }
  const std::size_t n = sectors ? sectors : cfg.model.sectors;
  fs::create_directories(out);
  const auto masks = build_sector_masks(build_polar_grid(h, w), n);
  for (std::size_t s = 0; s < n; ++s) {
    auto m = masks.mask(s);
    for (auto& v : m) v = v ? 255 : 0;
    io::write_file(fs::path(out) / ("sector_" + std::to_string(s) + ".pgm"), io::encode_pgm(h, w, m));
  }
  if (!image_path.empty() && !g.weights.empty()) {
    NoGradGuard no_grad;
    const auto ws = load_checked(g, cfg.model);
    const DreConfig dc{cfg.model.sectors, cfg.model.shared_offset_conv, cfg.model.gate_axis};
    const auto dre_masks = build_sector_masks(build_polar_grid(h, w), cfg.model.sectors);
    const auto field = generate_offsets(io::to_tensor<float>(image), dre_masks, dre_weights(ws, cfg.model).offset_kernels, dc);
    std::vector<double> mag(h * w, 0.0);
    double peak = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t t = 0; t < 9; ++t) {
        const double dy = field.fused[(2 * t) * h * w + p], dx = field.fused[(2 * t + 1) * h * w + p];
        mag[p] += std::sqrt(dy * dy + dx * dx) / 9.0;
      }
      peak = std::max(peak, mag[p]);
    }
    std::vector<std::uint8_t> gray(h * w);
    for (std::size_t p = 0; p < h * w; ++p) gray[p] = to_gray(peak > 0 ? mag[p] / peak : 0.0);
    io::write_file(fs::path(out) / "offset_magnitude.pgm", io::encode_pgm(h, w, gray));
  }
  std::cout << "wrote " << n << " sector masks (" << h << "x" << w << ") to " << out << "\n";
  return kExitOk;
}

int cmd_windows(const Globals& g, const std::string& size, std::size_t n_phi, std::size_t n_r) {
  const auto cfg = resolve_config(g);
  const auto out = require_out(g, "windows");
  const auto [h, w] = parse_size(size.empty() ? "32" : size);
  if (!n_phi) n_phi = cfg.model.n_phi.front();
  if (!n_r) n_r = cfg.model.n_r.front();
  const auto layout = build_window_layout(build_polar_grid(h, w), n_phi, n_r);
  fs::create_directories(out);
  io::Image img{h, w, std::vector<float>(3 * h * w)};
  for (std::size_t p = 0; p < h * w; ++p) {
    // Evenly spaced hues, one per azimuth bin.
    const double hue = 6.0 * static_cast<double>(layout.azimuth_bin[p]) / static_cast<double>(n_phi);
    const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
    double rgb[3] = {0, 0, 0};
    switch (static_cast<int>(hue)) {
      case 0: rgb[0] = 1; rgb[1] = x; break;
      case 1: rgb[0] = x; rgb[1] = 1; break;
      case 2: rgb[1] = 1; rgb[2] = x; break;
      case 3: rgb[1] = x; rgb[2] = 1; break;
      case 4: rgb[0] = x; rgb[2] = 1; break;
      default: rgb[0] = 1; rgb[2] = x; break;
    }
    for (std::size_t c = 0; c < 3; ++c) img.pixels[c * h * w + p] = static_cast<float>(rgb[c]);
  }
  io::write_ppm(fs::path(out) / "windows.ppm", img);
  nlohmann::json manifest = {{"height", h},
                             {"width", w},
                             {"n_phi", n_phi},
                             {"n_r", n_r},
                             {"azimuth_bin", layout.azimuth_bin},
                             {"radial_bin", layout.radial_bin},
                             {"rank", layout.rank},
                             {"windows", layout.windows}};
  const auto text = manifest.dump() + "\n";
  io::write_file(fs::path(out) / "layout.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  std::cout << "wrote " << layout.windows.size() << " windows (" << h << "x" << w << ") to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radial strip transformer: init, forward, train-demo, bench, audit, masks, windows"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run configuration JSON");
  app.add_option("--weights", g.weights, "weight file");
  auto* seed = app.add_option("--seed", g.seed, "seed (u64)");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "output path");
  app.fallthrough();

  auto* init = app.add_subcommand("init", "build seeded weights and write a weight file");

  std::string input;
  auto* fwd = app.add_subcommand("forward", "restore an image or a directory of images");
  fwd->add_option("input", input, "P6 or PNG image, or a directory");

  std::string data = "data";
  std::size_t steps = 0;
  std::string log_path;
  auto* train = app.add_subcommand("train-demo", "seeded AdamW overfitting demo on blur/sharp pairs");
  train->add_option("--data", data, "directory of <name>_blur / <name>_sharp pairs");
  train->add_option("--steps", steps, "optimizer steps (default from config, at most 500)");
  train->add_option("--log", log_path, "loss log CSV path (default stdout)");

  std::string sizes = "64";
  auto* bench = app.add_subcommand("bench", "analytic FLOPs, parameters, and wall time as CSV");
  bench->add_option("--sizes", sizes, "comma-separated square sizes");

  std::string scope = "all";
  bool inject = false;
  auto* aud = app.add_subcommand("audit", "run the oracle suite; JSON lines");
  aud->add_option("--scope", scope, "tensor, dre, rsas, ffn, model, all");
  aud->add_flag("--inject-fault", inject, "corrupt the conv2d kernel gradient");

  std::string image_path, size;
  std::size_t sectors = 0, n_phi = 0, n_r = 0;
  auto* masks = app.add_subcommand("masks", "dump sector masks (and offset magnitudes) as P5");
  masks->add_option("image", image_path, "optional image; with --weights also dumps offset magnitudes");
  masks->add_option("--size", size, "HxW when no image is given");
  masks->add_option("--sectors", sectors, "sector count (default from config)");

  auto* windows = app.add_subcommand("windows", "dump the window layout as a false-colour P6 and JSON manifest");
  windows->add_option("--size", size, "HxW");
  windows->add_option("--n-phi", n_phi, "azimuth bins (default: config level 0)");
  windows->add_option("--n-r", n_r, "radial bins (default: config level 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  g.seed_given = seed->count() > 0;

  try {
    if (init->parsed()) return cmd_init(g);
    if (fwd->parsed()) return cmd_forward(g, input);
    if (train->parsed()) return cmd_train(g, data, steps, log_path);
    if (bench->parsed()) return cmd_bench(g, sizes);
    if (aud->parsed()) return cmd_audit(g, scope, inject);
    if (masks->parsed()) return cmd_masks(g, image_path, size, sectors);
    if (windows->parsed()) return cmd_windows(g, size, n_phi, n_r);
  } catch (const io::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
