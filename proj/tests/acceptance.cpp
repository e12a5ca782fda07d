// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failing criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>

#include "rst/audit.hpp"
#include "rst/config.hpp"
#include "rst/io.hpp"
#include "rst/model.hpp"
#include "rst/ops.hpp"
#include "rst/polar.hpp"
#include "rst/rsas.hpp"
#include "rst/train.hpp"

using namespace rst;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T = float>
Tensor<T> random_image(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::vector<T> v(c * h * w);
  for (auto& x : v) x = static_cast<T>(unit(rng));
  return Tensor<T>(Shape{c, h, w}, std::move(v));
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelConfig tiny() {
  ModelConfig c;
  c.levels = 2;
  c.blocks = {1, 1};
  c.channels = 4;
  c.n_phi = {8, 8};
  c.n_r = {8, 8};
  return c;
}

Outcome sector_partition() {
  std::size_t checked = 0;
  for (std::size_t h = 4; h <= 33; ++h)
    for (std::size_t w = 4; w <= 33; ++w) {
      const auto grid = build_polar_grid(h, w);
      for (std::size_t n : {2, 4, 8, 16}) {
        const auto set = build_sector_masks(grid, n);
        std::vector<int> total(h * w, 0);
        for (std::size_t s = 0; s < n; ++s) {
          const auto m = set.mask(s);
          for (std::size_t i = 0; i < m.size(); ++i) total[i] += m[i];
        }
        for (auto t : total)
          if (t != 1) return {false, std::to_string(h) + "x" + std::to_string(w) + " N=" + std::to_string(n)};
        ++checked;
      }
    }
  return {true, std::to_string(checked) + " (H, W, N) cases"};
}

Outcome zero_offsets() {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    auto x = random_image(3, 16, 16, rng);
    std::vector<float> k(32 * 27);
    for (auto& v : k) v = static_cast<float>(unit(rng) * 2 - 1);
    DreWeights<float> w{std::vector<Tensor<float>>(4, Tensor<float>::zeros({18, 3, 3, 3})),
                        Tensor<float>({32, 3, 3, 3}, k)};
    auto y = dre_forward(x, w, DreConfig{});
    auto plain = conv2d(x, w.deform_kernel, 1, 1);
    for (std::size_t j = 0; j < y.numel(); ++j) worst = std::max(worst, std::abs(double(y[j]) - plain[j]));
  }
  return {worst <= 1e-6, "max abs diff " + fmt("%.3g", worst) + " over 20 inputs"};
}

Outcome oracle_equivalence() {
  audit::Options opts;
  opts.instances = 30;
  std::map<std::string, std::pair<std::size_t, double>> seen;  // count, worst diff
  std::size_t failed = 0;
  auto take = [&](const std::vector<audit::Report>& reports) {
    for (const auto& r : reports) {
      if (r.op != "conv2d" && r.op != "deform_conv2d" && r.op != "window_attention" && r.op != "rfft2") continue;
      if (!r.passed || r.tolerance > 1e-5) ++failed;
      auto& s = seen[r.op];
      ++s.first;
      s.second = std::max(s.second, r.max_abs_diff);
    }
  };
  take(audit::tensor_oracles(opts));
  take(audit::dre_reports(opts));
  take(audit::rsas_reports(opts));
  std::string detail;
  bool enough = seen.size() == 4;
  for (const auto& [op, s] : seen) {
    detail += op + " " + std::to_string(s.first) + "x (max " + fmt("%.2g", s.second) + ") ";
    if (s.first < 30) enough = false;
  }
  return {failed == 0 && enough, detail};
}

Outcome gradient_audit() {
  audit::Options opts;
  std::size_t total = 0, failed = 0;
  std::string first_failure;
  audit::run(audit::Scope::kAll, opts, [&](const audit::Report& r) {
    if (r.op.find("grad") == std::string::npos) return;
    ++total;
    if (!r.passed) {
      ++failed;
      if (first_failure.empty()) first_failure = " first: " + r.to_json_line();
    }
  });
  return {failed == 0 && total > 0, std::to_string(total) + " gradient reports, " + std::to_string(failed) + " failed" + first_failure};
}

Outcome residual_identity() {
  std::mt19937_64 rng(5);
  ModelConfig cfg;
  auto ws = build<float>(cfg, 5);
  for (auto& v : ws.get("out.weight").mutable_data()) v = 0.0f;
  NoGradGuard no_grad;
  for (int i = 0; i < 10; ++i) {
    const std::size_t h = 4 + rng() % 37, w = 4 + rng() % 37;
    auto x = random_image(3, h, w, rng);
    if (!bitwise_equal(forward(x, ws, cfg), x)) return {false, "differs at " + std::to_string(h) + "x" + std::to_string(w)};
  }
  return {true, "10 inputs, default config, bitwise equal"};
}

Outcome structural() {
  ModelConfig cfg;
  auto ws = build<float>(cfg, 6);
  ws.set_requires_grad(true);
  std::mt19937_64 rng(6);
  ForwardTrace<float> trace;
  auto y = forward(random_image(3, 32, 32, rng), ws, cfg, &trace);
  std::size_t encoder_attention = 0;
  std::map<std::size_t, std::set<std::string>> blocks, enc_ffn, dec_ffn;
  std::map<std::size_t, std::size_t> skips;
  visit_graph<float>(y, [&](const detail::Node<float>& n) {
    const std::string scope = n.scope ? *n.scope : "";
    const std::string op = n.op;
    if (scope.starts_with("enc") && (op == "softmax" || scope.find("attn") != std::string::npos)) ++encoder_attention;
    if (scope.size() < 4 || !(scope.starts_with("dec") || scope.starts_with("enc"))) return;
    const std::size_t level = static_cast<std::size_t>(scope[3] - '0');
    if (scope.ends_with(".ffn")) (scope.starts_with("enc") ? enc_ffn : dec_ffn)[level].insert(scope);
    if (!scope.starts_with("dec")) return;
    if (scope.ends_with(".attn") && op == "softmax") blocks[level].insert(scope);
    if (scope.ends_with(".skip") && op == "add")
      for (const auto& in : n.inputs)
        if (in == trace.encoder_outputs[level].node_ptr()) ++skips[level];
  });
  std::string counts;
  bool ok = encoder_attention == 0;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    counts += (l ? "," : "") + std::to_string(blocks[l].size());
    ok = ok && blocks[l].size() == cfg.blocks[l] && enc_ffn[l].size() == cfg.blocks[l] &&
         dec_ffn[l].size() == cfg.blocks[l];
    if (l + 1 < cfg.levels) ok = ok && skips[l] == 1;
  }
  return {ok, "encoder attention nodes " + std::to_string(encoder_attention) + ", decoder RSAS blocks [" + counts +
                  "] with matching FFN blocks, skip adds per level " + std::to_string(skips[0]) + "," + std::to_string(skips[1])};
}

Outcome attention_properties() {
  double worst_row = 0;
  std::size_t leaks = 0, rows = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t c = 4, h = 8 + rng() % 9, w = 8 + rng() % 9;
    const auto layout = build_window_layout(build_polar_grid(h, w), 4, 4);
    auto rnd = [&](Shape s, double amp) {
      std::vector<float> v(numel(s));
      for (auto& x : v) x = static_cast<float>((unit(rng) * 2 - 1) * amp);
      return Tensor<float>(std::move(s), std::move(v));
    };
    RsasWeights<float> wt;
    wt.norm_scale = Tensor<float>::full({c, 1, 1}, 1.0f);
    wt.norm_shift = Tensor<float>::zeros({c, 1, 1});
    wt.attention = {rnd({c, c}, 1), rnd({c, c}, 1), rnd({c, c}, 1), rnd({c, c}, 1), 1};
    wt.bias = {rnd({7}, 0.5), rnd({7}, 0.5), rnd({7}, 0.5), rnd({7}, 0.5)};
    auto f = rnd({c, h, w}, 2);
    std::vector<Tensor<float>> probs;
    auto base = sub(rsas_forward(f, layout, wt, {4, 4}, &probs), f);
    for (const auto& p : probs) {
      const std::size_t n = p.dim(0);
      for (std::size_t r = 0; r < n; ++r, ++rows) {
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) s += p[r * n + k];
        worst_row = std::max(worst_row, std::abs(s - 1));
      }
    }
    const std::size_t target = rng() % 4;
    const auto& win = layout.windows[target];
    const std::size_t pix = win[rng() % win.size()];
    std::vector<float> d(f.data().begin(), f.data().end());
    for (std::size_t ch = 0; ch < c; ++ch) d[ch * h * w + pix] += 1.0f;
    Tensor<float> g({c, h, w}, d);
    auto moved = sub(rsas_forward(g, layout, wt, {4, 4}), g);
    for (std::size_t p = 0; p < h * w; ++p) {
      if (layout.azimuth_bin[p] == target) continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        if (moved[ch * h * w + p] != base[ch * h * w + p]) ++leaks;
    }
  }
  return {worst_row <= 1e-6 && leaks == 0, std::to_string(rows) + " rows, max |sum-1| " + fmt("%.2g", worst_row) +
                                               ", cross-window leaks " + std::to_string(leaks)};
}

Outcome toy_training() {
  const fs::path root(RST_SOURCE_DIR);
  const auto cfg = load_run_config(root / "data" / "toy.json");
  const auto pairs = load_pairs(root / "data");
  TrainLog log;
  const auto ws = train_demo(cfg, pairs, cfg.train.steps, cfg.seed, &log);
  const double early = trailing_mean(log.loss, 10), late = trailing_mean(log.loss, log.loss.size());
  NoGradGuard no_grad;
  const auto& pair = pairs.front();
  auto restored = io::from_tensor(forward(io::to_tensor<float>(pair.blur), ws, cfg.model));
  restored = io::decode_ppm(io::encode_ppm(restored), "restored");
  const double before = psnr(pair.blur.pixels, pair.sharp.pixels), after = psnr(restored.pixels, pair.sharp.pixels);
  const double ratio = late / early;
  return {ratio < 0.5 && after > before, std::to_string(cfg.train.steps) + " steps, loss ratio " + fmt("%.3f", ratio) +
                                             ", PSNR blurred " + fmt("%.2f", before) + " dB restored " +
                                             fmt("%.2f", after) + " dB"};
}

Outcome accounting() {
  auto c = tiny();
  bool ok = expected_parameter_count(c) == 5488 && build<float>(c, 1).parameter_count() == 5488;
  c.n_phi = {1, 1};
  ok = ok && expected_parameter_count(c) == 5432 && build<float>(c, 1).parameter_count() == 5432;
  const auto t = count_flops(c, 16, 16);
  const std::map<std::string, std::uint64_t> hand = {
      {"dre", 552960},         {"encoder.ffn", 128768}, {"downsample", 8192}, {"decoder.attention", 622592},
      {"decoder.ffn", 128768}, {"upsample", 8192},      {"output", 27648}};
  for (const auto& [m, v] : hand) ok = ok && t.at(m) == v;
  ok = ok && t.total() == 1477120;
  const ModelConfig def;
  const double params = static_cast<double>(expected_parameter_count(def)) / 1e6;
  const double flops = static_cast<double>(count_flops(def, 256, 256).total()) / 1e9;
  return {ok, "tiny config exact; default " + fmt("%.3f", params) + " M params (published 14.3 M), " +
                  fmt("%.2f", flops) + " G multiply-adds at 256x256 (published 112.48 G)"};
}

Outcome determinism_formats() {
  const auto c = tiny();
  const auto a = io::encode_weights(build<float>(c, 10)), b = io::encode_weights(build<float>(c, 10));
  bool ok = a == b;
  ok = ok && io::encode_weights(io::decode_weights(a, "mem")) == a;

  RunConfig run;
  run.model = c;
  run.model.n_phi = {4, 4};
  run.model.n_r = {4, 4};
  const std::vector<TrainingPair> pairs{make_synthetic_pair(16, 1)};
  TrainLog la, lb;
  const auto wa = train_demo(run, pairs, 20, 3, &la), wb = train_demo(run, pairs, 20, 3, &lb);
  ok = ok && la.to_csv() == lb.to_csv() && io::encode_weights(wa) == io::encode_weights(wb);

  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    const std::size_t h = 1 + rng() % 24, w = 1 + rng() % 24;
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::size_t k = 0; k < 3 * h * w; ++k) bytes.push_back(static_cast<std::uint8_t>(rng()));
    ok = ok && io::encode_ppm(io::decode_ppm(bytes, "p6")) == bytes;
  }

  std::size_t undetected = 0;
  auto bad = a;
  for (std::size_t pos = 0; pos < bad.size(); ++pos) {
    const std::uint8_t flip = static_cast<std::uint8_t>(1 + rng() % 255);
    bad[pos] ^= flip;
    try {
      io::decode_weights(bad, "corrupt");
      ++undetected;
    } catch (const io::IoError&) {
    }
    bad[pos] ^= flip;
  }
  ok = ok && undetected == 0;
  return {ok, "weights, loss log, P6 byte-exact; " + std::to_string(a.size()) + " single-byte corruptions, " +
                  std::to_string(undetected) + " undetected"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"sector-mask partition", sector_partition},
      {"zero-offset degeneracy", zero_offsets},
      {"oracle equivalence", oracle_equivalence},
      {"gradient audit", gradient_audit},
      {"residual identity", residual_identity},
      {"structural asymmetry", structural},
      {"attention stochasticity and locality", attention_properties},
      {"toy training", toy_training},
      {"accounting", accounting},
      {"determinism and formats", determinism_formats},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - start).count();
    std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures;
}
