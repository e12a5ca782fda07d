#include "rst/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "rst/ops.hpp"

namespace rst {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, const TrainConfig& hyper) : params_(std::move(params)), hyper_(hyper) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    const bool has = params_[i].has_grad();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      double wk = static_cast<double>(w[k]) * (1.0 - lr * hyper_.weight_decay);
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      wk -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper_.eps);
      w[k] = static_cast<T>(wk);
    }
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  const double progress = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Tensor<T> restoration_loss(const Tensor<T>& pred, const Tensor<T>& target, double lambda_freq) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("restoration_loss: prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  auto spatial = mean(abs(sub(pred, target)));
  if (lambda_freq == 0.0) return spatial;
  auto spectral = mean(abs(sub(complex_abs(rfft2(pred)), complex_abs(rfft2(target)))));
  return add(spatial, scale(spectral, static_cast<T>(lambda_freq)));
}

double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: images differ in size");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw io::IoError(dir.string() + ": not a directory");
  std::map<std::string, std::pair<fs::path, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".ppm" && ext != ".png") continue;
    const auto stem = entry.path().stem().string();
    for (const char* suffix : {"_blur", "_sharp"}) {
      const std::string s(suffix);
      if (stem.size() > s.size() && stem.ends_with(s)) {
        auto& slot = found[stem.substr(0, stem.size() - s.size())];
        (s == "_blur" ? slot.first : slot.second) = entry.path();
      }
    }
  }
  std::vector<TrainingPair> pairs;
  for (const auto& [name, paths] : found) {
    if (paths.first.empty() || paths.second.empty()) continue;
    TrainingPair p{name, io::read_image(paths.first), io::read_image(paths.second)};
    if (p.blur.height != p.sharp.height || p.blur.width != p.sharp.width) {
      throw io::IoError(paths.first.string() + ": size differs from " + paths.second.string());
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw io::IoError(dir.string() + ": no <name>_blur / <name>_sharp image pairs");
  return pairs;
}

io::Image blur_horizontal(const io::Image& sharp, std::size_t taps) {
  io::Image out{sharp.height, sharp.width, std::vector<float>(sharp.pixels.size())};
  const long half = static_cast<long>(taps / 2);
  const long w = static_cast<long>(sharp.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < sharp.height; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -half; t <= half; ++t) {
          const long xs = std::clamp(x + t, 0L, w - 1);
          acc += sharp.pixels[(c * sharp.height + y) * sharp.width + static_cast<std::size_t>(xs)];
        }
        out.pixels[(c * sharp.height + y) * sharp.width + static_cast<std::size_t>(x)] =
            static_cast<float>(acc / static_cast<double>(taps));
      }
  return out;
}

TrainingPair make_synthetic_pair(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  io::Image sharp{size, size, std::vector<float>(3 * size * size)};
  // Background colour, then a handful of flat rectangles and a stripe band.
  double colour[3];
  for (auto& c : colour) c = 0.2 + 0.2 * unit();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < size * size; ++i) sharp.pixels[c * size * size + i] = static_cast<float>(colour[c]);
  for (int r = 0; r < 6; ++r) {
    const auto y0 = static_cast<std::size_t>(unit() * size * 0.8), x0 = static_cast<std::size_t>(unit() * size * 0.8);
    const auto h = 2 + static_cast<std::size_t>(unit() * size * 0.4), w = 2 + static_cast<std::size_t>(unit() * size * 0.4);
    for (auto& c : colour) c = unit();
    for (std::size_t y = y0; y < std::min(size, y0 + h); ++y)
      for (std::size_t x = x0; x < std::min(size, x0 + w); ++x)
        for (std::size_t c = 0; c < 3; ++c) sharp.pixels[(c * size + y) * size + x] = static_cast<float>(colour[c]);
  }
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      if ((x + 2 * y) % 8 < 2 && y > size / 2) {
        for (std::size_t c = 0; c < 3; ++c) sharp.pixels[(c * size + y) * size + x] = 0.95f;
      }
    }
  // Quantize so the in-memory pair matches what a P6 round trip gives back.
  auto snap = [](io::Image& img) {
    for (auto& v : img.pixels) v = static_cast<float>(io::quantize(v)) / 255.0f;
  };
  snap(sharp);
  auto blur = blur_horizontal(sharp, 9);
  snap(blur);
  return {"synthetic", std::move(blur), std::move(sharp)};
}

std::string TrainLog::to_csv() const {
  std::string out = "# seed " + std::to_string(seed) + "\nstep,lr,loss\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i + 1, lr[i], loss[i]);
    out += buf;
  }
  return out;
}

double trailing_mean(const std::vector<double>& losses, std::size_t end, std::size_t window) {
  if (end > losses.size() || end < window || window == 0) {
    throw std::out_of_range("trailing_mean: need " + std::to_string(window) + " losses before step " +
                            std::to_string(end));
  }
  double s = 0.0;
  for (std::size_t i = end - window; i < end; ++i) s += losses[i];
  return s / static_cast<double>(window);
}

WeightStore<float> train_demo(const RunConfig& config, const std::vector<TrainingPair>& pairs, std::size_t steps,
                              std::uint64_t seed, TrainLog* log) {
  if (pairs.empty()) throw std::invalid_argument("train_demo: no training pairs");
  auto ws = build<float>(config.model, seed);
  ws.set_requires_grad(true);
  std::vector<Tensor<float>> params;
  for (auto& [name, t] : ws.entries()) params.push_back(t);
  AdamW<float> opt(params, config.train);
  if (log) {
    *log = TrainLog{};
    log->seed = seed;
  }
  for (std::size_t step = 0; step < steps; ++step) {
    const auto& pair = pairs[step % pairs.size()];
    const auto blur = io::to_tensor<float>(pair.blur);
    const auto sharp = io::to_tensor<float>(pair.sharp);
    ws.zero_grad();
    auto loss = restoration_loss(forward(blur, ws, config.model), sharp, config.train.lambda_freq);
    backward(loss);
    const double lr = cosine_lr(step, steps, config.train.lr_start, config.train.lr_end);
    opt.step(lr);
    if (log) {
      log->lr.push_back(lr);
      log->loss.push_back(static_cast<double>(loss.item()));
    }
  }
  ws.set_requires_grad(false);
  return ws;
}

template class AdamW<float>;
template class AdamW<double>;
template Tensor<float> restoration_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> restoration_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace rst
