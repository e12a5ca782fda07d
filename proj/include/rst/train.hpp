#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rst/config.hpp"
#include "rst/io.hpp"
#include "rst/model.hpp"

namespace rst {

// Decoupled weight decay: w -= lr * wd * w, then the bias-corrected Adam step.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, const TrainConfig& hyper);
  // Applies one update from the current grads; parameters without a grad
  // are only decayed.
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  TrainConfig hyper_;
  std::size_t t_ = 0;
};

// step in [0, total): lr_start at step 0, lr_end at step total - 1.
double cosine_lr(std::size_t step, std::size_t total, double lr_start, double lr_end);

// mean |pred - target| + lambda * mean | |F(pred)| - |F(target)| |
template <typename T>
Tensor<T> restoration_loss(const Tensor<T>& pred, const Tensor<T>& target, double lambda_freq);

// 10 log10(1 / MSE) for images in [0, 1]; infinity when identical.
double psnr(std::span<const float> a, std::span<const float> b);

struct TrainingPair {
  std::string name;
  io::Image blur;
  io::Image sharp;
};

// Pairs "<name>_blur.{ppm,png}" with "<name>_sharp.{ppm,png}", sorted by name.
std::vector<TrainingPair> load_pairs(const std::filesystem::path& dir);

// Seeded sharp pattern and its blur by a horizontal 9-tap box kernel
// (edge samples clamped).
TrainingPair make_synthetic_pair(std::size_t size, std::uint64_t seed);
io::Image blur_horizontal(const io::Image& sharp, std::size_t taps);

struct TrainLog {
  std::uint64_t seed = 0;
  std::vector<double> lr;
  std::vector<double> loss;
  std::string to_csv() const;
};

// Single-image AdamW loop, batch of one, cycling through the pairs.
WeightStore<float> train_demo(const RunConfig& config, const std::vector<TrainingPair>& pairs, std::size_t steps,
                              std::uint64_t seed, TrainLog* log);

// Mean of losses[end - 10, end).
double trailing_mean(const std::vector<double>& losses, std::size_t end, std::size_t window = 10);

}  // namespace rst
