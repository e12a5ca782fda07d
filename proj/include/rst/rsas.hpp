#pragma once

#include <cstddef>
#include <numbers>
#include <vector>

#include "rst/polar.hpp"
#include "rst/tensor.hpp"

// Radial strip attention: window attention over radial strips with an
// angular relative position bias, then azimuth patch merging.
namespace rst {

enum class BiasGranularity {
  kBins,        // angles of the (radial bin, azimuth bin) token indices
  kContinuous,  // per-pixel angles; tables still addressed by bin difference
};

struct RsasConfig {
  std::size_t n_phi = 8;
  std::size_t n_r = 8;
  double theta_max = std::numbers::pi / 2;
  std::size_t heads = 1;
  BiasGranularity granularity = BiasGranularity::kBins;
};

// a/b coefficient tables. Row for relative bin index D sits at D + (N - 1).
template <typename T>
struct AngularBiasParams {
  Tensor<T> theta_a, theta_b;  // [2 N_r - 1]
  Tensor<T> phi_a, phi_b;      // [2 N_phi - 1]
};

// Projections act on row tokens: Q = tokens * query.
template <typename T>
struct AttentionWeights {
  Tensor<T> query, key, value, output;  // [d, d]
  std::size_t heads = 1;
};

template <typename T>
struct RsasWeights {
  Tensor<T> norm_scale;  // [C, 1, 1]
  Tensor<T> norm_shift;  // [C, 1, 1]
  AttentionWeights<T> attention;
  AngularBiasParams<T> bias;
};

// Bias geometry of one window: relative table rows and the trig factors of
// the relative angles for every token pair, row-major [n, n].
struct WindowBiasGeometry {
  std::size_t n = 0;
  std::vector<std::size_t> theta_row, phi_row;
  std::vector<double> sin_theta, cos_theta, sin_phi, cos_phi;
};

WindowBiasGeometry bias_geometry(const WindowLayout& layout, std::size_t window, double theta_max,
                                 BiasGranularity granularity = BiasGranularity::kBins,
                                 const PolarGrid* grid = nullptr);

// B[i, j] = a_dtheta sin(dtheta) + b_dtheta cos(dtheta) + a_dphi sin(dphi) + b_dphi cos(dphi)
template <typename T>
Tensor<T> compute_bias(const WindowBiasGeometry& geometry, const AngularBiasParams<T>& params);

template <typename T>
Tensor<T> compute_bias(const WindowLayout& layout, const AngularBiasParams<T>& params, std::size_t window,
                       double theta_max);

// softmax(Q K^T / sqrt(d_head) + B) V. tokens [n, d], bias [n, n].
// When `probabilities` is given it receives one [n, n] matrix per head.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const AttentionWeights<T>& weights, const Tensor<T>& bias,
                           std::vector<Tensor<T>>* probabilities = nullptr);

// Splits [C, H, W] into per-window token matrices [n_w, C] (empty windows
// give [0, C]).
template <typename T>
std::vector<Tensor<T>> window_partition(const Tensor<T>& features, const WindowLayout& layout);

// Inverse of window_partition: every token returns to its source pixel.
template <typename T>
Tensor<T> azimuth_patch_merge(const std::vector<Tensor<T>>& windows, const WindowLayout& layout);

// Pre-norm, per-window attention, merge, output projection, residual add.
template <typename T>
Tensor<T> rsas_forward(const Tensor<T>& features, const WindowLayout& layout, const RsasWeights<T>& weights,
                       const RsasConfig& config, std::vector<Tensor<T>>* probabilities = nullptr);

}  // namespace rst
