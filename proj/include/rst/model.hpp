#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rst/dre.hpp"
#include "rst/freq_ffn.hpp"
#include "rst/rsas.hpp"
#include "rst/tensor.hpp"

namespace rst {

enum class Precision { kF32, kF64 };

struct ModelConfig {
  std::size_t levels = 3;
  std::vector<std::size_t> blocks{6, 6, 12};
  std::size_t channels = 32;  // level l runs at channels * 2^l
  std::size_t sectors = 4;
  std::vector<std::size_t> n_phi{8, 8, 8};
  std::vector<std::size_t> n_r{8, 8, 8};
  double theta_max = std::numbers::pi / 2;
  std::size_t patch = 8;
  std::size_t heads = 1;
  std::size_t ffn_expansion = 2;
  bool conv_bias = false;
  bool shared_offset_conv = false;
  GateAxis gate_axis = GateAxis::kSectors;
  BiasGranularity bias_granularity = BiasGranularity::kBins;
  Precision precision = Precision::kF32;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t width(std::size_t level) const { return channels << level; }
  // Spatial extents are padded to a multiple of this.
  std::size_t size_multiple() const { return (std::size_t{1} << (levels - 1)) * patch; }

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kImageChannels = 3;

// Named parameters in deterministic insertion order
// ("level.block.layer.param").
template <typename T>
class WeightStore {
 public:
  void add(std::string name, Tensor<T> tensor);
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }

  void set_requires_grad(bool on);
  void zero_grad();

  template <typename U>
  WeightStore<U> cast() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Seeded initialisation: offset convolutions zero, other kernels uniform in
// +-1/sqrt(fan_in), norms at identity, spectral weights 1 + 0i, bias tables
// uniform in +-0.02, conv biases zero.
template <typename T>
WeightStore<T> build(const ModelConfig& config, std::uint64_t seed);

// Parameter total implied by the configuration, without building.
std::size_t expected_parameter_count(const ModelConfig& config);

// Sub-module views into a store.
template <typename T>
DreWeights<T> dre_weights(const WeightStore<T>& ws, const ModelConfig& config);
template <typename T>
FfnWeights<T> ffn_weights(const WeightStore<T>& ws, const std::string& prefix);
template <typename T>
RsasWeights<T> rsas_weights(const WeightStore<T>& ws, const std::string& prefix, const ModelConfig& config);

// Intermediate tensors exposed for structural checks.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> encoder_outputs;  // per level
  Tensor<T> residual;                      // R, cropped to the input size
};

// X + R. image: [3, H, W] with H, W >= 2^(levels-1).
template <typename T>
Tensor<T> forward(const Tensor<T>& image, const WeightStore<T>& ws, const ModelConfig& config,
                  ForwardTrace<T>* trace = nullptr);

// ---- accounting (multiply-adds) ----
struct FlopRow {
  std::string module;
  std::uint64_t multiply_adds = 0;
};

struct FlopTable {
  std::vector<FlopRow> rows;
  std::uint64_t total() const;
  std::uint64_t at(const std::string& module) const;
};

std::uint64_t conv_multiply_adds(std::size_t out_h, std::size_t out_w, std::size_t c_out, std::size_t c_in,
                                 std::size_t kh, std::size_t kw);
// 3 n d^2 (Q, K, V) + 2 n^2 d (logits and mixing) summed over windows.
std::uint64_t attention_multiply_adds(const WindowLayout& layout, std::size_t width);
// 5 N log2 N for an N-point complex transform.
std::uint64_t fft_flops(std::size_t points);

// Counts on the padded extents the model actually runs on. Layer norms,
// GELU, and softmax exponentials are not counted.
FlopTable count_flops(const ModelConfig& config, std::size_t height, std::size_t width);

}  // namespace rst
