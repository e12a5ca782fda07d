#pragma once

#include <cstddef>

#include "rst/tensor.hpp"

// Frequency-domain feed-forward block: a learnable complex weight applied to
// the 2-D spectrum of every non-overlapping P x P patch, followed by a
// pointwise two-layer network, all inside a residual branch.
namespace rst {

struct FfnConfig {
  std::size_t patch = 8;
  std::size_t expansion = 2;
};

template <typename T>
struct FfnWeights {
  Tensor<T> norm_scale;  // [C, 1, 1]
  Tensor<T> norm_shift;  // [C, 1, 1]
  Tensor<T> spectral;    // [C, P, P/2+1, 2], initialised to 1 + 0i
  Tensor<T> expand;      // [E*C, C, 1, 1]
  Tensor<T> project;     // [C, E*C, 1, 1]
};

// Per channel and patch: irfft2(W * rfft2(patch)). Inputs whose extents are
// not multiples of P are reflection-padded at the bottom/right and cropped
// back afterwards.
template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& features, const Tensor<T>& weight, std::size_t patch);

// 1x1 convolution as a matrix product; kernel [C_out, C_in, 1, 1].
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& features, const Tensor<T>& kernel);

// F + project(gelu(expand(spectral_reweight(norm(F)))))
template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& features, const FfnWeights<T>& weights, const FfnConfig& config);

}  // namespace rst
