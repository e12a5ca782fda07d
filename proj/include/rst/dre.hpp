#pragma once

#include <cstddef>
#include <vector>

#include "rst/polar.hpp"
#include "rst/tensor.hpp"

// Dynamic radial embedding: sector-masked 3x3 convolutions produce
// deformable-convolution offsets, softmax-gated across sectors, and a
// deformable 3x3 convolution maps the image to the shallow feature.
namespace rst {

inline constexpr std::size_t kOffsetGroups = 18;  // 2 * 3 * 3

enum class GateAxis {
  kSectors,       // softmax over the sector axis at each (group, pixel)
  kOffsetGroups,  // softmax over the 18 offset groups within each sector
};

struct DreConfig {
  std::size_t sectors = 4;
  bool shared_offset_conv = false;
  GateAxis gate_axis = GateAxis::kSectors;
};

template <typename T>
struct DreWeights {
  std::vector<Tensor<T>> offset_kernels;  // one [18, C_in, 3, 3] per sector, or one if shared
  Tensor<T> deform_kernel;                // [C, C_in, 3, 3]
};

template <typename T>
struct OffsetField {
  std::vector<Tensor<T>> per_sector;  // raw offsets, each [18, H, W]
  Tensor<T> gates;                    // [N, 18, H, W]
  Tensor<T> fused;                    // [18, H, W]
};

// The mask as a [H, W] tensor of zeros and ones.
template <typename T>
Tensor<T> mask_tensor(const SectorMaskSet& masks, std::size_t sector);

template <typename T>
OffsetField<T> generate_offsets(const Tensor<T>& x, const SectorMaskSet& masks,
                                const std::vector<Tensor<T>>& offset_kernels, const DreConfig& config);

// x: [C_in, H, W] -> [C, H, W]
template <typename T>
Tensor<T> dre_forward(const Tensor<T>& x, const DreWeights<T>& weights, const DreConfig& config);

}  // namespace rst
