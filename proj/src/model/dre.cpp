#include "rst/dre.hpp"

#include <string>

#include "rst/ops.hpp"

namespace rst {

template <typename T>
Tensor<T> mask_tensor(const SectorMaskSet& masks, std::size_t sector) {
  const auto bits = masks.mask(sector);
  return Tensor<T>(Shape{masks.height, masks.width}, std::vector<T>(bits.begin(), bits.end()));
}

template <typename T>
OffsetField<T> generate_offsets(const Tensor<T>& x, const SectorMaskSet& masks,
                                const std::vector<Tensor<T>>& offset_kernels, const DreConfig& config) {
  if (x.rank() != 3 || x.dim(1) != masks.height || x.dim(2) != masks.width) {
    throw ShapeError("generate_offsets: input " + to_string(x.shape()) + " does not match " +
                     std::to_string(masks.height) + "x" + std::to_string(masks.width) + " masks");
  }
  const std::size_t expected = config.shared_offset_conv ? 1 : masks.count;
  if (offset_kernels.size() != expected) {
    throw ShapeError("generate_offsets: " + std::to_string(masks.count) + " sectors but " +
                     std::to_string(offset_kernels.size()) + " offset kernels");
  }
  OffsetField<T> field;
  for (std::size_t i = 0; i < masks.count; ++i) {
    const auto& k = offset_kernels[config.shared_offset_conv ? 0 : i];
    if (k.rank() != 4 || k.dim(0) != kOffsetGroups) {
      throw ShapeError("generate_offsets: offset kernel must be [18, C_in, 3, 3], got " + to_string(k.shape()));
    }
    field.per_sector.push_back(conv2d(mul(x, mask_tensor<T>(masks, i)), k, 1, 1));
  }
  auto stacked = stack(field.per_sector);
  field.gates = softmax(stacked, config.gate_axis == GateAxis::kSectors ? 0 : 1);
  field.fused = sum_axis(mul(field.gates, stacked), 0);
  return field;
}

template <typename T>
Tensor<T> dre_forward(const Tensor<T>& x, const DreWeights<T>& weights, const DreConfig& config) {
  if (x.rank() != 3) throw ShapeError("dre_forward: expected [C, H, W], got " + to_string(x.shape()));
  const auto grid = build_polar_grid(x.dim(1), x.dim(2));
  const auto masks = build_sector_masks(grid, config.sectors);
  auto field = generate_offsets(x, masks, weights.offset_kernels, config);
  return deform_conv2d(x, field.fused, weights.deform_kernel);
}

#define RST_INSTANTIATE(T)                                                                            \
  template Tensor<T> mask_tensor<T>(const SectorMaskSet&, std::size_t);                               \
  template OffsetField<T> generate_offsets(const Tensor<T>&, const SectorMaskSet&,                    \
                                           const std::vector<Tensor<T>>&, const DreConfig&);          \
  template Tensor<T> dre_forward(const Tensor<T>&, const DreWeights<T>&, const DreConfig&);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
