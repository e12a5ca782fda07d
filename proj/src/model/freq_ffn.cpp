#include "rst/freq_ffn.hpp"

#include <string>

#include "rst/ops.hpp"

namespace rst {

template <typename T>
Tensor<T> spectral_reweight(const Tensor<T>& features, const Tensor<T>& weight, std::size_t patch) {
  if (features.rank() != 3) throw ShapeError("spectral_reweight: expected [C, H, W], got " + to_string(features.shape()));
  if (patch == 0) throw ShapeError("spectral_reweight: patch size must be >= 1");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t half = patch / 2 + 1;
  if (weight.shape() != Shape{c, patch, half, 2}) {
    throw ShapeError("spectral_reweight: weight " + to_string(weight.shape()) + " does not match " +
                     to_string(Shape{c, patch, half, 2}));
  }
  const std::size_t hp = (h + patch - 1) / patch * patch, wp = (w + patch - 1) / patch * patch;
  auto padded = pad_reflect(features, 0, hp - h, 0, wp - w);
  const std::size_t nh = hp / patch, nw = wp / patch;
  // [C, Hp, Wp] <-> [C, nh, nw, P, P]
  std::vector<std::size_t> to_patch(c * hp * wp);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t by = 0; by < nh; ++by)
      for (std::size_t bx = 0; bx < nw; ++bx)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) {
            const std::size_t dst = (((ch * nh + by) * nw + bx) * patch + y) * patch + x;
            to_patch[dst] = (ch * hp + by * patch + y) * wp + bx * patch + x;
          }
  std::vector<std::size_t> from_patch(to_patch.size());
  for (std::size_t i = 0; i < to_patch.size(); ++i) from_patch[to_patch[i]] = i;
  auto patches = gather(padded, Shape{c, nh, nw, patch, patch}, std::move(to_patch));
  auto spectrum = complex_mul(rfft2(patches), reshape(weight, Shape{c, 1, 1, patch, half, 2}));
  auto restored = gather(irfft2(spectrum, patch), Shape{c, hp, wp}, std::move(from_patch));
  return crop(restored, 0, 0, h, w);
}

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& features, const Tensor<T>& kernel) {
  if (features.rank() != 3) throw ShapeError("pointwise_conv: expected [C, H, W], got " + to_string(features.shape()));
  if (kernel.rank() != 4 || kernel.dim(2) != 1 || kernel.dim(3) != 1 || kernel.dim(1) != features.dim(0)) {
    throw ShapeError("pointwise_conv: kernel " + to_string(kernel.shape()) + " does not match features " +
                     to_string(features.shape()));
  }
  const std::size_t h = features.dim(1), w = features.dim(2);
  auto flat = reshape(features, Shape{features.dim(0), h * w});
  auto out = matmul(reshape(kernel, Shape{kernel.dim(0), kernel.dim(1)}), flat);
  return reshape(out, Shape{kernel.dim(0), h, w});
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& features, const FfnWeights<T>& weights, const FfnConfig& config) {
  if (features.rank() != 3 || weights.norm_scale.numel() != features.dim(0)) {
    throw ShapeError("ffn_forward: features " + to_string(features.shape()) + " do not match weights for " +
                     std::to_string(weights.norm_scale.numel()) + " channels");
  }
  auto normed = add(mul(layer_norm(features, 0), weights.norm_scale), weights.norm_shift);
  auto spectral = spectral_reweight(normed, weights.spectral, config.patch);
  auto hidden = gelu(pointwise_conv(spectral, weights.expand));
  return add(features, pointwise_conv(hidden, weights.project));
}

#define RST_INSTANTIATE(T)                                                                  \
  template Tensor<T> spectral_reweight(const Tensor<T>&, const Tensor<T>&, std::size_t);    \
  template Tensor<T> pointwise_conv(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> ffn_forward(const Tensor<T>&, const FfnWeights<T>&, const FfnConfig&);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
