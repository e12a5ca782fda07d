#pragma once

#include <cstddef>
#include <vector>

#include "rst/tensor.hpp"

// Differentiable operations. Layout is row-major with axis order
// (channel, height, width) for images. Every op records a backward rule when
// any input is tracked.
namespace rst {

// ---- elementwise, with trailing-dimension broadcasting ----
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> abs(const Tensor<T>& a);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Normalizes to zero mean and unit (biased) variance along `axis`.
inline constexpr double kLayerNormEps = 1e-6;
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis = 0, double eps = kLayerNormEps);

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Removes `axis`.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis);

// ---- linear algebra ----
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// ---- indexing and layout ----
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; the backward rule scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape shape, std::vector<std::size_t> index);
// Concatenates along axis 0; trailing extents must agree.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
// Stacks equal-shaped tensors along a new leading axis.
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& parts);

// Mirror index for reflection padding of an axis of length `n`
// (edge sample not repeated, periodic beyond one reflection).
std::size_t reflect_index(long long i, std::size_t n);

// x: [C, H, W]
template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t top, std::size_t bottom,
                      std::size_t left, std::size_t right);
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t height,
               std::size_t width);

// ---- convolution ----
// x: [C_in, H, W], k: [C_out, C_in, kh, kw], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride = 1,
                 std::size_t pad = 0);
// Adjoint of conv2d with the same stride and no padding.
// x: [C_in, H, W], k: [C_in, C_out, kh, kw] -> [C_out, (H-1)*stride+kh, ...]
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride = 2);

// Deformable 3x3 convolution (v1, no modulation), same padding.
// offsets: [18, H, W]; channel 2t holds the row shift and 2t+1 the column
// shift of tap t = 3*i + j. Samples are bilinear with zeros outside.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& k);

// ---- spectral ----
// Complex tensors carry a trailing axis of extent 2 (real, imaginary).
// rfft2 transforms the last two axes: [..., H, W] -> [..., H, W/2+1, 2].
template <typename T> Tensor<T> rfft2(const Tensor<T>& x);
// Inverse of rfft2; `width` is the real-domain extent of the last axis.
template <typename T> Tensor<T> irfft2(const Tensor<T>& spectrum, std::size_t width);
// Complex product; `b` broadcasts against `a` over all but the last axis.
template <typename T> Tensor<T> complex_mul(const Tensor<T>& a, const Tensor<T>& b);
// |z| per complex entry: [..., 2] -> [...]. The gradient at 0 is taken as 0.
template <typename T> Tensor<T> complex_abs(const Tensor<T>& z);

}  // namespace rst
