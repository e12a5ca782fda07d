#include "rst/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "rst/ops.hpp"

namespace rst {

namespace fft {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

void radix2(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles are evaluated directly rather than by recurrence so that
      // rounding does not accumulate along a stage.
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const Complex tw(std::cos(ang), std::sin(ang));
      for (std::size_t i = 0; i < n; i += len) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * tw;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

void direct(std::span<Complex> a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += a[t] * Complex(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

}  // namespace

void transform(std::span<Complex> data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_power_of_two(data.size())) {
    radix2(data, inverse);
  } else {
    direct(data, inverse);
  }
}

void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse) {
  for (std::size_t r = 0; r < rows; ++r) transform(data.subspan(r * cols, cols), inverse);
  std::vector<Complex> column(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = data[r * cols + c];
    transform(column, inverse);
    for (std::size_t r = 0; r < rows; ++r) data[r * cols + c] = column[r];
  }
}

}  // namespace fft

namespace {

using fft::Complex;

struct Planes {
  std::size_t batch;
  std::size_t rows;
  std::size_t cols;
};

Planes real_planes(const Shape& s, const char* op) {
  if (s.size() < 2) throw ShapeError(std::string(op) + ": needs rank >= 2, got " + to_string(s));
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  if (rows == 0 || cols == 0) throw ShapeError(std::string(op) + ": empty plane in " + to_string(s));
  return {numel(s) / (rows * cols), rows, cols};
}

// Half-spectrum [rows, cols/2+1] -> full real plane:
//   out = Re(sum_{u, v<=cols/2} weight_v * Z[u,v] e^{+i theta}) * norm
// weight_v is 1 everywhere when `hermitian_weights` is false, and the
// irfft column multiplicities (1 for DC / Nyquist, 2 otherwise) when true.
template <typename T>
void half_to_real(const T* spec, T* out, std::size_t rows, std::size_t cols, bool hermitian_weights,
                  double norm) {
  const std::size_t half = cols / 2 + 1;
  std::vector<Complex> z(rows * cols, Complex(0, 0));
  for (std::size_t u = 0; u < rows; ++u) {
    for (std::size_t v = 0; v < half; ++v) {
      double wt = 1.0;
      if (hermitian_weights) wt = (v == 0 || (cols % 2 == 0 && v == cols / 2)) ? 1.0 : 2.0;
      const std::size_t i = (u * half + v) * 2;
      z[u * cols + v] = wt * Complex(static_cast<double>(spec[i]), static_cast<double>(spec[i + 1]));
    }
  }
  fft::transform2d(z, rows, cols, true);
  for (std::size_t i = 0; i < rows * cols; ++i) out[i] = static_cast<T>(z[i].real() * norm);
}

// Real plane -> half-spectrum, optionally scaling column v by weight_v * norm.
template <typename T>
void real_to_half(const T* plane, T* spec, std::size_t rows, std::size_t cols, bool hermitian_weights,
                  double norm) {
  const std::size_t half = cols / 2 + 1;
  std::vector<Complex> z(rows * cols);
  for (std::size_t i = 0; i < rows * cols; ++i) z[i] = Complex(static_cast<double>(plane[i]), 0.0);
  fft::transform2d(z, rows, cols, false);
  for (std::size_t u = 0; u < rows; ++u) {
    for (std::size_t v = 0; v < half; ++v) {
      double wt = norm;
      if (hermitian_weights) wt *= (v == 0 || (cols % 2 == 0 && v == cols / 2)) ? 1.0 : 2.0;
      const std::size_t i = (u * half + v) * 2;
      spec[i] = static_cast<T>(z[u * cols + v].real() * wt);
      spec[i + 1] = static_cast<T>(z[u * cols + v].imag() * wt);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> rfft2(const Tensor<T>& x) {
  const Planes p = real_planes(x.shape(), "rfft2");
  const std::size_t half = p.cols / 2 + 1;
  Shape shape = x.shape();
  shape.back() = half;
  shape.push_back(2);
  std::vector<T> out(p.batch * p.rows * half * 2);
  auto xv = x.data();
  for (std::size_t b = 0; b < p.batch; ++b) {
    real_to_half(xv.data() + b * p.rows * p.cols, out.data() + b * p.rows * half * 2, p.rows, p.cols,
                 false, 1.0);
  }
  return make_result<T>(std::move(shape), std::move(out), "rfft2", {x}, [x, p, half](std::span<const T> g) {
    auto* gx = grad_sink(x);
    if (!gx) return;
    std::vector<T> plane(p.rows * p.cols);
    for (std::size_t b = 0; b < p.batch; ++b) {
      half_to_real(g.data() + b * p.rows * half * 2, plane.data(), p.rows, p.cols, false, 1.0);
      T* dst = gx->data() + b * p.rows * p.cols;
      for (std::size_t i = 0; i < plane.size(); ++i) dst[i] += plane[i];
    }
  });
}

template <typename T>
Tensor<T> irfft2(const Tensor<T>& spectrum, std::size_t width) {
  const Shape& s = spectrum.shape();
  if (s.size() < 3 || s.back() != 2) {
    throw ShapeError("irfft2: expected [..., H, W/2+1, 2], got " + to_string(s));
  }
  const std::size_t rows = s[s.size() - 3], half = s[s.size() - 2];
  if (width == 0 || half != width / 2 + 1) {
    throw ShapeError("irfft2: half-spectrum width " + std::to_string(half) + " does not match width " +
                     std::to_string(width));
  }
  const Planes p{numel(s) / (rows * half * 2), rows, width};
  Shape shape(s.begin(), s.end() - 1);
  shape.back() = width;
  const double norm = 1.0 / static_cast<double>(rows * width);
  std::vector<T> out(p.batch * rows * width);
  auto sv = spectrum.data();
  for (std::size_t b = 0; b < p.batch; ++b) {
    half_to_real(sv.data() + b * rows * half * 2, out.data() + b * rows * width, rows, width, true, norm);
  }
  return make_result<T>(std::move(shape), std::move(out), "irfft2", {spectrum},
                        [spectrum, p, half, norm](std::span<const T> g) {
                          auto* gs = grad_sink(spectrum);
                          if (!gs) return;
                          std::vector<T> spec(p.rows * half * 2);
                          for (std::size_t b = 0; b < p.batch; ++b) {
                            real_to_half(g.data() + b * p.rows * p.cols, spec.data(), p.rows, p.cols, true, norm);
                            T* dst = gs->data() + b * p.rows * half * 2;
                            for (std::size_t i = 0; i < spec.size(); ++i) dst[i] += spec[i];
                          }
                        });
}

template <typename T>
Tensor<T> complex_mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || b.rank() == 0 || a.shape().back() != 2 || b.shape().back() != 2) {
    throw ShapeError("complex_mul: operands need a trailing axis of 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const Shape as(a.shape().begin(), a.shape().end() - 1);
  const Shape bs(b.shape().begin(), b.shape().end() - 1);
  if (broadcast_shape(as, bs) != as) {
    throw ShapeError("complex_mul: " + to_string(b.shape()) + " does not broadcast to " + to_string(a.shape()));
  }
  // Index of the b entry paired with each a entry.
  const std::size_t n = numel(as);
  std::vector<std::size_t> ib(n);
  {
    const std::size_t lead = as.size() - bs.size();
    std::vector<std::size_t> stride(as.size(), 0);
    std::size_t st = 1;
    for (std::size_t i = as.size(); i-- > lead;) {
      stride[i] = bs[i - lead] == 1 ? 0 : st;
      st *= bs[i - lead];
    }
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t rem = flat, off = 0;
      for (std::size_t ax = as.size(); ax-- > 0;) {
        off += (rem % as[ax]) * stride[ax];
        rem /= as[ax];
      }
      ib[flat] = off;
    }
  }
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const T ar = av[2 * i], ai = av[2 * i + 1];
    const T br = bv[2 * ib[i]], bi = bv[2 * ib[i] + 1];
    out[2 * i] = ar * br - ai * bi;
    out[2 * i + 1] = ar * bi + ai * br;
  }
  return make_result<T>(a.shape(), std::move(out), "complex_mul", {a, b},
                        [a, b, ib = std::move(ib)](std::span<const T> g) {
                          auto* ga = grad_sink(a);
                          auto* gb = grad_sink(b);
                          auto av = a.data();
                          auto bv = b.data();
                          for (std::size_t i = 0; i < ib.size(); ++i) {
                            const T gr = g[2 * i], gi = g[2 * i + 1];
                            const std::size_t j = ib[i];
                            if (ga) {
                              const T br = bv[2 * j], bi = bv[2 * j + 1];
                              (*ga)[2 * i] += gr * br + gi * bi;
                              (*ga)[2 * i + 1] += gi * br - gr * bi;
                            }
                            if (gb) {
                              const T ar = av[2 * i], ai = av[2 * i + 1];
                              (*gb)[2 * j] += gr * ar + gi * ai;
                              (*gb)[2 * j + 1] += gi * ar - gr * ai;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> complex_abs(const Tensor<T>& z) {
  if (z.rank() == 0 || z.shape().back() != 2) {
    throw ShapeError("complex_abs: expected a trailing axis of 2, got " + to_string(z.shape()));
  }
  Shape shape(z.shape().begin(), z.shape().end() - 1);
  const std::size_t n = numel(shape);
  auto v = z.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::hypot(v[2 * i], v[2 * i + 1]);
  auto mag = out;
  return make_result<T>(std::move(shape), std::move(out), "complex_abs", {z},
                        [z, mag = std::move(mag)](std::span<const T> g) {
                          auto* gz = grad_sink(z);
                          if (!gz) return;
                          auto v = z.data();
                          for (std::size_t i = 0; i < mag.size(); ++i) {
                            if (mag[i] == T(0)) continue;
                            (*gz)[2 * i] += g[i] * v[2 * i] / mag[i];
                            (*gz)[2 * i + 1] += g[i] * v[2 * i + 1] / mag[i];
                          }
                        });
}

#define RST_INSTANTIATE(T)                                               \
  template Tensor<T> rfft2(const Tensor<T>&);                            \
  template Tensor<T> irfft2(const Tensor<T>&, std::size_t);              \
  template Tensor<T> complex_mul(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> complex_abs(const Tensor<T>&);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
