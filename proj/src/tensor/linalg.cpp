#include <algorithm>
#include <cmath>

#include "rst/ops.hpp"

namespace rst {

namespace {

// c[m x n] += a[m x k] * b[k x n], all row-major.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] * b^T, b is [k x n].
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a^T * g, a is [m x k], g is [m x n].
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* row = c + p * n;
      const T* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * grow[j];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result<T>(Shape{m, n}, std::move(out), "matmul", {a, b},
                        [a, b, m, k, n](std::span<const T> g) {
                          if (auto* ga = grad_sink(a)) gemm_nt(g.data(), b.data().data(), ga->data(), m, k, n);
                          if (auto* gb = grad_sink(b)) gemm_tn(a.data().data(), g.data(), gb->data(), m, k, n);
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose needs a rank-2 tensor, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> index(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) index[i * r + j] = j * c + i;
  }
  return gather(a, Shape{c, r}, std::move(index));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto& shape = x.shape();
  const std::size_t len = x.dim(axis);
  if (len == 0) throw ShapeError("softmax over an empty axis");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t outer = x.numel() / (len * inner);
  auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T hi = v[base];
      for (std::size_t k = 1; k < len; ++k) hi = std::max(hi, v[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        T e = std::exp(v[base + k * inner] - hi);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  auto y = out;
  return make_result<T>(shape, std::move(out), "softmax", {x},
                        [x, y = std::move(y), len, inner, outer](std::span<const T> g) {
                          auto* gx = grad_sink(x);
                          if (!gx) return;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * len * inner + in;
                              T dot = 0;
                              for (std::size_t k = 0; k < len; ++k) {
                                dot += g[base + k * inner] * y[base + k * inner];
                              }
                              for (std::size_t k = 0; k < len; ++k) {
                                const std::size_t i = base + k * inner;
                                (*gx)[i] += y[i] * (g[i] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {a}, [a](std::span<const T> g) {
    if (auto* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape shape, std::vector<std::size_t> index) {
  if (numel(shape) != index.size()) {
    throw ShapeError("gather index has " + std::to_string(index.size()) +
                     " entries for shape " + to_string(shape));
  }
  auto v = a.data();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v.size()) {
      throw ShapeError("gather index " + std::to_string(index[i]) + " out of range for shape " +
                       to_string(a.shape()));
    }
    out[i] = v[index[i]];
  }
  return make_result<T>(std::move(shape), std::move(out), "gather", {a},
                        [a, index = std::move(index)](std::span<const T> g) {
                          if (auto* ga = grad_sink(a)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[index[i]] += g[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat needs rank >= 1");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: shape " + to_string(p.shape()) + " does not match " + to_string(shape));
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>(std::move(shape), std::move(out), "concat", parts, [parts](std::span<const T> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (auto* gp = grad_sink(p)) {
        for (std::size_t i = 0; i < p.numel(); ++i) (*gp)[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  const Shape& first = parts.front().shape();
  std::vector<Tensor<T>> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != first) {
      throw ShapeError("stack: shape " + to_string(p.shape()) + " does not match " + to_string(first));
    }
    Shape s{1};
    s.insert(s.end(), first.begin(), first.end());
    rows.push_back(reshape(p, s));
  }
  return concat(rows);
}

std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - m);
}

template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                      std::size_t right) {
  if (x.rank() != 3) throw ShapeError("pad_reflect expects [C, H, W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) throw ShapeError("pad_reflect of an empty image");
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  const std::size_t oh = h + top + bottom, ow = w + left + right;
  std::vector<std::size_t> index(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < oh; ++r) {
      const std::size_t sr = reflect_index(static_cast<long long>(r) - static_cast<long long>(top), h);
      for (std::size_t col = 0; col < ow; ++col) {
        const std::size_t sc = reflect_index(static_cast<long long>(col) - static_cast<long long>(left), w);
        index[(ch * oh + r) * ow + col] = (ch * h + sr) * w + sc;
      }
    }
  }
  return gather(x, Shape{c, oh, ow}, std::move(index));
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t height,
               std::size_t width) {
  if (x.rank() != 3) throw ShapeError("crop expects [C, H, W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (top + height > h || left + width > w) {
    throw ShapeError("crop window exceeds image of shape " + to_string(x.shape()));
  }
  if (top == 0 && left == 0 && height == h && width == w) return x;
  std::vector<std::size_t> index(c * height * width);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t col = 0; col < width; ++col) {
        index[(ch * height + r) * width + col] = (ch * h + top + r) * w + left + col;
      }
    }
  }
  return gather(x, Shape{c, height, width}, std::move(index));
}

#define RST_INSTANTIATE(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> transpose(const Tensor<T>&);                                       \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                  \
  template Tensor<T> gather(const Tensor<T>&, Shape, std::vector<std::size_t>);         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> pad_reflect(const Tensor<T>&, std::size_t, std::size_t, std::size_t, \
                                 std::size_t);                                          \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
