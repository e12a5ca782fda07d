#include <cmath>
#include <numbers>

#include "rst/ops.hpp"

namespace rst {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace {

// For each flat index of `out`, the flat index into a tensor of shape `in`
// broadcast against it.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > lead;) {
    std::size_t d = in[i - lead];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  std::vector<std::size_t> index(numel(out));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < index.size(); ++flat) {
    index[flat] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < out[ax]) {
        offset += stride[ax];
        break;
      }
      offset -= stride[ax] * (out[ax] - 1);
      counter[ax] = 0;
    }
  }
  return index;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
  Shape shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(shape);
  const bool same = a.shape() == shape && b.shape() == shape;
  std::vector<std::size_t> ia, ib;
  if (!same) {
    ia = broadcast_index(a.shape(), shape);
    ib = broadcast_index(b.shape(), shape);
  }
  auto xa = a.data();
  auto xb = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T va = xa[same ? i : ia[i]];
    T vb = xb[same ? i : ib[i]];
    switch (kind) {
      case Binary::kAdd: out[i] = va + vb; break;
      case Binary::kSub: out[i] = va - vb; break;
      case Binary::kMul: out[i] = va * vb; break;
    }
  }
  return make_result<T>(
      std::move(shape), std::move(out), name, {a, b},
      [a, b, kind, same, ia = std::move(ia), ib = std::move(ib)](std::span<const T> g) {
        auto* ga = grad_sink(a);
        auto* gb = grad_sink(b);
        auto xa = a.data();
        auto xb = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          std::size_t ja = same ? i : ia[i];
          std::size_t jb = same ? i : ib[i];
          switch (kind) {
            case Binary::kAdd:
              if (ga) (*ga)[ja] += g[i];
              if (gb) (*gb)[jb] += g[i];
              break;
            case Binary::kSub:
              if (ga) (*ga)[ja] += g[i];
              if (gb) (*gb)[jb] -= g[i];
              break;
            case Binary::kMul:
              if (ga) (*ga)[ja] += g[i] * xb[jb];
              if (gb) (*gb)[jb] += g[i] * xa[ja];
              break;
          }
        }
      });
}

template <typename T>
Tensor<T> unary(const Tensor<T>& a, const char* name, T (*f)(T), T (*df)(T)) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result<T>(a.shape(), std::move(out), name, {a}, [a, df](std::span<const T> g) {
    auto* ga = grad_sink(a);
    if (!ga) return;
    auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i]);
  });
}

template <typename T>
constexpr T kGeluCoef = T(0.044715);

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * x * (T(1) + std::tanh(c * (x + kGeluCoef<T> * x * x * x)));
}

template <typename T>
T gelu_slope(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T u = c * (x + kGeluCoef<T> * x * x * x);
  const T t = std::tanh(u);
  const T du = c * (T(1) + T(3) * kGeluCoef<T> * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
T abs_value(T x) {
  return std::abs(x);
}

template <typename T>
T abs_slope(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a}, [a, factor](std::span<const T> g) {
    if (auto* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
    }
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary<T>(a, "abs", &abs_value<T>, &abs_slope<T>);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  return unary<T>(a, "gelu", &gelu_value<T>, &gelu_slope<T>);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, double eps) {
  const auto& shape = x.shape();
  const std::size_t len = x.dim(axis);
  if (len == 0) throw ShapeError("layer_norm over an empty axis");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t outer = x.numel() / (len * inner);
  auto v = x.data();
  std::vector<T> out(v.size());
  std::vector<T> inv_std(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mu = 0;
      for (std::size_t k = 0; k < len; ++k) mu += v[base + k * inner];
      mu /= static_cast<T>(len);
      T var = 0;
      for (std::size_t k = 0; k < len; ++k) {
        T d = v[base + k * inner] - mu;
        var += d * d;
      }
      var /= static_cast<T>(len);
      T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[o * inner + in] = rs;
      for (std::size_t k = 0; k < len; ++k) {
        out[base + k * inner] = (v[base + k * inner] - mu) * rs;
      }
    }
  }
  auto y = out;
  return make_result<T>(
      shape, std::move(out), "layer_norm", {x},
      [x, y = std::move(y), inv_std = std::move(inv_std), len, inner, outer](std::span<const T> g) {
        auto* gx = grad_sink(x);
        if (!gx) return;
        // dx = rs * (g - mean(g) - y * mean(g * y))
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mg = 0, mgy = 0;
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              mg += g[i];
              mgy += g[i] * y[i];
            }
            mg /= static_cast<T>(len);
            mgy /= static_cast<T>(len);
            const T rs = inv_std[o * inner + in];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              (*gx)[i] += rs * (g[i] - mg - y[i] * mgy);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{}, {total}, "sum", {a}, [a](std::span<const T> g) {
    if (auto* ga = grad_sink(a)) {
      for (auto& v : *ga) v += g[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  const auto& shape = a.shape();
  const std::size_t len = a.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t outer = len == 0 ? 0 : a.numel() / (len * inner);
  Shape out_shape = shape;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(numel(out_shape), T(0));
  auto v = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t in = 0; in < inner; ++in) {
        out[o * inner + in] += v[(o * len + k) * inner + in];
      }
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), "sum_axis", {a},
                        [a, len, inner, outer](std::span<const T> g) {
                          auto* ga = grad_sink(a);
                          if (!ga) return;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t k = 0; k < len; ++k) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                (*ga)[(o * len + k) * inner + in] += g[o * inner + in];
                              }
                            }
                          }
                        });
}

#define RST_INSTANTIATE(T)                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scale(const Tensor<T>&, T);                             \
  template Tensor<T> abs(const Tensor<T>&);                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, double);      \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> mean(const Tensor<T>&);                                 \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
