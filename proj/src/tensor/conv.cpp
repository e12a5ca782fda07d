#include <cmath>

#include "rst/ops.hpp"

namespace rst {

namespace {

void require_image(const Shape& s, const char* op, const char* what) {
  if (s.size() != 3) {
    throw ShapeError(std::string(op) + ": " + what + " must be [C, H, W], got " + to_string(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad) {
  require_image(x.shape(), "conv2d", "input");
  if (k.rank() != 4) throw ShapeError("conv2d: kernel must be [C_out, C_in, kh, kw], got " + to_string(k.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != ci) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(ci) +
                     " channels but kernel " + to_string(k.shape()) + " expects " + std::to_string(k.dim(1)));
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw ShapeError("conv2d: kernel " + to_string(k.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  auto xv = x.data();
  auto kv = k.data();
  std::vector<T> out(co * oh * ow, T(0));
  const long long p = static_cast<long long>(pad);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T wt = kv[((o * ci + c) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy * stride + ky) - p;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            const T* xrow = xv.data() + (c * h + static_cast<std::size_t>(iy)) * w;
            T* orow = out.data() + (o * oh + oy) * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = static_cast<long long>(ox * stride + kx) - p;
              if (ix < 0 || ix >= static_cast<long long>(w)) continue;
              orow[ox] += wt * xrow[ix];
            }
          }
        }
      }
    }
  }
  return make_result<T>(
      Shape{co, oh, ow}, std::move(out), "conv2d", {x, k},
      [x, k, ci, h, w, co, kh, kw, oh, ow, stride, p](std::span<const T> g) {
        auto* gx = grad_sink(x);
        auto* gk = grad_sink(k);
        auto xv = x.data();
        auto kv = k.data();
        const T fault = debug::fault() == debug::Fault::kConv2dKernelGrad ? T(1.1) : T(1);
        for (std::size_t o = 0; o < co; ++o) {
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t ki = ((o * ci + c) * kh + ky) * kw + kx;
                const T wt = kv[ki];
                T acc = 0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long long iy = static_cast<long long>(oy * stride + ky) - p;
                  if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                  const std::size_t xrow = (c * h + static_cast<std::size_t>(iy)) * w;
                  const T* grow = g.data() + (o * oh + oy) * ow;
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const long long ix = static_cast<long long>(ox * stride + kx) - p;
                    if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                    if (gx) (*gx)[xrow + static_cast<std::size_t>(ix)] += grow[ox] * wt;
                    acc += grow[ox] * xv[xrow + static_cast<std::size_t>(ix)];
                  }
                }
                if (gk) (*gk)[ki] += acc * fault;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride) {
  require_image(x.shape(), "conv2d_transpose", "input");
  if (k.rank() != 4) {
    throw ShapeError("conv2d_transpose: kernel must be [C_in, C_out, kh, kw], got " + to_string(k.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d_transpose: stride must be >= 1");
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0 || ci == 0) throw ShapeError("conv2d_transpose: zero-sized input " + to_string(x.shape()));
  if (k.dim(0) != ci) {
    throw ShapeError("conv2d_transpose: input " + to_string(x.shape()) + " does not match kernel " +
                     to_string(k.shape()));
  }
  const std::size_t co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h - 1) * stride + kh, ow = (w - 1) * stride + kw;
  auto xv = x.data();
  auto kv = k.data();
  std::vector<T> out(co * oh * ow, T(0));
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T wt = kv[((c * co + o) * kh + ky) * kw + kx];
          for (std::size_t iy = 0; iy < h; ++iy) {
            const T* xrow = xv.data() + (c * h + iy) * w;
            T* orow = out.data() + (o * oh + iy * stride + ky) * ow + kx;
            for (std::size_t ix = 0; ix < w; ++ix) orow[ix * stride] += wt * xrow[ix];
          }
        }
      }
    }
  }
  return make_result<T>(
      Shape{co, oh, ow}, std::move(out), "conv2d_transpose", {x, k},
      [x, k, ci, h, w, co, kh, kw, oh, ow, stride](std::span<const T> g) {
        auto* gx = grad_sink(x);
        auto* gk = grad_sink(k);
        auto xv = x.data();
        auto kv = k.data();
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t o = 0; o < co; ++o) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t ki = ((c * co + o) * kh + ky) * kw + kx;
                const T wt = kv[ki];
                T acc = 0;
                for (std::size_t iy = 0; iy < h; ++iy) {
                  const std::size_t xrow = (c * h + iy) * w;
                  const T* grow = g.data() + (o * oh + iy * stride + ky) * ow + kx;
                  for (std::size_t ix = 0; ix < w; ++ix) {
                    if (gx) (*gx)[xrow + ix] += grow[ix * stride] * wt;
                    acc += grow[ix * stride] * xv[xrow + ix];
                  }
                }
                if (gk) (*gk)[ki] += acc;
              }
            }
          }
        }
      });
}

namespace {

// Bilinear sample geometry for one (tap, pixel): four corner indices into a
// single channel plane (or npos when outside) and the fractional parts.
struct Sample {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t corner[4];
  double fy;
  double fx;
};

}  // namespace

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& k) {
  constexpr std::size_t kTaps = 9;
  require_image(x.shape(), "deform_conv2d", "input");
  require_image(offsets.shape(), "deform_conv2d", "offsets");
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  if (offsets.dim(0) != 2 * kTaps) {
    throw ShapeError("deform_conv2d: expected 18 offset groups, got " + std::to_string(offsets.dim(0)));
  }
  if (offsets.dim(1) != h || offsets.dim(2) != w) {
    throw ShapeError("deform_conv2d: offsets " + to_string(offsets.shape()) + " do not match input " +
                     to_string(x.shape()));
  }
  if (k.rank() != 4 || k.dim(1) != ci || k.dim(2) != 3 || k.dim(3) != 3) {
    throw ShapeError("deform_conv2d: kernel " + to_string(k.shape()) + " must be [C_out, " +
                     std::to_string(ci) + ", 3, 3]");
  }
  const std::size_t co = k.dim(0);
  auto off = offsets.data();
  std::vector<Sample> samples(kTaps * hw);
  for (std::size_t t = 0; t < kTaps; ++t) {
    const double ty = static_cast<double>(t / 3) - 1.0;
    const double tx = static_cast<double>(t % 3) - 1.0;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t pix = r * w + c;
        const double py = static_cast<double>(r) + ty + static_cast<double>(off[2 * t * hw + pix]);
        const double px = static_cast<double>(c) + tx + static_cast<double>(off[(2 * t + 1) * hw + pix]);
        const double y0 = std::floor(py), x0 = std::floor(px);
        Sample& s = samples[t * hw + pix];
        s.fy = py - y0;
        s.fx = px - x0;
        for (int q = 0; q < 4; ++q) {
          const double yy = y0 + (q >> 1), xx = x0 + (q & 1);
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<double>(h) && xx < static_cast<double>(w);
          s.corner[q] = inside ? static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx) : Sample::npos;
        }
      }
    }
  }
  // cols[(c * 9 + t) * hw + pix] = bilinear sample of channel c for tap t.
  auto xv = x.data();
  std::vector<T> cols(ci * kTaps * hw);
  for (std::size_t c = 0; c < ci; ++c) {
    const T* plane = xv.data() + c * hw;
    for (std::size_t t = 0; t < kTaps; ++t) {
      for (std::size_t pix = 0; pix < hw; ++pix) {
        const Sample& s = samples[t * hw + pix];
        const T fy = static_cast<T>(s.fy), fx = static_cast<T>(s.fx);
        const T wts[4] = {(T(1) - fy) * (T(1) - fx), (T(1) - fy) * fx, fy * (T(1) - fx), fy * fx};
        T v = 0;
        for (int q = 0; q < 4; ++q) {
          if (s.corner[q] != Sample::npos) v += wts[q] * plane[s.corner[q]];
        }
        cols[(c * kTaps + t) * hw + pix] = v;
      }
    }
  }
  const std::size_t depth = ci * kTaps;
  auto kv = k.data();
  std::vector<T> out(co * hw, T(0));
  for (std::size_t o = 0; o < co; ++o) {
    T* orow = out.data() + o * hw;
    for (std::size_t d = 0; d < depth; ++d) {
      const T wt = kv[o * depth + d];
      const T* crow = cols.data() + d * hw;
      for (std::size_t pix = 0; pix < hw; ++pix) orow[pix] += wt * crow[pix];
    }
  }
  return make_result<T>(
      Shape{co, h, w}, std::move(out), "deform_conv2d", {x, offsets, k},
      [x, offsets, k, ci, co, hw, depth, samples = std::move(samples), cols = std::move(cols)](
          std::span<const T> g) {
        auto* gx = grad_sink(x);
        auto* goff = grad_sink(offsets);
        auto* gk = grad_sink(k);
        auto kv = k.data();
        auto xv = x.data();
        if (gk) {
          for (std::size_t o = 0; o < co; ++o) {
            const T* grow = g.data() + o * hw;
            for (std::size_t d = 0; d < depth; ++d) {
              const T* crow = cols.data() + d * hw;
              T acc = 0;
              for (std::size_t pix = 0; pix < hw; ++pix) acc += grow[pix] * crow[pix];
              (*gk)[o * depth + d] += acc;
            }
          }
        }
        if (!gx && !goff) return;
        std::vector<T> gcols(depth * hw, T(0));
        for (std::size_t o = 0; o < co; ++o) {
          const T* grow = g.data() + o * hw;
          for (std::size_t d = 0; d < depth; ++d) {
            const T wt = kv[o * depth + d];
            T* gc = gcols.data() + d * hw;
            for (std::size_t pix = 0; pix < hw; ++pix) gc[pix] += wt * grow[pix];
          }
        }
        for (std::size_t c = 0; c < ci; ++c) {
          const T* plane = xv.data() + c * hw;
          for (std::size_t t = 0; t < kTaps; ++t) {
            const T* gc = gcols.data() + (c * kTaps + t) * hw;
            for (std::size_t pix = 0; pix < hw; ++pix) {
              const Sample& s = samples[t * hw + pix];
              const T fy = static_cast<T>(s.fy), fx = static_cast<T>(s.fx);
              if (gx) {
                const T wts[4] = {(T(1) - fy) * (T(1) - fx), (T(1) - fy) * fx, fy * (T(1) - fx), fy * fx};
                for (int q = 0; q < 4; ++q) {
                  if (s.corner[q] != Sample::npos) (*gx)[c * hw + s.corner[q]] += gc[pix] * wts[q];
                }
              }
              if (goff) {
                T v[4];
                for (int q = 0; q < 4; ++q) v[q] = s.corner[q] != Sample::npos ? plane[s.corner[q]] : T(0);
                const T dy = (T(1) - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]);
                const T dx = (T(1) - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]);
                (*goff)[2 * t * hw + pix] += gc[pix] * dy;
                (*goff)[(2 * t + 1) * hw + pix] += gc[pix] * dx;
              }
            }
          }
        }
      });
}

#define RST_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> conv2d_transpose(const Tensor<T>&, const Tensor<T>&, std::size_t);         \
  template Tensor<T> deform_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
