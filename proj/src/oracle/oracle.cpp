#include "rst/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace rst::oracle {

std::string OracleReport::to_json_line() const {
  nlohmann::json j = {{"op", op},
                      {"instance", instance},
                      {"max_abs_diff", max_abs_diff},
                      {"relative_error", relative_error},
                      {"tolerance", tolerance},
                      {"passed", passed},
                      {"excluded", excluded}};
  j["failing_index"] = failing_index ? nlohmann::json(*failing_index) : nlohmann::json(nullptr);
  return j.dump();
}

std::pair<double, std::size_t> max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: length mismatch");
  double worst = 0.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (!(d <= worst)) {  // also catches NaN
      worst = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
      at = i;
    }
  }
  return {worst, at};
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  const double diff = max_abs_diff(a, b).first;
  double scale = 1e-8;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (double v : b) scale = std::max(scale, std::abs(v));
  return diff / scale;
}

OracleReport compare_abs(std::string op, std::string instance, std::span<const double> got,
                         std::span<const double> want, double tolerance) {
  OracleReport r;
  r.op = std::move(op);
  r.instance = std::move(instance);
  auto [diff, at] = max_abs_diff(got, want);
  r.max_abs_diff = diff;
  r.relative_error = relative_error(got, want);
  r.tolerance = tolerance;
  r.passed = diff <= tolerance;
  if (!r.passed) r.failing_index = at;
  return r;
}

OracleReport compare_rel(std::string op, std::string instance, std::span<const double> got,
                         std::span<const double> want, double tolerance) {
  OracleReport r;
  r.op = std::move(op);
  r.instance = std::move(instance);
  auto [diff, at] = max_abs_diff(got, want);
  r.max_abs_diff = diff;
  r.relative_error = relative_error(got, want);
  r.tolerance = tolerance;
  r.passed = r.relative_error <= tolerance;
  if (!r.passed) r.failing_index = at;
  return r;
}

std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

std::vector<double> naive_conv2d(std::span<const double> x, std::size_t ci, std::size_t h, std::size_t w,
                                 std::span<const double> k, std::size_t co, std::size_t kh, std::size_t kw,
                                 std::size_t stride, std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(co * oh * ow, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(pad);
              const long long ix = static_cast<long long>(ox * stride + kx) - static_cast<long long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long long>(h) || ix >= static_cast<long long>(w)) continue;
              acc += k[((o * ci + c) * kh + ky) * kw + kx] * x[(c * h + iy) * w + ix];
            }
        out[(o * oh + oy) * ow + ox] = acc;
      }
  return out;
}

namespace {

double pixel_or_zero(std::span<const double> plane, std::size_t h, std::size_t w, long long r, long long c) {
  if (r < 0 || c < 0 || r >= static_cast<long long>(h) || c >= static_cast<long long>(w)) return 0.0;
  return plane[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
}

double bilinear(std::span<const double> plane, std::size_t h, std::size_t w, double y, double x) {
  const double y0 = std::floor(y), x0 = std::floor(x);
  const double dy = y - y0, dx = x - x0;
  const auto r = static_cast<long long>(y0), c = static_cast<long long>(x0);
  return (1 - dy) * (1 - dx) * pixel_or_zero(plane, h, w, r, c) + (1 - dy) * dx * pixel_or_zero(plane, h, w, r, c + 1) +
         dy * (1 - dx) * pixel_or_zero(plane, h, w, r + 1, c) + dy * dx * pixel_or_zero(plane, h, w, r + 1, c + 1);
}

}  // namespace

std::vector<double> naive_deform_conv(std::span<const double> x, std::size_t ci, std::size_t h, std::size_t w,
                                      std::span<const double> offsets, std::span<const double> k,
                                      std::size_t co) {
  std::vector<double> out(co * h * w, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t tap = i * 3 + j;
            const double dy = offsets[(2 * tap) * h * w + r * w + c];
            const double dx = offsets[(2 * tap + 1) * h * w + r * w + c];
            const double y = static_cast<double>(r) + static_cast<double>(i) - 1.0 + dy;
            const double xx = static_cast<double>(c) + static_cast<double>(j) - 1.0 + dx;
            for (std::size_t ch = 0; ch < ci; ++ch) {
              const auto plane = x.subspan(ch * h * w, h * w);
              acc += k[((o * ci + ch) * 3 + i) * 3 + j] * bilinear(plane, h, w, y, xx);
            }
          }
        out[(o * h + r) * w + c] = acc;
      }
  return out;
}

std::vector<std::complex<double>> naive_dft2(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<std::complex<double>> out(rows * cols);
  for (std::size_t u = 0; u < rows; ++u)
    for (std::size_t v = 0; v < cols; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u * r) / static_cast<double>(rows) +
                              static_cast<double>(v * c) / static_cast<double>(cols));
          acc += x[r * cols + c] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[u * cols + v] = acc;
    }
  return out;
}

namespace {

// Attention probabilities per head: [heads, n, n].
std::vector<double> attention_probs(std::span<const double> q, std::span<const double> kmat,
                                    std::span<const double> bias, std::size_t n, std::size_t d,
                                    std::size_t heads, std::uint64_t* mads) {
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(heads * n * n);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < dh; ++t) {
          dot += q[i * d + hd * dh + t] * kmat[j * d + hd * dh + t];
          if (mads) ++*mads;
        }
        logits[j] = dot * inv_sqrt + bias[i * n + j];
      }
      double hi = -std::numeric_limits<double>::infinity();
      for (double v : logits) hi = std::max(hi, v);
      double total = 0.0;
      for (double& v : logits) {
        v = std::exp(v - hi);
        total += v;
      }
      for (std::size_t j = 0; j < n; ++j) probs[(hd * n + i) * n + j] = logits[j] / total;
    }
  }
  return probs;
}

std::vector<double> project(std::span<const double> tokens, std::span<const double> p, std::size_t n,
                            std::size_t d, std::uint64_t* mads) {
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        acc += tokens[i * d + t] * p[t * d + j];
        if (mads) ++*mads;
      }
      out[i * d + j] = acc;
    }
  return out;
}

}  // namespace

std::vector<double> naive_attention(std::span<const double> tokens, std::size_t n, std::size_t d,
                                    std::span<const double> pq, std::span<const double> pk,
                                    std::span<const double> pv, std::span<const double> bias,
                                    std::size_t heads, std::uint64_t* multiply_adds) {
  const auto q = project(tokens, pq, n, d, multiply_adds);
  const auto kmat = project(tokens, pk, n, d, multiply_adds);
  const auto v = project(tokens, pv, n, d, multiply_adds);
  const auto probs = attention_probs(q, kmat, bias, n, d, heads, multiply_adds);
  const std::size_t dh = d / heads;
  std::vector<double> out(n * d, 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < dh; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          acc += probs[(hd * n + i) * n + j] * v[j * d + hd * dh + t];
          if (multiply_adds) ++*multiply_adds;
        }
        out[i * d + hd * dh + t] = acc;
      }
  return out;
}

std::vector<double> naive_attention_weights(std::span<const double> tokens, std::size_t n, std::size_t d,
                                            std::span<const double> pq, std::span<const double> pk,
                                            std::span<const double> bias, std::size_t heads) {
  const auto q = project(tokens, pq, n, d, nullptr);
  const auto kmat = project(tokens, pk, n, d, nullptr);
  return attention_probs(q, kmat, bias, n, d, heads, nullptr);
}

std::vector<PolarPixel> naive_polar(std::size_t h, std::size_t w) {
  std::vector<PolarPixel> out(h * w);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double up = cy - static_cast<double>(r);
      const double right = static_cast<double>(c) - cx;
      double az = 0.0;
      if (up != 0.0 || right != 0.0) {
        az = std::atan2(up, right);
        if (az < 0.0) az += 2.0 * std::numbers::pi;
        if (az >= 2.0 * std::numbers::pi) az = 0.0;
      }
      out[r * w + c] = {az, std::sqrt(up * up + right * right)};
    }
  return out;
}

namespace {

std::size_t bin_of(double value, double extent, std::size_t bins) {
  if (extent <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::floor(value * static_cast<double>(bins) / extent));
  return std::min(b, bins - 1);
}

}  // namespace

std::vector<double> naive_generate_offsets(std::span<const double> x, std::size_t ci, std::size_t h,
                                           std::size_t w, const std::vector<std::vector<double>>& kernels) {
  const std::size_t sectors = kernels.size();
  const auto polar = naive_polar(h, w);
  std::vector<std::vector<double>> raw;
  for (std::size_t s = 0; s < sectors; ++s) {
    std::vector<double> masked(x.begin(), x.end());
    for (std::size_t ch = 0; ch < ci; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        if (bin_of(polar[p].azimuth, 2.0 * std::numbers::pi, sectors) != s) masked[ch * h * w + p] = 0.0;
      }
    raw.push_back(naive_conv2d(masked, ci, h, w, kernels[s], 18, 3, 3, 1, 1));
  }
  std::vector<double> out(18 * h * w, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sectors; ++s) hi = std::max(hi, raw[s][i]);
    double total = 0.0;
    for (std::size_t s = 0; s < sectors; ++s) total += std::exp(raw[s][i] - hi);
    for (std::size_t s = 0; s < sectors; ++s) out[i] += std::exp(raw[s][i] - hi) / total * raw[s][i];
  }
  return out;
}

std::vector<double> naive_rsas(std::span<const double> f, std::size_t c, std::size_t h, std::size_t w,
                               const RsasParams& p) {
  const std::size_t hw = h * w;
  const auto polar = naive_polar(h, w);
  double r_max = 0.0;
  for (const auto& px : polar) r_max = std::max(r_max, px.radius);
  std::vector<std::size_t> az(hw), rad(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    az[i] = bin_of(polar[i].azimuth, 2.0 * std::numbers::pi, p.n_phi);
    rad[i] = bin_of(polar[i].radius, r_max, p.n_r);
  }
  // Tokens [hw, c] after per-pixel channel normalization.
  std::vector<double> tokens(hw * c);
  for (std::size_t i = 0; i < hw; ++i) {
    double mu = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) mu += f[ch * hw + i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) var += (f[ch * hw + i] - mu) * (f[ch * hw + i] - mu);
    var /= static_cast<double>(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      tokens[i * c + ch] = (f[ch * hw + i] - mu) / std::sqrt(var + p.eps) * p.gamma[ch] + p.beta[ch];
    }
  }
  std::vector<double> bias(hw * hw, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t j = 0; j < hw; ++j) {
      if (az[i] != az[j]) continue;
      const double ti = p.theta_max * (static_cast<double>(rad[i]) + 0.5) / static_cast<double>(p.n_r);
      const double tj = p.theta_max * (static_cast<double>(rad[j]) + 0.5) / static_cast<double>(p.n_r);
      const double fi = 2.0 * std::numbers::pi * (static_cast<double>(az[i]) + 0.5) / static_cast<double>(p.n_phi);
      const double fj = 2.0 * std::numbers::pi * (static_cast<double>(az[j]) + 0.5) / static_cast<double>(p.n_phi);
      const std::size_t rt = rad[i] + p.n_r - 1 - rad[j];
      const std::size_t rp = az[i] + p.n_phi - 1 - az[j];
      bias[i * hw + j] = p.theta_a[rt] * std::sin(ti - tj) + p.theta_b[rt] * std::cos(ti - tj) +
                         p.phi_a[rp] * std::sin(fi - fj) + p.phi_b[rp] * std::cos(fi - fj);
    }
  const auto mixed = naive_attention(tokens, hw, c, p.pq, p.pk, p.pv, bias, p.heads);
  const auto projected = naive_matmul(mixed, p.po, hw, c, c);
  std::vector<double> out(f.begin(), f.end());
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + i] += projected[i * c + ch];
  return out;
}

FdEstimate finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                            std::vector<double> point, std::span<const std::size_t> indices, double eps,
                            double kink_tol) {
  auto eval = [&](std::span<const double> at) {
    const double v = f(at);
    if (!std::isfinite(v)) throw std::domain_error("finite_diff_grad: function returned a non-finite value");
    return v;
  };
  FdEstimate est;
  est.grad.reserve(indices.size());
  est.kink.reserve(indices.size());
  const double centre = eval(point);
  for (std::size_t idx : indices) {
    const double saved = point[idx];
    point[idx] = saved + eps;
    const double up = eval(point);
    point[idx] = saved - eps;
    const double down = eval(point);
    point[idx] = saved;
    const double forward = (up - centre) / eps;
    const double backward = (centre - down) / eps;
    est.grad.push_back((up - down) / (2.0 * eps));
    const double scale = std::max({1.0, std::abs(forward), std::abs(backward)});
    est.kink.push_back(std::abs(forward - backward) > kink_tol * scale);
  }
  return est;
}

OracleReport compare_gradient(std::string op, std::string instance, std::span<const double> analytic,
                              const FdEstimate& estimate, double tolerance) {
  std::vector<double> a, b;
  std::vector<std::size_t> where;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (estimate.kink[i]) {
      ++excluded;
      continue;
    }
    a.push_back(analytic[i]);
    b.push_back(estimate.grad[i]);
    where.push_back(i);
  }
  OracleReport r = compare_rel(std::move(op), std::move(instance), a, b, tolerance);
  r.excluded = excluded;
  if (r.failing_index) r.failing_index = where[*r.failing_index];
  return r;
}

}  // namespace rst::oracle
