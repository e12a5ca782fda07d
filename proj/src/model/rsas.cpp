#include "rst/rsas.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "rst/ops.hpp"

namespace rst {

WindowBiasGeometry bias_geometry(const WindowLayout& layout, std::size_t window, double theta_max,
                                 BiasGranularity granularity, const PolarGrid* grid) {
  if (window >= layout.windows.size()) throw std::out_of_range("bias_geometry: window out of range");
  if (granularity == BiasGranularity::kContinuous && grid == nullptr) {
    throw std::invalid_argument("bias_geometry: continuous angles need the polar grid");
  }
  const auto& tokens = layout.windows[window];
  const std::size_t n = tokens.size();
  const auto rel = relative_angles(token_angles(layout.n_r, layout.n_phi, theta_max));
  WindowBiasGeometry g;
  g.n = n;
  g.theta_row.resize(n * n);
  g.phi_row.resize(n * n);
  g.sin_theta.resize(n * n);
  g.cos_theta.resize(n * n);
  g.sin_phi.resize(n * n);
  g.cos_phi.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pi = tokens[i];
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t pj = tokens[j];
      const std::size_t ri = layout.radial_bin[pi], rj = layout.radial_bin[pj];
      const std::size_t ai = layout.azimuth_bin[pi], aj = layout.azimuth_bin[pj];
      double dt, dp;
      if (granularity == BiasGranularity::kBins) {
        dt = rel.d_theta[ri * layout.n_r + rj];
        dp = rel.d_phi[ai * layout.n_phi + aj];
      } else {
        dt = theta_max * (grid->radius[pi] - grid->radius[pj]) / (grid->r_max > 0 ? grid->r_max : 1.0);
        dp = grid->azimuth[pi] - grid->azimuth[pj];
      }
      const std::size_t k = i * n + j;
      g.theta_row[k] = ri + layout.n_r - 1 - rj;
      g.phi_row[k] = ai + layout.n_phi - 1 - aj;
      g.sin_theta[k] = std::sin(dt);
      g.cos_theta[k] = std::cos(dt);
      g.sin_phi[k] = std::sin(dp);
      g.cos_phi[k] = std::cos(dp);
    }
  }
  return g;
}

namespace {

template <typename T>
Tensor<T> constant(const std::vector<double>& v, std::size_t n) {
  return Tensor<T>(Shape{n, n}, std::vector<T>(v.begin(), v.end()));
}

template <typename T>
void check_table(const Tensor<T>& t, const std::vector<std::size_t>& rows, const char* name) {
  for (auto r : rows) {
    if (r >= t.numel()) {
      throw ShapeError(std::string("compute_bias: relative index ") + std::to_string(r) + " outside the " +
                       name + " table of " + std::to_string(t.numel()) + " rows");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> compute_bias(const WindowBiasGeometry& g, const AngularBiasParams<T>& params) {
  const std::size_t n = g.n;
  check_table(params.theta_a, g.theta_row, "theta_a");
  check_table(params.theta_b, g.theta_row, "theta_b");
  check_table(params.phi_a, g.phi_row, "phi_a");
  check_table(params.phi_b, g.phi_row, "phi_b");
  auto radial = add(mul(gather(params.theta_a, Shape{n, n}, g.theta_row), constant<T>(g.sin_theta, n)),
                    mul(gather(params.theta_b, Shape{n, n}, g.theta_row), constant<T>(g.cos_theta, n)));
  auto azimuth = add(mul(gather(params.phi_a, Shape{n, n}, g.phi_row), constant<T>(g.sin_phi, n)),
                     mul(gather(params.phi_b, Shape{n, n}, g.phi_row), constant<T>(g.cos_phi, n)));
  return add(radial, azimuth);
}

template <typename T>
Tensor<T> compute_bias(const WindowLayout& layout, const AngularBiasParams<T>& params, std::size_t window,
                       double theta_max) {
  return compute_bias(bias_geometry(layout, window, theta_max), params);
}

namespace {

template <typename T>
Tensor<T> columns(const Tensor<T>& m, std::size_t first, std::size_t count) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<std::size_t> index(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) index[r * count + c] = r * cols + first + c;
  return gather(m, Shape{rows, count}, std::move(index));
}

}  // namespace

template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const AttentionWeights<T>& weights, const Tensor<T>& bias,
                           std::vector<Tensor<T>>* probabilities) {
  if (tokens.rank() != 2 || tokens.dim(0) == 0) {
    throw ShapeError("window_attention: tokens must be [n >= 1, d], got " + to_string(tokens.shape()));
  }
  const std::size_t n = tokens.dim(0), d = tokens.dim(1);
  for (const auto* p : {&weights.query, &weights.key, &weights.value}) {
    if (p->rank() != 2 || p->dim(0) != d || p->dim(1) != d) {
      throw ShapeError("window_attention: tokens " + to_string(tokens.shape()) + " do not match projection " +
                       to_string(p->shape()));
    }
  }
  if (bias.shape() != Shape{n, n}) {
    throw ShapeError("window_attention: bias " + to_string(bias.shape()) + " is not " + std::to_string(n) + "x" +
                     std::to_string(n));
  }
  const std::size_t heads = weights.heads;
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("window_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto q = matmul(tokens, weights.query);
  auto k = matmul(tokens, weights.key);
  auto v = matmul(tokens, weights.value);
  std::vector<Tensor<T>> per_head;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : columns(q, h * dh, dh);
    auto kh = heads == 1 ? k : columns(k, h * dh, dh);
    auto vh = heads == 1 ? v : columns(v, h * dh, dh);
    auto logits = add(scale(matmul(qh, transpose(kh)), inv_sqrt), bias);
    auto probs = softmax(logits, 1);
    if (probabilities) probabilities->push_back(probs);
    per_head.push_back(matmul(probs, vh));
  }
  if (heads == 1) return per_head.front();
  std::vector<Tensor<T>> transposed;
  for (auto& o : per_head) transposed.push_back(transpose(o));
  return transpose(concat(transposed));
}

template <typename T>
std::vector<Tensor<T>> window_partition(const Tensor<T>& features, const WindowLayout& layout) {
  if (features.rank() != 3 || features.dim(1) != layout.height || features.dim(2) != layout.width) {
    throw ShapeError("window_partition: features " + to_string(features.shape()) + " do not match a " +
                     std::to_string(layout.height) + "x" + std::to_string(layout.width) + " layout");
  }
  const std::size_t c = features.dim(0), hw = layout.height * layout.width;
  std::vector<Tensor<T>> out;
  out.reserve(layout.windows.size());
  for (const auto& win : layout.windows) {
    std::vector<std::size_t> index(win.size() * c);
    for (std::size_t k = 0; k < win.size(); ++k)
      for (std::size_t ch = 0; ch < c; ++ch) index[k * c + ch] = ch * hw + win[k];
    out.push_back(gather(features, Shape{win.size(), c}, std::move(index)));
  }
  return out;
}

template <typename T>
Tensor<T> azimuth_patch_merge(const std::vector<Tensor<T>>& windows, const WindowLayout& layout) {
  if (windows.size() != layout.windows.size()) {
    throw ShapeError("azimuth_patch_merge: " + std::to_string(windows.size()) + " windows for a layout with " +
                     std::to_string(layout.windows.size()));
  }
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].rank() != 2 || windows[w].dim(0) != layout.windows[w].size()) {
      throw ShapeError("azimuth_patch_merge: window " + std::to_string(w) + " has shape " +
                       to_string(windows[w].shape()) + " but the layout holds " +
                       std::to_string(layout.windows[w].size()) + " tokens");
    }
  }
  const std::size_t c = windows.front().dim(1), hw = layout.height * layout.width;
  auto tokens = concat(windows);  // [HW, C], partition order
  const auto position = layout.merge_order();
  std::vector<std::size_t> index(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t pix = 0; pix < hw; ++pix) index[ch * hw + pix] = position[pix] * c + ch;
  return gather(tokens, Shape{c, layout.height, layout.width}, std::move(index));
}

template <typename T>
Tensor<T> rsas_forward(const Tensor<T>& features, const WindowLayout& layout, const RsasWeights<T>& weights,
                       const RsasConfig& config, std::vector<Tensor<T>>* probabilities) {
  if (features.rank() != 3 || features.dim(1) != layout.height || features.dim(2) != layout.width) {
    throw ShapeError("rsas_forward: features " + to_string(features.shape()) + " do not match a " +
                     std::to_string(layout.height) + "x" + std::to_string(layout.width) + " layout");
  }
  const std::size_t c = features.dim(0), hw = layout.height * layout.width;
  auto normed = add(mul(layer_norm(features, 0), weights.norm_scale), weights.norm_shift);
  auto parts = window_partition(normed, layout);
  std::optional<PolarGrid> grid;
  if (config.granularity == BiasGranularity::kContinuous) grid = build_polar_grid(layout.height, layout.width);
  std::vector<Tensor<T>> attended;
  attended.reserve(parts.size());
  for (std::size_t w = 0; w < parts.size(); ++w) {
    if (parts[w].dim(0) == 0) {
      attended.push_back(parts[w]);
      continue;
    }
    auto geometry = bias_geometry(layout, w, config.theta_max, config.granularity, grid ? &*grid : nullptr);
    auto bias = compute_bias(geometry, weights.bias);
    attended.push_back(window_attention(parts[w], weights.attention, bias, probabilities));
  }
  auto merged = reshape(azimuth_patch_merge(attended, layout), Shape{c, hw});
  auto projected = matmul(transpose(weights.attention.output), merged);
  return add(features, reshape(projected, features.shape()));
}

#define RST_INSTANTIATE(T)                                                                                  \
  template Tensor<T> compute_bias(const WindowBiasGeometry&, const AngularBiasParams<T>&);                  \
  template Tensor<T> compute_bias(const WindowLayout&, const AngularBiasParams<T>&, std::size_t, double);   \
  template Tensor<T> window_attention(const Tensor<T>&, const AttentionWeights<T>&, const Tensor<T>&,       \
                                      std::vector<Tensor<T>>*);                                             \
  template std::vector<Tensor<T>> window_partition(const Tensor<T>&, const WindowLayout&);                 \
  template Tensor<T> azimuth_patch_merge(const std::vector<Tensor<T>>&, const WindowLayout&);               \
  template Tensor<T> rsas_forward(const Tensor<T>&, const WindowLayout&, const RsasWeights<T>&,             \
                                  const RsasConfig&, std::vector<Tensor<T>>*);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

}  // namespace rst
