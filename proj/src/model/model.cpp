#include "rst/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "rst/ops.hpp"

namespace rst {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
  if (levels == 0) fail("levels must be >= 1");
  if (levels > 8) fail("levels must be <= 8");
  if (blocks.size() != levels) fail("blocks has " + std::to_string(blocks.size()) + " entries for " + std::to_string(levels) + " levels");
  for (auto b : blocks) {
    if (b == 0) fail("every block count must be >= 1");
  }
  if (n_phi.size() != levels) fail("n_phi needs one entry per level");
  if (n_r.size() != levels) fail("n_r needs one entry per level");
  for (std::size_t l = 0; l < levels; ++l) {
    if (n_phi[l] == 0) fail("n_phi entries must be >= 1");
    if (n_r[l] == 0) fail("n_r entries must be >= 1");
  }
  if (channels == 0) fail("channels must be >= 1");
  if (sectors == 0 || sectors > 255) fail("sectors must be in [1, 255]");
  if (!(theta_max > 0.0)) fail("theta_max must be positive");
  if (patch == 0) fail("patch must be >= 1");
  if (ffn_expansion == 0) fail("ffn_expansion must be >= 1");
  if (heads == 0) fail("heads must be >= 1");
  for (std::size_t l = 0; l < levels; ++l) {
    if (width(l) % heads != 0) fail("level " + std::to_string(l) + " width not divisible by heads");
  }
}

template <typename T>
void WeightStore<T>::add(std::string name, Tensor<T> tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
const Tensor<T>& WeightStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& WeightStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
std::size_t WeightStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
void WeightStore<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : entries_) t.set_requires_grad(on);
}

template <typename T>
void WeightStore<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
template <typename U>
WeightStore<U> WeightStore<T>::cast() const {
  WeightStore<U> out;
  for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
  return out;
}

namespace {

// Uniform in [-bound, bound) from the top 53 bits of a 64-bit draw, so the
// sequence does not depend on the standard library's distributions.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  double uniform(double bound) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * bound;
  }

  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, double bound) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(uniform(bound));
    return Tensor<T>(std::move(shape), std::move(v));
  }

 private:
  std::mt19937_64 rng_;
};

double fan_in_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::string block_prefix(const char* side, std::size_t level, std::size_t block) {
  return std::string(side) + std::to_string(level) + ".block" + std::to_string(block);
}

template <typename T>
void add_conv(WeightStore<T>& ws, Initializer& init, const std::string& name, Shape shape, std::size_t fan_in,
              bool with_bias, std::size_t bias_channels) {
  ws.add(name + ".weight", init.uniform_tensor<T>(std::move(shape), fan_in_bound(fan_in)));
  if (with_bias) ws.add(name + ".bias", Tensor<T>::zeros(Shape{bias_channels, 1, 1}));
}

template <typename T>
void add_norm(WeightStore<T>& ws, const std::string& name, std::size_t c) {
  ws.add(name + ".scale", Tensor<T>::full(Shape{c, 1, 1}, T(1)));
  ws.add(name + ".shift", Tensor<T>::zeros(Shape{c, 1, 1}));
}

template <typename T>
void add_ffn(WeightStore<T>& ws, Initializer& init, const std::string& prefix, std::size_t c,
             const ModelConfig& cfg) {
  const std::size_t p = cfg.patch, e = cfg.ffn_expansion * c;
  add_norm(ws, prefix + ".norm", c);
  std::vector<T> spectral(c * p * (p / 2 + 1) * 2, T(0));
  for (std::size_t i = 0; i < spectral.size(); i += 2) spectral[i] = T(1);
  ws.add(prefix + ".spectral", Tensor<T>(Shape{c, p, p / 2 + 1, 2}, std::move(spectral)));
  add_conv(ws, init, prefix + ".expand", Shape{e, c, 1, 1}, c, cfg.conv_bias, e);
  add_conv(ws, init, prefix + ".project", Shape{c, e, 1, 1}, e, cfg.conv_bias, c);
}

template <typename T>
void add_attention(WeightStore<T>& ws, Initializer& init, const std::string& prefix, std::size_t c,
                   std::size_t n_phi, std::size_t n_r, const ModelConfig& cfg) {
  add_norm(ws, prefix + ".norm", c);
  for (const char* p : {".query", ".key", ".value", ".output"}) {
    ws.add(prefix + p, init.uniform_tensor<T>(Shape{c, c}, fan_in_bound(c)));
  }
  (void)cfg;
  constexpr double kTableBound = 0.02;
  ws.add(prefix + ".bias.theta_a", init.uniform_tensor<T>(Shape{2 * n_r - 1}, kTableBound));
  ws.add(prefix + ".bias.theta_b", init.uniform_tensor<T>(Shape{2 * n_r - 1}, kTableBound));
  ws.add(prefix + ".bias.phi_a", init.uniform_tensor<T>(Shape{2 * n_phi - 1}, kTableBound));
  ws.add(prefix + ".bias.phi_b", init.uniform_tensor<T>(Shape{2 * n_phi - 1}, kTableBound));
}

}  // namespace

template <typename T>
WeightStore<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer init(seed);
  WeightStore<T> ws;
  const std::size_t c0 = cfg.width(0);
  const std::size_t offset_convs = cfg.shared_offset_conv ? 1 : cfg.sectors;
  for (std::size_t i = 0; i < offset_convs; ++i) {
    ws.add("dre.offset." + std::to_string(i) + ".weight", Tensor<T>::zeros(Shape{kOffsetGroups, kImageChannels, 3, 3}));
  }
  add_conv(ws, init, "dre.deform", Shape{c0, kImageChannels, 3, 3}, kImageChannels * 9, cfg.conv_bias, c0);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t c = cfg.width(l);
    for (std::size_t b = 0; b < cfg.blocks[l]; ++b) add_ffn(ws, init, block_prefix("enc", l, b) + ".ffn", c, cfg);
    if (l + 1 < cfg.levels) {
      add_conv(ws, init, "down" + std::to_string(l), Shape{2 * c, c, 2, 2}, c * 4, cfg.conv_bias, 2 * c);
    }
  }
  for (std::size_t l = cfg.levels; l-- > 0;) {
    const std::size_t c = cfg.width(l);
    if (l + 1 < cfg.levels) {
      add_conv(ws, init, "up" + std::to_string(l), Shape{2 * c, c, 2, 2}, 2 * c, cfg.conv_bias, c);
    }
    for (std::size_t b = 0; b < cfg.blocks[l]; ++b) {
      const auto prefix = block_prefix("dec", l, b);
      add_attention(ws, init, prefix + ".attn", c, cfg.n_phi[l], cfg.n_r[l], cfg);
      add_ffn(ws, init, prefix + ".ffn", c, cfg);
    }
  }
  add_conv(ws, init, "out", Shape{kImageChannels, c0, 3, 3}, c0 * 9, cfg.conv_bias, kImageChannels);
  return ws;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t bias = cfg.conv_bias ? 1 : 0;
  const std::size_t p = cfg.patch;
  auto ffn = [&](std::size_t c) {
    const std::size_t e = cfg.ffn_expansion * c;
    return 2 * c + c * p * (p / 2 + 1) * 2 + (e * c + bias * e) + (c * e + bias * c);
  };
  auto attn = [&](std::size_t c, std::size_t l) {
    return 2 * c + 4 * c * c + 2 * (2 * cfg.n_r[l] - 1) + 2 * (2 * cfg.n_phi[l] - 1);
  };
  const std::size_t c0 = cfg.width(0);
  std::size_t total = (cfg.shared_offset_conv ? 1 : cfg.sectors) * kOffsetGroups * kImageChannels * 9;
  total += c0 * kImageChannels * 9 + bias * c0;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t c = cfg.width(l);
    total += cfg.blocks[l] * (2 * ffn(c) + attn(c, l));
    if (l + 1 < cfg.levels) total += 2 * (2 * c * c * 4) + bias * (2 * c + c);
  }
  total += kImageChannels * c0 * 9 + bias * kImageChannels;
  return total;
}

template <typename T>
DreWeights<T> dre_weights(const WeightStore<T>& ws, const ModelConfig& cfg) {
  DreWeights<T> w;
  const std::size_t n = cfg.shared_offset_conv ? 1 : cfg.sectors;
  for (std::size_t i = 0; i < n; ++i) w.offset_kernels.push_back(ws.get("dre.offset." + std::to_string(i) + ".weight"));
  w.deform_kernel = ws.get("dre.deform.weight");
  return w;
}

template <typename T>
FfnWeights<T> ffn_weights(const WeightStore<T>& ws, const std::string& prefix) {
  return {ws.get(prefix + ".norm.scale"), ws.get(prefix + ".norm.shift"), ws.get(prefix + ".spectral"),
          ws.get(prefix + ".expand.weight"), ws.get(prefix + ".project.weight")};
}

template <typename T>
RsasWeights<T> rsas_weights(const WeightStore<T>& ws, const std::string& prefix, const ModelConfig& cfg) {
  RsasWeights<T> w;
  w.norm_scale = ws.get(prefix + ".norm.scale");
  w.norm_shift = ws.get(prefix + ".norm.shift");
  w.attention = {ws.get(prefix + ".query"), ws.get(prefix + ".key"), ws.get(prefix + ".value"),
                 ws.get(prefix + ".output"), cfg.heads};
  w.bias = {ws.get(prefix + ".bias.theta_a"), ws.get(prefix + ".bias.theta_b"), ws.get(prefix + ".bias.phi_a"),
            ws.get(prefix + ".bias.phi_b")};
  return w;
}

namespace {

template <typename T>
Tensor<T> with_bias(Tensor<T> x, const WeightStore<T>& ws, const std::string& name, bool enabled) {
  if (!enabled) return x;
  return add(x, ws.get(name + ".bias"));
}

template <typename T>
Tensor<T> ffn_block(const Tensor<T>& x, const WeightStore<T>& ws, const std::string& prefix,
                    const ModelConfig& cfg) {
  ScopeGuard scope(prefix);
  const FfnConfig fc{cfg.patch, cfg.ffn_expansion};
  if (!cfg.conv_bias) return ffn_forward(x, ffn_weights(ws, prefix), fc);
  // Same composition as ffn_forward with the optional pointwise biases.
  const auto w = ffn_weights(ws, prefix);
  auto normed = add(mul(layer_norm(x, 0), w.norm_scale), w.norm_shift);
  auto spectral = spectral_reweight(normed, w.spectral, fc.patch);
  auto hidden = gelu(add(pointwise_conv(spectral, w.expand), ws.get(prefix + ".expand.bias")));
  return add(x, add(pointwise_conv(hidden, w.project), ws.get(prefix + ".project.bias")));
}

}  // namespace

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const WeightStore<T>& ws, const ModelConfig& cfg, ForwardTrace<T>* trace) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != kImageChannels) {
    throw ShapeError("forward: expected a [3, H, W] image, got " + to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t min_extent = std::size_t{1} << (cfg.levels - 1);
  if (h < min_extent || w < min_extent) {
    throw ShapeError("forward: image " + to_string(image.shape()) + " smaller than the minimum extent " +
                     std::to_string(min_extent));
  }
  const std::size_t m = cfg.size_multiple();
  const std::size_t hp = (h + m - 1) / m * m, wp = (w + m - 1) / m * m;
  const auto padded = pad_reflect(image, 0, hp - h, 0, wp - w);

  Tensor<T> x;
  {
    ScopeGuard scope("dre");
    const DreConfig dc{cfg.sectors, cfg.shared_offset_conv, cfg.gate_axis};
    x = with_bias(dre_forward(padded, dre_weights(ws, cfg), dc), ws, "dre.deform", cfg.conv_bias);
  }

  std::vector<Tensor<T>> skips(cfg.levels);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    for (std::size_t b = 0; b < cfg.blocks[l]; ++b) x = ffn_block(x, ws, block_prefix("enc", l, b) + ".ffn", cfg);
    skips[l] = x;
    if (l + 1 < cfg.levels) {
      const auto name = "down" + std::to_string(l);
      ScopeGuard scope(name);
      x = with_bias(conv2d(x, ws.get(name + ".weight"), 2, 0), ws, name, cfg.conv_bias);
    }
  }

  for (std::size_t l = cfg.levels; l-- > 0;) {
    if (l + 1 < cfg.levels) {
      const auto name = "up" + std::to_string(l);
      {
        ScopeGuard scope(name);
        x = with_bias(conv2d_transpose(x, ws.get(name + ".weight"), 2), ws, name, cfg.conv_bias);
      }
      ScopeGuard scope("dec" + std::to_string(l) + ".skip");
      x = add(x, skips[l]);
    }
    const auto grid = build_polar_grid(x.dim(1), x.dim(2));
    const auto layout = build_window_layout(grid, cfg.n_phi[l], cfg.n_r[l]);
    const RsasConfig rc{cfg.n_phi[l], cfg.n_r[l], cfg.theta_max, cfg.heads, cfg.bias_granularity};
    for (std::size_t b = 0; b < cfg.blocks[l]; ++b) {
      const auto prefix = block_prefix("dec", l, b);
      {
        ScopeGuard scope(prefix + ".attn");
        x = rsas_forward(x, layout, rsas_weights(ws, prefix + ".attn", cfg), rc);
      }
      x = ffn_block(x, ws, prefix + ".ffn", cfg);
    }
  }

  Tensor<T> residual;
  {
    ScopeGuard scope("out");
    residual = crop(with_bias(conv2d(x, ws.get("out.weight"), 1, 1), ws, "out", cfg.conv_bias), 0, 0, h, w);
  }
  if (trace) {
    trace->encoder_outputs = skips;
    trace->residual = residual;
  }
  ScopeGuard scope("restore");
  return add(image, residual);
}

std::uint64_t FlopTable::total() const {
  std::uint64_t t = 0;
  for (const auto& r : rows) t += r.multiply_adds;
  return t;
}

std::uint64_t FlopTable::at(const std::string& module) const {
  for (const auto& r : rows) {
    if (r.module == module) return r.multiply_adds;
  }
  throw std::out_of_range("no FLOP row named " + module);
}

std::uint64_t conv_multiply_adds(std::size_t out_h, std::size_t out_w, std::size_t c_out, std::size_t c_in,
                                 std::size_t kh, std::size_t kw) {
  return std::uint64_t{out_h} * out_w * c_out * c_in * kh * kw;
}

std::uint64_t attention_multiply_adds(const WindowLayout& layout, std::size_t width) {
  std::uint64_t total = 0;
  const std::uint64_t d = width;
  for (const auto& win : layout.windows) {
    const std::uint64_t n = win.size();
    total += 3 * n * d * d + 2 * n * n * d;
  }
  return total;
}

std::uint64_t fft_flops(std::size_t points) {
  if (points <= 1) return 0;
  std::uint64_t log2n = 0;
  while ((std::size_t{1} << log2n) < points) ++log2n;
  return 5 * std::uint64_t{points} * log2n;
}

FlopTable count_flops(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  const std::size_t m = cfg.size_multiple();
  const std::size_t hp = (height + m - 1) / m * m, wp = (width + m - 1) / m * m;
  const std::size_t p = cfg.patch;
  auto ffn = [&](std::size_t c, std::size_t h, std::size_t w) {
    const std::uint64_t patches = std::uint64_t{h / p} * (w / p);
    const std::uint64_t spectral = c * patches * (2 * fft_flops(p * p) + 4 * p * (p / 2 + 1));
    return spectral + 2 * conv_multiply_adds(h, w, cfg.ffn_expansion * c, c, 1, 1);
  };
  const std::size_t c0 = cfg.width(0);
  std::uint64_t dre = (cfg.sectors) * conv_multiply_adds(hp, wp, kOffsetGroups, kImageChannels, 3, 3);
  dre += conv_multiply_adds(hp, wp, c0, kImageChannels, 3, 3);
  dre += std::uint64_t{4} * 9 * kImageChannels * hp * wp;  // bilinear sampling
  std::uint64_t encoder = 0, down = 0, attention = 0, decoder_ffn = 0, up = 0;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t c = cfg.width(l), h = hp >> l, w = wp >> l;
    encoder += cfg.blocks[l] * ffn(c, h, w);
    decoder_ffn += cfg.blocks[l] * ffn(c, h, w);
    const auto layout = build_window_layout(build_polar_grid(h, w), cfg.n_phi[l], cfg.n_r[l]);
    attention += cfg.blocks[l] * (attention_multiply_adds(layout, c) + conv_multiply_adds(h, w, c, c, 1, 1));
    if (l + 1 < cfg.levels) {
      down += conv_multiply_adds(h / 2, w / 2, 2 * c, c, 2, 2);
      up += conv_multiply_adds(h / 2, w / 2, c, 2 * c, 2, 2);
    }
  }
  FlopTable t;
  t.rows = {{"dre", dre},
            {"encoder.ffn", encoder},
            {"downsample", down},
            {"decoder.attention", attention},
            {"decoder.ffn", decoder_ffn},
            {"upsample", up},
            {"output", conv_multiply_adds(hp, wp, kImageChannels, c0, 3, 3)}};
  return t;
}

#define RST_INSTANTIATE(T)                                                                                  \
  template class WeightStore<T>;                                                                            \
  template WeightStore<T> build<T>(const ModelConfig&, std::uint64_t);                                      \
  template DreWeights<T> dre_weights(const WeightStore<T>&, const ModelConfig&);                            \
  template FfnWeights<T> ffn_weights(const WeightStore<T>&, const std::string&);                            \
  template RsasWeights<T> rsas_weights(const WeightStore<T>&, const std::string&, const ModelConfig&);       \
  template Tensor<T> forward(const Tensor<T>&, const WeightStore<T>&, const ModelConfig&, ForwardTrace<T>*);

RST_INSTANTIATE(float)
RST_INSTANTIATE(double)
#undef RST_INSTANTIATE

template WeightStore<double> WeightStore<float>::cast<double>() const;
template WeightStore<float> WeightStore<double>::cast<float>() const;

}  // namespace rst
