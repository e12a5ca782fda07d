#include "rst/polar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rst {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

PolarGrid build_polar_grid(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("build_polar_grid: empty grid");
  PolarGrid g;
  g.height = height;
  g.width = width;
  g.center_row = (static_cast<double>(height) - 1.0) / 2.0;
  g.center_col = (static_cast<double>(width) - 1.0) / 2.0;
  g.r_max = std::hypot(g.center_row, g.center_col);
  g.azimuth.resize(height * width);
  g.radius.resize(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double dy = g.center_row - static_cast<double>(r);
      const double dx = static_cast<double>(c) - g.center_col;
      double phi = 0.0;
      if (dy != 0.0 || dx != 0.0) {
        phi = std::atan2(dy, dx);
        if (phi < 0.0) phi += kTwoPi;
        if (phi >= kTwoPi) phi = 0.0;
      }
      g.azimuth[r * width + c] = phi;
      g.radius[r * width + c] = std::hypot(dy, dx);
    }
  }
  return g;
}

std::size_t bin_index(double value, double extent, std::size_t bins) {
  if (extent <= 0.0 || bins == 0) return 0;
  const double b = std::floor(value * static_cast<double>(bins) / extent);
  if (b <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(b), bins - 1);
}

std::vector<std::uint8_t> SectorMaskSet::mask(std::size_t sector) const {
  if (sector >= count) throw std::out_of_range("sector " + std::to_string(sector) + " out of range");
  std::vector<std::uint8_t> m(sector_of.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = sector_of[i] == sector ? 1 : 0;
  return m;
}

SectorMaskSet build_sector_masks(const PolarGrid& grid, std::size_t sectors) {
  if (sectors == 0) throw std::invalid_argument("build_sector_masks: sector count must be >= 1");
  if (sectors > 255) throw std::invalid_argument("build_sector_masks: at most 255 sectors");
  SectorMaskSet s;
  s.height = grid.height;
  s.width = grid.width;
  s.count = sectors;
  s.sector_of.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    s.sector_of[i] = static_cast<std::uint8_t>(bin_index(grid.azimuth[i], kTwoPi, sectors));
  }
  return s;
}

TokenAngles token_angles(std::size_t n_r, std::size_t n_phi, double theta_max) {
  if (n_r == 0 || n_phi == 0) throw std::invalid_argument("token_angles: counts must be >= 1");
  if (!(theta_max > 0.0)) throw std::invalid_argument("token_angles: theta_max must be positive");
  TokenAngles a;
  a.theta.resize(n_r);
  a.phi.resize(n_phi);
  for (std::size_t i = 1; i <= n_r; ++i) {
    a.theta[i - 1] = theta_max * (static_cast<double>(i) - 0.5) / static_cast<double>(n_r);
  }
  for (std::size_t i = 1; i <= n_phi; ++i) {
    a.phi[i - 1] = kTwoPi * (static_cast<double>(i) - 0.5) / static_cast<double>(n_phi);
  }
  return a;
}

RelativeAngles relative_angles(const TokenAngles& angles) {
  RelativeAngles r;
  r.n_r = angles.theta.size();
  r.n_phi = angles.phi.size();
  r.d_theta.resize(r.n_r * r.n_r);
  r.d_phi.resize(r.n_phi * r.n_phi);
  for (std::size_t i = 0; i < r.n_r; ++i)
    for (std::size_t j = 0; j < r.n_r; ++j) r.d_theta[i * r.n_r + j] = angles.theta[i] - angles.theta[j];
  for (std::size_t i = 0; i < r.n_phi; ++i)
    for (std::size_t j = 0; j < r.n_phi; ++j) r.d_phi[i * r.n_phi + j] = angles.phi[i] - angles.phi[j];
  return r;
}

std::vector<std::size_t> WindowLayout::partition_order() const {
  std::vector<std::size_t> order;
  order.reserve(height * width);
  for (const auto& w : windows) order.insert(order.end(), w.begin(), w.end());
  return order;
}

std::vector<std::size_t> WindowLayout::merge_order() const {
  const auto order = partition_order();
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) inverse[order[pos]] = pos;
  return inverse;
}

WindowLayout build_window_layout(const PolarGrid& grid, std::size_t n_phi, std::size_t n_r) {
  if (n_phi == 0 || n_r == 0) throw std::invalid_argument("build_window_layout: bin counts must be >= 1");
  WindowLayout l;
  l.height = grid.height;
  l.width = grid.width;
  l.n_phi = n_phi;
  l.n_r = n_r;
  const std::size_t n = grid.size();
  l.azimuth_bin.resize(n);
  l.radial_bin.resize(n);
  l.rank.resize(n);
  l.windows.assign(n_phi, {});
  for (std::size_t i = 0; i < n; ++i) {
    l.azimuth_bin[i] = bin_index(grid.azimuth[i], kTwoPi, n_phi);
    l.radial_bin[i] = bin_index(grid.radius[i], grid.r_max, n_r);
    l.windows[l.azimuth_bin[i]].push_back(i);
  }
  for (auto& w : l.windows) {
    // Row-major insertion order makes the stable sort break radius ties by index.
    std::stable_sort(w.begin(), w.end(),
                     [&](std::size_t a, std::size_t b) { return grid.radius[a] < grid.radius[b]; });
    for (std::size_t k = 0; k < w.size(); ++k) l.rank[w[k]] = k;
  }
  return l;
}

}  // namespace rst
