#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

// Polar coordinate machinery shared by the radial embedding and the radial
// strip attention. The pixel raster stays Cartesian; only indexing is
// reorganized.
namespace rst {

// Per-pixel azimuth and radius about the pixel-centre origin
// ((H-1)/2, (W-1)/2), y pointing up (toward smaller row indices).
struct PolarGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  double center_row = 0.0;
  double center_col = 0.0;
  double r_max = 0.0;          // distance to the farthest corner
  std::vector<double> azimuth; // [0, 2 pi), row-major
  std::vector<double> radius;  // row-major

  std::size_t size() const { return height * width; }
};

PolarGrid build_polar_grid(std::size_t height, std::size_t width);

// floor(value * bins / extent), clamped to bins - 1; 0 when extent is 0.
std::size_t bin_index(double value, double extent, std::size_t bins);

// N binary masks; mask i covers azimuth [2 pi i / N, 2 pi (i+1) / N).
struct SectorMaskSet {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count = 0;
  std::vector<std::uint8_t> sector_of;  // per pixel, row-major

  std::vector<std::uint8_t> mask(std::size_t sector) const;  // {0,1} per pixel
};

SectorMaskSet build_sector_masks(const PolarGrid& grid, std::size_t sectors);

struct TokenAngles {
  std::vector<double> theta;  // N_r incident angles
  std::vector<double> phi;    // N_phi azimuths
};

// theta_i = theta_max (i - 0.5) / N_r, phi_i = 2 pi (i - 0.5) / N_phi, i = 1..N.
TokenAngles token_angles(std::size_t n_r, std::size_t n_phi, double theta_max);

struct RelativeAngles {
  std::size_t n_r = 0;
  std::size_t n_phi = 0;
  std::vector<double> d_theta;  // [n_r, n_r], d_theta[i, j] = theta_i - theta_j
  std::vector<double> d_phi;    // [n_phi, n_phi]
};

RelativeAngles relative_angles(const TokenAngles& angles);

// One radial strip window per azimuth bin; tokens within a window ordered by
// (radius, row-major index).
struct WindowLayout {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_phi = 0;
  std::size_t n_r = 0;
  std::vector<std::size_t> azimuth_bin;  // per pixel
  std::vector<std::size_t> radial_bin;   // per pixel
  std::vector<std::size_t> rank;         // per pixel, position inside its window
  std::vector<std::vector<std::size_t>> windows;  // pixel indices per azimuth bin

  // Concatenation of all windows in ascending azimuth-bin order.
  std::vector<std::size_t> partition_order() const;
  // inverse[pixel] = position of that pixel in partition_order().
  std::vector<std::size_t> merge_order() const;
};

WindowLayout build_window_layout(const PolarGrid& grid, std::size_t n_phi, std::size_t n_r);

}  // namespace rst
