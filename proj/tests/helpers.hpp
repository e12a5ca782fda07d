#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include "rst/tensor.hpp"

namespace testing {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T = float>
rst::Tensor<T> random_tensor(rst::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(rst::numel(shape));
  for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * unit(rng));
  return rst::Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
std::vector<double> as_double(const rst::Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

template <typename T>
double max_abs_diff(const rst::Tensor<T>& a, const rst::Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const rst::Tensor<T>& a, const rst::Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rst_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
