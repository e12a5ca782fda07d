#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "rst/oracle.hpp"
#include "rst/polar.hpp"

using namespace rst;
constexpr double kPi = std::numbers::pi;

TEST_CASE("polar grid cardinal directions") {
  auto g3 = build_polar_grid(3, 3);
  CHECK(g3.azimuth[1 * 3 + 2] == doctest::Approx(0.0));       // right of centre
  CHECK(g3.azimuth[0 * 3 + 1] == doctest::Approx(kPi / 2));   // above centre
  CHECK(g3.radius[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(g3.azimuth[4] == 0.0);
  CHECK(g3.radius[4] == 0.0);

  auto g5 = build_polar_grid(5, 5);
  CHECK(g5.azimuth[2 * 5 + 4] == doctest::Approx(0.0));
  CHECK(g5.azimuth[0 * 5 + 2] == doctest::Approx(kPi / 2));
  CHECK(g5.azimuth[2 * 5 + 0] == doctest::Approx(kPi));
  CHECK(g5.azimuth[4 * 5 + 2] == doctest::Approx(3 * kPi / 2));
  CHECK_THROWS(build_polar_grid(0, 3));
}

TEST_CASE("polar grid agrees with the independent reference") {
  for (std::size_t h = 1; h <= 9; ++h)
    for (std::size_t w = 1; w <= 9; ++w) {
      auto g = build_polar_grid(h, w);
      auto ref = oracle::naive_polar(h, w);
      for (std::size_t i = 0; i < h * w; ++i) {
        CHECK(g.azimuth[i] == doctest::Approx(ref[i].azimuth).epsilon(1e-12));
        CHECK(g.radius[i] == doctest::Approx(ref[i].radius).epsilon(1e-12));
        CHECK(g.azimuth[i] >= 0.0);
        CHECK(g.azimuth[i] < 2 * kPi);
      }
    }
}

TEST_CASE("sector masks partition the plane") {
  auto g = build_polar_grid(4, 4);
  auto m = build_sector_masks(g, 4);
  for (std::size_t s = 0; s < 4; ++s) {
    auto mask = m.mask(s);
    CHECK(std::accumulate(mask.begin(), mask.end(), 0) == 4);
  }
  auto one = build_sector_masks(g, 1).mask(0);
  CHECK(std::all_of(one.begin(), one.end(), [](auto v) { return v == 1; }));
  CHECK_THROWS(build_sector_masks(g, 0));

  for (std::size_t h : {5, 8, 13})
    for (std::size_t w : {4, 7, 16})
      for (std::size_t n : {2, 3, 8, 16}) {
        auto set = build_sector_masks(build_polar_grid(h, w), n);
        std::vector<int> total(h * w, 0);
        for (std::size_t s = 0; s < n; ++s) {
          auto mask = set.mask(s);
          for (std::size_t i = 0; i < mask.size(); ++i) total[i] += mask[i];
        }
        CHECK(std::all_of(total.begin(), total.end(), [](int v) { return v == 1; }));
      }
}

TEST_CASE("sector boundaries are half-open") {
  // 5x5, N = 4: the pixel directly above centre sits exactly on pi/2 and
  // belongs to sector 1, the one directly right to sector 0.
  auto set = build_sector_masks(build_polar_grid(5, 5), 4);
  CHECK(set.sector_of[0 * 5 + 2] == 1);
  CHECK(set.sector_of[2 * 5 + 4] == 0);
  CHECK(set.sector_of[2 * 5 + 0] == 2);
  CHECK(set.sector_of[4 * 5 + 2] == 3);
}

TEST_CASE("bin_index clamps and handles zero extent") {
  CHECK(bin_index(0.0, 1.0, 4) == 0);
  CHECK(bin_index(0.5, 1.0, 4) == 2);
  CHECK(bin_index(1.0, 1.0, 4) == 3);
  CHECK(bin_index(0.3, 0.0, 4) == 0);
}

TEST_CASE("token angles") {
  auto a = token_angles(2, 4, kPi / 2);
  CHECK(a.phi[0] == doctest::Approx(kPi / 4));
  CHECK(a.theta[1] == doctest::Approx(3 * kPi / 8));
  CHECK(token_angles(1, 1, 1.0).phi[0] == doctest::Approx(kPi));

  auto b = token_angles(7, 9, 1.2);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(b.theta[i] > 0.0);
    CHECK(b.theta[i] < 1.2);
    if (i) CHECK(b.theta[i] > b.theta[i - 1]);
  }
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(b.phi[i] > 0.0);
    CHECK(b.phi[i] < 2 * kPi);
    if (i) CHECK(b.phi[i] > b.phi[i - 1]);
  }
  CHECK_THROWS(token_angles(0, 1, 1.0));
}

TEST_CASE("relative angles are antisymmetric") {
  auto r = relative_angles(token_angles(3, 4, kPi / 2));
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.d_theta[i * 3 + i] == 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.d_phi[i * 4 + j] == -r.d_phi[j * 4 + i]);
  // 1-based (2, 1) -> 0-based (1, 0)
  CHECK(r.d_phi[1 * 4 + 0] == doctest::Approx(kPi / 2));
}

TEST_CASE("window layout examples") {
  auto l = build_window_layout(build_polar_grid(4, 4), 4, 2);
  CHECK(l.windows.size() == 4);
  for (const auto& w : l.windows) CHECK(w.size() == 4);

  auto odd = build_window_layout(build_polar_grid(5, 5), 4, 3);
  CHECK(odd.radial_bin[12] == 0);
}

TEST_CASE("window layout is a permutation with consistent ranks") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 1 + rng() % 13, w = 1 + rng() % 13, n_phi = 1 + rng() % 8, n_r = 1 + rng() % 8;
    auto grid = build_polar_grid(h, w);
    auto l = build_window_layout(grid, n_phi, n_r);
    auto order = l.partition_order();
    auto inverse = l.merge_order();
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
    for (std::size_t p = 0; p < h * w; ++p) CHECK(order[inverse[p]] == p);

    for (std::size_t b = 0; b < l.windows.size(); ++b) {
      const auto& win = l.windows[b];
      for (std::size_t k = 0; k < win.size(); ++k) {
        CHECK(l.rank[win[k]] == k);
        CHECK(l.azimuth_bin[win[k]] == b);
        if (k) {
          const auto prev = win[k - 1], cur = win[k];
          const bool ordered = grid.radius[prev] < grid.radius[cur] ||
                               (grid.radius[prev] == grid.radius[cur] && prev < cur);
          CHECK(ordered);
        }
      }
    }
    auto again = build_window_layout(grid, n_phi, n_r);
    CHECK(again.windows == l.windows);
  }
}

TEST_CASE("corner pixels land in the last radial bin") {
  auto l = build_window_layout(build_polar_grid(6, 9), 3, 5);
  CHECK(l.radial_bin[0] == 4);
  CHECK(l.radial_bin[6 * 9 - 1] == 4);
}
