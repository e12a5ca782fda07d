#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Brute-force double-precision references. Nothing here calls into the
// tensor engine; every routine is a direct transcription of the defining
// formula, written with plain loops.
namespace rst::oracle {

struct OracleReport {
  std::string op;
  std::string instance;
  double max_abs_diff = 0.0;
  double relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::optional<std::size_t> failing_index;
  std::size_t excluded = 0;  // gradient entries skipped at non-smooth points

  std::string to_json_line() const;
};

// max |a - b| and its position.
std::pair<double, std::size_t> max_abs_diff(std::span<const double> a, std::span<const double> b);

// max|a - b| / max(max|a|, max|b|, 1e-8)
double relative_error(std::span<const double> a, std::span<const double> b);

// Compares by absolute difference against `tolerance`.
OracleReport compare_abs(std::string op, std::string instance, std::span<const double> got,
                         std::span<const double> want, double tolerance);
// Compares by relative_error against `tolerance`.
OracleReport compare_rel(std::string op, std::string instance, std::span<const double> got,
                         std::span<const double> want, double tolerance);

// ---- dense references ----
std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                 std::size_t k, std::size_t n);

// x: [ci, h, w]; k: [co, ci, kh, kw]; zero padding.
std::vector<double> naive_conv2d(std::span<const double> x, std::size_t ci, std::size_t h, std::size_t w,
                                 std::span<const double> k, std::size_t co, std::size_t kh, std::size_t kw,
                                 std::size_t stride, std::size_t pad);

// Deformable 3x3, same padding; offsets [18, h, w] with (row, col) pairs per tap.
std::vector<double> naive_deform_conv(std::span<const double> x, std::size_t ci, std::size_t h, std::size_t w,
                                      std::span<const double> offsets, std::span<const double> k,
                                      std::size_t co);

// Full complex spectrum of a real rows x cols plane, e^{-2 pi i (...)}.
std::vector<std::complex<double>> naive_dft2(std::span<const double> x, std::size_t rows, std::size_t cols);

// softmax(Q K^T / sqrt(d_head) + B) V per head, with Q = tokens * pq etc.
// tokens [n, d], projections [d, d], bias [n, n]. `multiply_adds`, when
// given, is incremented once per scalar multiply-add performed in the
// projections, logits, and mixing.
std::vector<double> naive_attention(std::span<const double> tokens, std::size_t n, std::size_t d,
                                    std::span<const double> pq, std::span<const double> pk,
                                    std::span<const double> pv, std::span<const double> bias,
                                    std::size_t heads = 1, std::uint64_t* multiply_adds = nullptr);

// Same as naive_attention but also returns the attention matrix rows
// (heads * n * n) for stochasticity checks.
std::vector<double> naive_attention_weights(std::span<const double> tokens, std::size_t n, std::size_t d,
                                            std::span<const double> pq, std::span<const double> pk,
                                            std::span<const double> bias, std::size_t heads = 1);

// ---- polar references, derived independently from the main geometry code ----
struct PolarPixel {
  double azimuth;  // [0, 2 pi), y axis pointing up
  double radius;
};
std::vector<PolarPixel> naive_polar(std::size_t h, std::size_t w);

// Sector-gated offset generation:
//   raw_i = conv3x3(x * mask_i, kernel_i); gate = softmax over i; out = sum_i gate_i raw_i
// x: [ci, h, w]; kernels: n_sectors x [18, ci, 3, 3].
std::vector<double> naive_generate_offsets(std::span<const double> x, std::size_t ci, std::size_t h,
                                           std::size_t w, const std::vector<std::vector<double>>& kernels);

struct RsasParams {
  std::span<const double> gamma, beta;           // [c]
  std::span<const double> pq, pk, pv, po;        // [c, c]
  std::span<const double> theta_a, theta_b;      // [2 n_r - 1]
  std::span<const double> phi_a, phi_b;          // [2 n_phi - 1]
  std::size_t n_phi = 1, n_r = 1, heads = 1;
  double theta_max = 1.5707963267948966;
  double eps = 1e-6;
};
// Layer norm, then one dense HW x HW attention whose logits are masked to
// -inf between different azimuth strips, output projection, residual add.
std::vector<double> naive_rsas(std::span<const double> f, std::size_t c, std::size_t h, std::size_t w,
                               const RsasParams& p);

// ---- finite differences ----
struct FdEstimate {
  std::vector<double> grad;   // one entry per requested index
  std::vector<bool> kink;     // true where one-sided slopes disagree
};

// Central differences of `f` at `point` for each coordinate in `indices`.
// A coordinate is flagged as a kink when its forward and backward one-sided
// slopes differ by more than kink_tol * max(1, |slopes|).
// Throws std::domain_error if `f` returns a non-finite value.
FdEstimate finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                            std::vector<double> point, std::span<const std::size_t> indices, double eps,
                            double kink_tol = 0.1);

// Compares an analytic gradient against an estimate, skipping kinks.
OracleReport compare_gradient(std::string op, std::string instance, std::span<const double> analytic,
                              const FdEstimate& estimate, double tolerance);

}  // namespace rst::oracle
