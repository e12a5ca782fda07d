#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace rst::fft {

using Complex = std::complex<double>;

bool is_power_of_two(std::size_t n);

// Unnormalized 1-D transform, exponent sign -1 forward, +1 inverse.
// Iterative radix-2 Cooley-Tukey when the length is a power of two, direct
// O(n^2) summation otherwise.
void transform(std::span<Complex> data, bool inverse);

// Unnormalized 2-D transform of a row-major rows x cols block.
void transform2d(std::span<Complex> data, std::size_t rows, std::size_t cols, bool inverse);

}  // namespace rst::fft
