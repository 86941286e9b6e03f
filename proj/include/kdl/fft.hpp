#pragma once

#include <complex>
#include <vector>

namespace kdl {

using cplx = std::complex<double>;

/**
 * In-place complex DFT along selected axes of a row-major array (FFTW
 * backend).  Forward is the plain unnormalized sum with kernel
 * exp(-2*pi*i*jk/n); inverse carries kernel exp(+...) and divides by the
 * product of the transformed lengths, so forward-then-inverse is the
 * identity.
 */
void dft_axis(cplx* data, const std::vector<int>& dims, int axis, bool inverse);

void dft_axes(cplx* data, const std::vector<int>& dims,
              const std::vector<int>& axes, bool inverse);

/// signed integer mode for index i of an n-point DFT: 0..n/2-1, -n/2..-1
inline int freq_index(int i, int n) { return i < n / 2 ? i : i - n; }

/// physical frequency 2*pi*k/(2L) of DFT index i on a box of half-width L
inline double freq_phys(int i, int n, double L) {
  return 3.141592653589793238462643383279502884 * freq_index(i, n) / L;
}

}  // namespace kdl
