#pragma once

#include <cmath>

#include "kdl/common.hpp"

namespace kdl {

/**
 * Smooth radial cutoff chi used by every bump construction in the library:
 * chi(x) = psi(|x|) with psi = 1 on [0,1], psi = 0 on [2,inf) and the
 * C^inf transition
 *
 *   psi(t) = g(2-t) / (g(2-t) + g(t-1)),   g(s) = exp(-1/s) for s > 0.
 *
 * psi is non-increasing, psi(1.5) = 1/2 by symmetry of the transition.
 */
inline double bump_g(double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; }

inline double smooth_cutoff_radial(double t) {
  if (t <= 1.0) return 1.0;
  if (t >= 2.0) return 0.0;
  const double a = bump_g(2.0 - t);
  const double b = bump_g(t - 1.0);
  return a / (a + b);
}

// d/dt of the transition; 0 outside (1,2).
inline double smooth_cutoff_radial_deriv(double t) {
  if (t <= 1.0 || t >= 2.0) return 0.0;
  const double a = bump_g(2.0 - t);   // a' = -a / (2-t)^2
  const double b = bump_g(t - 1.0);   // b' =  b / (t-1)^2
  const double ap = -a / ((2.0 - t) * (2.0 - t));
  const double bp = b / ((t - 1.0) * (t - 1.0));
  const double den = a + b;
  return (ap * den - a * (ap + bp)) / (den * den);
}

/// chi on R^m given the squared radius (cheap form for hot loops).
inline double smooth_cutoff_r2(double r2) {
  if (r2 <= 1.0) return 1.0;
  if (r2 >= 4.0) return 0.0;
  return smooth_cutoff_radial(std::sqrt(r2));
}

inline double smooth_cutoff(const Vec& x) { return smooth_cutoff_r2(norm2(x)); }

inline double smooth_cutoff(const double* x, int m) {
  double r2 = 0.0;
  for (int i = 0; i < m; ++i) r2 += x[i] * x[i];
  return smooth_cutoff_r2(r2);
}

// Gradient of chi at x in R^d (zero vector in the flat regions).
inline Vec smooth_cutoff_grad(const Vec& x) {
  const double r = norm(x);
  if (r <= 1.0 || r >= 2.0 || r == 0.0) return {0.0, 0.0, 0.0};
  return (smooth_cutoff_radial_deriv(r) / r) * x;
}

}  // namespace kdl
