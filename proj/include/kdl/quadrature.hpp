#pragma once

#include <vector>

#include "kdl/common.hpp"

namespace kdl {

/// Gauss-Legendre nodes and weights on [-1,1].
struct GaussLegendre {
  std::vector<double> x, w;
  explicit GaussLegendre(int n);
};

/// nodes/weights mapped to [a,b]
void gl_on_interval(int n, double a, double b, std::vector<double>& x,
                    std::vector<double>& w);

/// segment rule for bump profiles: flat core [-flat_hi, flat_hi] plus the two
/// transition bands out to +-edge_hi, Gauss-Legendre on each piece
void gl_segments(int n_flat, int n_trans, double flat_hi, double edge_hi,
                 std::vector<double>& x, std::vector<double>& w);

/**
 * Quadrature on the unit sphere S^{d-1}.  d=2: uniform midpoint angles
 * (spectrally accurate trapezoid on the circle); d=3: product of
 * Gauss-Legendre in cos(theta) and uniform azimuth, exact for spherical
 * polynomials up to the declared order.
 */
struct SphereQuadrature {
  int d = 2;
  std::vector<Vec> nodes;
  std::vector<double> w;
  double total() const {
    double s = 0;
    for (double v : w) s += v;
    return s;
  }
};

SphereQuadrature sphere_quadrature(int d, int order);

/**
 * Radial rule for integrals  int_0^R g(r) r^{-1-gamma} dr  with
 * gamma in (-d, 0): the substitution r = rho^{-1/gamma} maps the weight to a
 * constant, so plain Gauss-Legendre in rho integrates the singularity
 * exactly against smooth g (a Gauss-Jacobi-type rule in disguise).
 */
struct RadialSingularRule {
  std::vector<double> r, w;
  RadialSingularRule(double gamma, double rmax, int n);
};

}  // namespace kdl
