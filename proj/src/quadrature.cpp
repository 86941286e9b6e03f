#include "kdl/quadrature.hpp"

#include <cmath>

namespace kdl {

GaussLegendre::GaussLegendre(int n) : x(n), w(n) {
  if (n < 1) throw validation_error("GaussLegendre: n >= 1 required");
  // Newton iteration on P_n with the Chebyshev-like initial guess
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

void gl_on_interval(int n, double a, double b, std::vector<double>& x,
                    std::vector<double>& w) {
  GaussLegendre gl(n);
  x.resize(n);
  w.resize(n);
  const double mid = 0.5 * (a + b), hl = 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    x[i] = mid + hl * gl.x[i];
    w[i] = hl * gl.w[i];
  }
}

void gl_segments(int n_flat, int n_trans, double flat_hi, double edge_hi,
                 std::vector<double>& x, std::vector<double>& w) {
  // symmetric rule adapted to a bump profile: flat middle [-a, a] plus the
  // two transition bands [a, b] where the cutoff varies steeply
  x.clear();
  w.clear();
  std::vector<double> sx, sw;
  gl_on_interval(n_trans, -edge_hi, -flat_hi, sx, sw);
  x.insert(x.end(), sx.begin(), sx.end());
  w.insert(w.end(), sw.begin(), sw.end());
  gl_on_interval(n_flat, -flat_hi, flat_hi, sx, sw);
  x.insert(x.end(), sx.begin(), sx.end());
  w.insert(w.end(), sw.begin(), sw.end());
  gl_on_interval(n_trans, flat_hi, edge_hi, sx, sw);
  x.insert(x.end(), sx.begin(), sx.end());
  w.insert(w.end(), sw.begin(), sw.end());
}

SphereQuadrature sphere_quadrature(int d, int order) {
  if (order < 4) throw validation_error("sphere_quadrature: order >= 4 required");
  SphereQuadrature q;
  q.d = d;
  if (d == 2) {
    const int n = order;
    q.nodes.resize(n);
    q.w.assign(n, 2.0 * pi / n);
    for (int i = 0; i < n; ++i) {
      const double th = 2.0 * pi * i / n;
      q.nodes[i] = vec2(std::cos(th), std::sin(th));
    }
  } else if (d == 3) {
    const int np = order / 2 + 1;   // polar GL: exact to degree 2*np-1
    const int na = order + 1;       // azimuth: exact for harmonics < na
    GaussLegendre gl(np);
    for (int i = 0; i < np; ++i) {
      const double ct = gl.x[i];
      const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
      for (int j = 0; j < na; ++j) {
        const double ph = 2.0 * pi * (j + 0.5) / na;
        q.nodes.push_back(vec3(st * std::cos(ph), st * std::sin(ph), ct));
        q.w.push_back(gl.w[i] * 2.0 * pi / na);
      }
    }
  } else {
    throw validation_error("sphere_quadrature: unsupported dimension");
  }
  return q;
}

RadialSingularRule::RadialSingularRule(double gamma, double rmax, int n) {
  if (!(gamma < 0.0)) throw validation_error("RadialSingularRule: gamma < 0 required");
  // int_0^R g(r) r^{-1-gamma} dr = (-1/gamma) int_0^{R^{-gamma}} g(rho^{-1/gamma}) drho
  std::vector<double> rho, wr;
  gl_on_interval(n, 0.0, std::pow(rmax, -gamma), rho, wr);
  r.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    r[i] = std::pow(rho[i], -1.0 / gamma);
    w[i] = wr[i] / (-gamma);
  }
}

}  // namespace kdl
