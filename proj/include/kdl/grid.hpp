#pragma once

#include <vector>

#include "kdl/common.hpp"

namespace kdl {

/**
 * Uniform periodic phase-space grid: position box [-Lx,Lx)^d with nx points
 * per axis, velocity box [-Lv,Lv)^d with nv points per axis.  Node i of an
 * axis sits at -L + i*h, h = 2L/n.  All constructions are placed with their
 * support at least two cells away from the box boundary so the periodic
 * wraparound of the transforms never sees them.
 */
struct Grid {
  int d = 2;
  double Lx = 1.0;
  int nx = 8;
  double Lv = 1.0;
  int nv = 8;

  void validate() const {
    if (d != 2 && d != 3) throw validation_error("Grid: d must be 2 or 3");
    if (!(Lx > 0.0) || !(Lv > 0.0))
      throw validation_error("Grid: box half-widths must be positive");
    if (!is_pow2(nx) || nx < 8 || !is_pow2(nv) || nv < 8)
      throw validation_error("Grid: nx, nv must be powers of two >= 8");
  }

  double hx() const { return 2.0 * Lx / nx; }
  double hv() const { return 2.0 * Lv / nv; }
  double x_coord(int i) const { return -Lx + i * hx(); }
  double v_coord(int i) const { return -Lv + i * hv(); }

  long long size_x() const {
    long long s = 1;
    for (int k = 0; k < d; ++k) s *= nx;
    return s;
  }
  long long size_v() const {
    long long s = 1;
    for (int k = 0; k < d; ++k) s *= nv;
    return s;
  }
  long long total() const { return size_x() * size_v(); }

  double cell_x() const {
    double c = 1.0;
    for (int k = 0; k < d; ++k) c *= hx();
    return c;
  }
  double cell_v() const {
    double c = 1.0;
    for (int k = 0; k < d; ++k) c *= hv();
    return c;
  }

  // row-major flatten over the d axes of one block
  long long flat(const int* idx, int n) const {
    long long f = 0;
    for (int k = 0; k < d; ++k) f = f * n + idx[k];
    return f;
  }
  void unflat(long long f, int n, int* idx) const {
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(f % n);
      f /= n;
    }
  }

  Vec x_point(long long fx) const {
    int idx[3] = {0, 0, 0};
    unflat(fx, nx, idx);
    Vec p{0, 0, 0};
    for (int k = 0; k < d; ++k) p[k] = x_coord(idx[k]);
    return p;
  }
  Vec v_point(long long fv) const {
    int idx[3] = {0, 0, 0};
    unflat(fv, nv, idx);
    Vec p{0, 0, 0};
    for (int k = 0; k < d; ++k) p[k] = v_coord(idx[k]);
    return p;
  }

  /// dims vector [nx x d, nv x d] matching the dense storage layout
  std::vector<int> dims() const {
    std::vector<int> v;
    for (int k = 0; k < d; ++k) v.push_back(nx);
    for (int k = 0; k < d; ++k) v.push_back(nv);
    return v;
  }

  bool same_as(const Grid& o) const {
    return d == o.d && nx == o.nx && nv == o.nv && Lx == o.Lx && Lv == o.Lv;
  }
};

}  // namespace kdl
