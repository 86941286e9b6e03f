#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdl/cutoff.hpp"
#include "kdl/norms.hpp"
#include "kdl/rng.hpp"
#include "kdl/solver.hpp"

using namespace kdl;

namespace {

Grid small_grid(int nx, int nv, double Lx, double Lv) {
  Grid g;
  g.d = 2;
  g.nx = nx;
  g.nv = nv;
  g.Lx = Lx;
  g.Lv = Lv;
  return g;
}

DenseField bump_field(const Grid& g, double xw, double vw) {
  DenseField f(g);
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const Vec x = g.x_point(fx);
    for (long long fv = 0; fv < g.size_v(); ++fv)
      f.at(fx, fv) =
          std::exp(-norm2(x) / (2 * xw * xw)) * std::exp(-norm2(g.v_point(fv)) / (2 * vw * vw));
  }
  return f;
}

double l2(const DenseField& f) {
  double s = 0;
  for (double v : f.a) s += v * v;
  return std::sqrt(s * f.grid.cell_x() * f.grid.cell_v());
}

double l2_diff(const DenseField& a, const DenseField& b) {
  double s = 0;
  for (size_t i = 0; i < a.a.size(); ++i) s += std::pow(a.a[i] - b.a[i], 2);
  return std::sqrt(s * a.grid.cell_x() * a.grid.cell_v());
}

}  // namespace

TEST_CASE("free transport: identity, x-constant kernel, analytic shift oracle") {
  Grid g = small_grid(32, 8, 4.0, 2.0);
  DenseField f = bump_field(g, 0.5, 0.7);
  PhaseField moved = free_transport(PhaseField(f), 0.0);
  for (size_t i = 0; i < f.a.size(); ++i) CHECK(moved.dense().a[i] == f.a[i]);

  DenseField cst(g);
  for (long long fx = 0; fx < g.size_x(); ++fx)
    for (long long fv = 0; fv < g.size_v(); ++fv)
      cst.at(fx, fv) = std::exp(-norm2(g.v_point(fv)));
  PhaseField cmoved = free_transport(PhaseField(cst), 0.37);
  for (size_t i = 0; i < cst.a.size(); ++i)
    CHECK(cmoved.dense().a[i] == doctest::Approx(cst.a[i]).epsilon(1e-12));

  // spectral shift is exact for band-limited data: compare against the
  // analytically shifted gaussian (itself smooth and well-resolved)
  const double t = 0.45;
  PhaseField shifted = free_transport(PhaseField(f), t);
  double emax = 0.0;
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const Vec x = g.x_point(fx);
    for (long long fv = 0; fv < g.size_v(); ++fv) {
      const Vec v = g.v_point(fv);
      const Vec y = x - t * v;
      const double exact =
          std::exp(-norm2(y) / (2 * 0.5 * 0.5)) * std::exp(-norm2(v) / (2 * 0.7 * 0.7));
      emax = std::max(emax, std::abs(shifted.dense().at(fx, fv) - exact));
    }
  }
  CHECK(emax <= 1e-10);
}

TEST_CASE("free transport: semigroup, isometry, wraparound guard") {
  // sigma chosen so both the Nyquist content and the periodization seam of
  // the gaussian sit far below the tolerance
  Grid g = small_grid(64, 8, 4.0, 2.0);
  DenseField f = bump_field(g, 0.35, 0.6);
  PhaseField ab = free_transport(free_transport(PhaseField(f), 0.2), 0.3);
  PhaseField once = free_transport(PhaseField(f), 0.5);
  // relative L2, which averages the FFT roundoff of the two round trips
  CHECK(l2_diff(ab.dense(), once.dense()) <= 1e-12 * l2(f));

  CHECK(l2(free_transport(PhaseField(f), 0.4).dense()) ==
        doctest::Approx(l2(f)).epsilon(1e-12));

  // narrow bump moved beyond its margin must trip the guard
  Grid g2 = small_grid(32, 8, 2.0, 2.0);
  DenseField narrow(g2);
  for (long long fx = 0; fx < g2.size_x(); ++fx) {
    const Vec x = g2.x_point(fx);
    for (long long fv = 0; fv < g2.size_v(); ++fv)
      narrow.at(fx, fv) = smooth_cutoff_r2(norm2(x) * 16.0) *
                          std::exp(-norm2(g2.v_point(fv)));
  }
  CHECK_THROWS_AS(free_transport(PhaseField(narrow), 3.0), validation_error);
  // periodic-in-x data is exempt
  DenseField per(g2);
  for (long long fx = 0; fx < g2.size_x(); ++fx) {
    const double c = std::cos(pi * g2.x_point(fx)[0] / g2.Lx);
    for (long long fv = 0; fv < g2.size_v(); ++fv)
      per.at(fx, fv) = (1.0 + 0.5 * c) * std::exp(-norm2(g2.v_point(fv)));
  }
  CHECK_NOTHROW(free_transport(PhaseField(per), 3.0));
}

TEST_CASE("duhamel: zero source, x-constant mean, Richardson, linearity") {
  Grid g = small_grid(16, 8, 2.0, 2.0);
  auto make_traj = [&](int nt, double T, auto&& field_at) {
    Trajectory tr;
    tr.grid = g;
    for (int i = 0; i < nt; ++i) {
      const double t = T * i / (nt - 1.0);
      tr.times.push_back(t);
      tr.fields.push_back(field_at(t));
    }
    return tr;
  };
  const double T = 0.4;
  Trajectory zero = make_traj(9, T, [&](double) { return DenseField(g); });
  PhaseField z = duhamel(zero, 0.0, T);
  for (double v : z.dense().a) CHECK(v == 0.0);

  // x-constant source a(t) g(v): the transport acts trivially and the sum is
  // the trapezoid of a(t)
  auto gfun = [&](double t) {
    DenseField f(g);
    const double a = 1.0 + t;
    for (long long fx = 0; fx < g.size_x(); ++fx)
      for (long long fv = 0; fv < g.size_v(); ++fv)
        f.at(fx, fv) = a * std::exp(-norm2(g.v_point(fv)));
    return f;
  };
  Trajectory cst = make_traj(9, T, gfun);
  PhaseField dc = duhamel(cst, 0.0, T);
  const double mean = T * (1.0 + T / 2.0);  // int_0^T (1+t) dt
  for (long long fv = 0; fv < g.size_v(); ++fv)
    CHECK(dc.dense().at(0, fv) ==
          doctest::Approx(mean * std::exp(-norm2(g.v_point(fv)))).epsilon(1e-10));

  // second order in the mesh: halving dt shrinks the update by ~4
  auto field_at = [&](double t) {
    DenseField f = bump_field(g, 0.4, 0.5);
    for (double& v : f.a) v *= std::cos(3.0 * t);
    return free_transport(PhaseField(f), 0.3 * t).dense();
  };
  PhaseField d1 = duhamel(make_traj(5, T, field_at), 0.0, T);
  PhaseField d2 = duhamel(make_traj(9, T, field_at), 0.0, T);
  PhaseField d3 = duhamel(make_traj(17, T, field_at), 0.0, T);
  const double c1 = l2_diff(d2.dense(), d1.dense());
  const double c2 = l2_diff(d3.dense(), d2.dense());
  CHECK(c2 <= c1 / 3.0);

  // linearity
  Trajectory s1 = make_traj(9, T, field_at);
  Trajectory s2 = cst;
  Trajectory sum = s1;
  for (int i = 0; i < 9; ++i)
    for (size_t j = 0; j < sum.fields[i].a.size(); ++j)
      sum.fields[i].a[j] = 2.0 * s1.fields[i].a[j] + s2.fields[i].a[j];
  PhaseField left = duhamel(sum, 0.0, T);
  PhaseField r1 = duhamel(s1, 0.0, T), r2 = duhamel(s2, 0.0, T);
  for (size_t j = 0; j < left.dense().a.size(); ++j)
    CHECK(left.dense().a[j] ==
          doctest::Approx(2.0 * r1.dense().a[j] + r2.dense().a[j]).epsilon(1e-12));

  CHECK_THROWS_AS(duhamel(s1, -0.1, T), validation_error);
  CHECK_THROWS_AS(duhamel(s1, 0.0, T / 3.1), validation_error);
}

TEST_CASE("fr ode: anchored at the bump, two routes agree, growth") {
  DeflationParams p;
  p.M = 2.0;
  p.N1 = 2.0;
  p.N2 = 2.0;
  p.finalize();
  BumpFamily fam = sphere_points(2, p.J);
  Grid g = small_grid(8, 32, 6.0, 3.2);
  std::vector<double> times;
  for (int i = 0; i < 33; ++i) times.push_back(p.T_star * (1.0 - i / 32.0));
  auto [ode, closed] = fr_ode_evolve(p, fam, times, g);
  // exact agreement at t = 0 (last mesh point)
  for (size_t i = 0; i < ode.fields.back().a.size(); ++i)
    CHECK(ode.fields.back().a[i] == closed.fields.back().a[i]);
  // the two routes stay within 1e-3 relative L2 over the window
  for (size_t k = 0; k < times.size(); ++k) {
    const double gap = l2_diff(ode.fields[k], closed.fields[k]);
    const double ref = l2(closed.fields[k]);
    CHECK(gap <= 1e-3 * ref);
  }
  // pointwise growth of the damped core backward in time
  for (size_t i = 0; i < ode.fields[0].a.size(); ++i)
    CHECK(ode.fields[0].a[i] >= ode.fields.back().a[i] - 1e-14);
}

TEST_CASE("picard: zero data, contraction, positivity, duhamel residual") {
  Grid g = small_grid(8, 16, 2.0, 4.0);
  CollisionKernel kern;
  kern.gamma = -0.5;
  SphereQuadrature sq = sphere_quadrature(2, 16);

  DenseField zero(g);
  PicardResult rz = picard_local_solve(PhaseField(zero), kern, sq, 0.1, 4, 1e-14, 6);
  CHECK(rz.residuals.size() == 1);
  CHECK(rz.residuals[0] == 0.0);

  DenseField f0(g);
  const double eps = 1e-2;
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const double mod = 1.0 + 0.5 * std::cos(pi * g.x_point(fx)[0] / g.Lx);
    for (long long fv = 0; fv < g.size_v(); ++fv)
      f0.at(fx, fv) = eps * mod * std::exp(-norm2(g.v_point(fv)));
  }
  PicardResult pr = picard_local_solve(PhaseField(f0), kern, sq, 0.1, 8, 0.0, 9);
  int consecutive = 0, best = 0;
  for (size_t i = 1; i < pr.residuals.size(); ++i) {
    consecutive = pr.residuals[i] <= 0.5 * pr.residuals[i - 1] ? consecutive + 1 : 0;
    best = std::max(best, consecutive);
  }
  CHECK(best >= 5);

  double floor = 0.0;
  for (const DenseField& fld : pr.traj.fields)
    for (double v : fld.a) floor = std::min(floor, v);
  CHECK(floor >= -1e-8);

  // the converged iterate satisfies the discrete duhamel equation: one more
  // application moves it by at most twice the final update
  PicardResult fine = picard_local_solve(PhaseField(f0), kern, sq, 0.1, 8, 1e-13, 12);
  const double tol = 1e-13;
  PicardResult again =
      picard_local_solve(PhaseField(f0), kern, sq, 0.1, 8, 0.0,
                         static_cast<int>(fine.residuals.size()) + 1);
  CHECK(again.residuals.back() <= 2.0 * std::max(fine.residuals.back(), tol));
}

TEST_CASE("picard: divergence raises with history attached") {
  Grid g = small_grid(8, 16, 2.0, 4.0);
  CollisionKernel kern;
  kern.gamma = -0.5;
  DenseField f0(g);
  for (long long fx = 0; fx < g.size_x(); ++fx)
    for (long long fv = 0; fv < g.size_v(); ++fv)
      f0.at(fx, fv) = 50.0 * std::exp(-norm2(g.v_point(fv)));
  try {
    picard_local_solve(PhaseField(f0), kern, sphere_quadrature(2, 8), 0.5, 6, 1e-14, 25);
    FAIL("expected divergence");
  } catch (const divergence_error& e) {
    CHECK(e.history.size() >= 3);
    CHECK(e.history.back() > e.history[e.history.size() - 2]);
  }
}

TEST_CASE("solve correction: zero error source gives a zero correction") {
  DeflationParams p;
  p.M = 2.0;
  p.N1 = 4.0;
  p.N2 = 2.0;
  p.finalize();
  BumpFamily fam = sphere_points(2, p.J);
  Grid g = small_grid(8, 16, 6.0, 4.0);
  CorrectionOptions opt;
  opt.n_subintervals = 2;
  opt.nodes_per_sub = 2;
  opt.max_iter = 4;
  opt.force_ferr_zero = true;
  CorrectionResult cr = solve_correction(p, fam, g, sphere_quadrature(2, 8), opt);
  for (const DenseField& f : cr.traj.fields)
    for (double v : f.a) CHECK(v == 0.0);
  for (double z : cr.z_history) CHECK(z == 0.0);
}
