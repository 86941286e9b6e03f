#include "kdl/norms.hpp"

#include <algorithm>
#include <cmath>

#include "kdl/cutoff.hpp"
#include "kdl/fft.hpp"
#include "kdl/par.hpp"

namespace kdl {

CriticalIndices critical_indices(int d, double gamma) {
  if (d != 2 && d != 3) throw validation_error("critical_indices: d must be 2 or 3");
  return {(d - 2) / 2.0, [gamma](double s) { return s + gamma; }};
}

// ---------------------------------------------------------------------------
// sobolev norm
// ---------------------------------------------------------------------------

namespace {

double dense_sobolev(const DenseField& df, double s, double r) {
  const Grid& g = df.grid;
  PhaseField work(df);
  if (s != 0.0) {
    work = fourier_multiplier(work, AXIS_X, [s](const Vec& kx, const Vec&) {
      return std::pow(1.0 + norm2(kx), s / 2.0);
    });
  }
  const DenseField& wf = work.dense();
  const long long sx = g.size_x(), sv = g.size_v();
  const double cell = g.cell_x() * g.cell_v();
  double acc = 0.0;
  for (long long fv = 0; fv < sv; ++fv) {
    const double wr = std::pow(1.0 + norm2(g.v_point(fv)), r);
    double col = 0.0;
    for (long long fx = 0; fx < sx; ++fx) {
      const double val = wf.at(fx, fv);
      col += val * val;
    }
    acc += wr * col;
  }
  return std::sqrt(acc * cell);
}

void lattice_points(const XLatticeSpec& sp, int d, std::vector<Vec>& pts) {
  pts.clear();
  const int n0 = sp.n[0], n1 = sp.n[1], n2 = d == 3 ? sp.n[2] : 1;
  pts.reserve(static_cast<size_t>(n0) * n1 * n2);
  for (int i0 = 0; i0 < n0; ++i0)
    for (int i1 = 0; i1 < n1; ++i1)
      for (int i2 = 0; i2 < n2; ++i2) {
        Vec p = sp.origin;
        p = p + (-sp.half[0] + (2.0 * sp.half[0] / n0) * i0) * sp.axes[0];
        p = p + (-sp.half[1] + (2.0 * sp.half[1] / n1) * i1) * sp.axes[1];
        if (d == 3) p = p + (-sp.half[2] + (2.0 * sp.half[2] / n2) * i2) * sp.axes[2];
        pts.push_back(p);
      }
}

}  // namespace

double xlattice_hs_norm_sq(const std::vector<double>& samples, const XLatticeSpec& sp,
                           int d, double s) {
  std::vector<cplx> work(samples.begin(), samples.end());
  std::vector<int> dims;
  for (int k = 0; k < d; ++k) dims.push_back(sp.n[k]);
  std::vector<int> axes(d);
  for (int k = 0; k < d; ++k) axes[k] = k;
  dft_axes(work.data(), dims, axes, false);
  double cell = 1.0;
  long long ntot = 1;
  for (int k = 0; k < d; ++k) {
    cell *= 2.0 * sp.half[k] / sp.n[k];
    ntot *= sp.n[k];
  }
  double acc = 0.0;
  for (long long i = 0; i < ntot; ++i) {
    long long rem = i;
    double k2 = 0.0;
    for (int k = d - 1; k >= 0; --k) {
      const int ik = static_cast<int>(rem % sp.n[k]);
      rem /= sp.n[k];
      const double kk = freq_phys(ik, sp.n[k], sp.half[k]);
      k2 += kk * kk;
    }
    acc += std::pow(1.0 + k2, s) * std::norm(work[i]);
  }
  return acc * cell / ntot;
}

double sobolev_norm(const PhaseField& f, double s, double r) {
  if (f.is_dense()) return dense_sobolev(f.dense(), s, r);
  const AnalyticCore& core = f.core();
  const NormPlan* plan = core.norm_plan();
  if (!plan)
    throw validation_error("sobolev_norm: analytic field carries no quadrature plan");
  const int d = core.dim();
  double acc = 0.0;
  for (const NormChart& ch : plan->charts) {
    std::vector<double> part(ch.vnodes.size(), 0.0);
    par::parallel_for(0, static_cast<long long>(ch.vnodes.size()), [&](long long i) {
      const VNode& vn = ch.vnodes[i];
      const XLatticeSpec sp = ch.xbox(vn.v);
      std::vector<Vec> pts;
      lattice_points(sp, d, pts);
      std::vector<double> samples(pts.size());
      for (size_t j = 0; j < pts.size(); ++j) samples[j] = f.eval(pts[j], vn.v);
      part[i] = vn.w * std::pow(1.0 + norm2(vn.v), r) *
                xlattice_hs_norm_sq(samples, sp, d, s);
    });
    for (double p : part) acc += p;
  }
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Littlewood-Paley projector
// ---------------------------------------------------------------------------

PhaseField lp_project(const PhaseField& f, int N, char axis) {
  if (!is_pow2(N)) throw validation_error("lp_project: N must be dyadic");
  const Grid& g = f.dense().grid;
  const double nyq = axis == 'x' ? pi * (g.nx / 2) / g.Lx : pi * (g.nv / 2) / g.Lv;
  if (N > nyq) throw validation_error("lp_project: N beyond the axis Nyquist");
  auto phi = [N](double kmag) {
    if (N == 1) return smooth_cutoff_radial(kmag);
    return smooth_cutoff_radial(kmag / N) - smooth_cutoff_radial(2.0 * kmag / N);
  };
  if (axis == 'x')
    return fourier_multiplier(f, AXIS_X,
                              [&](const Vec& kx, const Vec&) { return phi(norm(kx)); });
  if (axis == 'v')
    return fourier_multiplier(f, AXIS_V,
                              [&](const Vec&, const Vec& kv) { return phi(norm(kv)); });
  throw validation_error("lp_project: axis must be 'x' or 'v'");
}

// ---------------------------------------------------------------------------
// Z-norm
// ---------------------------------------------------------------------------

namespace {

// spectral gradient magnitude on a dense field, per (x,v) node
std::vector<double> dense_grad_mag(const DenseField& df) {
  const Grid& g = df.grid;
  const long long total = g.total();
  std::vector<double> mag(total, 0.0);
  for (int a = 0; a < g.d; ++a) {
    SpectralField s = transform_forward(PhaseField(df), AXIS_X);
    const long long sx = g.size_x(), sv = g.size_v();
    for (long long fx = 0; fx < sx; ++fx) {
      int idx[3] = {0, 0, 0};
      g.unflat(fx, g.nx, idx);
      const cplx ik(0.0, s.kx(idx[a]));
      cplx* row = s.a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) row[fv] *= ik;
    }
    std::vector<cplx> work = s.a;
    std::vector<int> ax;
    for (int k = 0; k < g.d; ++k) ax.push_back(k);
    dft_axes(work.data(), g.dims(), ax, true);
    for (long long i = 0; i < total; ++i) {
      const double gr = work[i].real();
      mag[i] += gr * gr;
    }
  }
  for (double& m : mag) m = std::sqrt(m);
  return mag;
}

struct MixedAccum {
  // accumulates the six pieces given per-v values of the x-norms
  double l2 = 0, l2g = 0, lv1 = 0, lv1g = 0, lv53 = 0, lv53g = 0;
  void add(double w, double vr2, double xl2_sq, double xl2g_sq, double xinf,
           double xinfg) {
    l2 += w * vr2 * xl2_sq;
    l2g += w * vr2 * xl2g_sq;
    lv1 += w * xinf;
    lv1g += w * xinfg;
    lv53 += w * std::pow(xinf, 5.0 / 3.0);
    lv53g += w * std::pow(xinfg, 5.0 / 3.0);
  }
  ZBreakdown finish(int d, const ZParams& zp) const {
    ZBreakdown z;
    z.l2_grad = std::pow(zp.M, (d - 3) / 2.0) * std::sqrt(l2g);
    z.l2 = std::pow(zp.M, (d - 1) / 2.0) * std::sqrt(l2);
    z.lv1 = std::pow(zp.N2, zp.gamma) * lv1;
    z.lv53 = std::pow(zp.N2, 2.0 * d / 5.0 + zp.gamma) * std::pow(lv53, 3.0 / 5.0);
    z.lv1_grad = std::pow(zp.M, -1.0) * std::pow(zp.N2, zp.gamma) * lv1g;
    z.lv53_grad = std::pow(zp.M, -1.0) * std::pow(zp.N2, 2.0 * d / 5.0 + zp.gamma) *
                  std::pow(lv53g, 3.0 / 5.0);
    z.total = z.l2_grad + z.l2 + z.lv1 + z.lv53 + z.lv1_grad + z.lv53_grad;
    return z;
  }
};

ZBreakdown dense_z(const DenseField& df, const ZParams& zp) {
  const Grid& g = df.grid;
  const std::vector<double> gmag = dense_grad_mag(df);
  const long long sx = g.size_x(), sv = g.size_v();
  const double cellx = g.cell_x(), cellv = g.cell_v();
  MixedAccum acc;
  for (long long fv = 0; fv < sv; ++fv) {
    const double vr2 = std::pow(1.0 + norm2(g.v_point(fv)), zp.r0);
    double l2 = 0, l2g = 0, xinf = 0, xinfg = 0;
    for (long long fx = 0; fx < sx; ++fx) {
      const double val = df.at(fx, fv);
      const double gm = gmag[fx * sv + fv];
      l2 += val * val;
      l2g += gm * gm;
      xinf = std::max(xinf, std::abs(val));
      xinfg = std::max(xinfg, gm);
    }
    acc.add(cellv, vr2, l2 * cellx, l2g * cellx, xinf, xinfg);
  }
  return acc.finish(g.d, zp);
}

// max of |f| and |grad f| over a chart lattice with local refinement
void analytic_xmax(const PhaseField& f, const XLatticeSpec& sp, int d, const Vec& v,
                   double& fmax, double& gmax) {
  std::vector<Vec> pts;
  lattice_points(sp, d, pts);
  fmax = 0.0;
  gmax = 0.0;
  Vec argf = sp.origin, argg = sp.origin;
  const AnalyticCore& core = f.core();
  const SupportBox sb = core.support();
  auto gval = [&](const Vec& x) {
    for (int k = 0; k < d; ++k)
      if (x[k] < sb.xlo[k] || x[k] > sb.xhi[k] || v[k] < sb.vlo[k] || v[k] > sb.vhi[k])
        return 0.0;
    return norm(core.grad_x_raw(x, v));
  };
  for (const Vec& p : pts) {
    const double av = std::abs(f.eval(p, v));
    if (av > fmax) {
      fmax = av;
      argf = p;
    }
    const double ag = gval(p);
    if (ag > gmax) {
      gmax = ag;
      argg = p;
    }
  }
  // two shrink-by-4 refinement rounds around each argmax
  double step[3];
  for (int k = 0; k < d; ++k) step[k] = 2.0 * sp.half[k] / sp.n[k];
  for (int round = 0; round < 2; ++round) {
    for (int k = 0; k < d; ++k) step[k] *= 0.25;
    Vec bf = argf, bg = argg;
    const int m = d == 2 ? 5 : 3;
    for (int i0 = -m / 2; i0 <= m / 2; ++i0)
      for (int i1 = -m / 2; i1 <= m / 2; ++i1)
        for (int i2 = -(d == 3 ? m / 2 : 0); i2 <= (d == 3 ? m / 2 : 0); ++i2) {
          Vec p = argf;
          p[0] += i0 * step[0];
          p[1] += i1 * step[1];
          if (d == 3) p[2] += i2 * step[2];
          const double av = std::abs(f.eval(p, v));
          if (av > fmax) {
            fmax = av;
            bf = p;
          }
          Vec q = argg;
          q[0] += i0 * step[0];
          q[1] += i1 * step[1];
          if (d == 3) q[2] += i2 * step[2];
          const double ag = gval(q);
          if (ag > gmax) {
            gmax = ag;
            bg = q;
          }
        }
    argf = bf;
    argg = bg;
  }
}

ZBreakdown analytic_z(const PhaseField& f, const ZParams& zp) {
  const AnalyticCore& core = f.core();
  const NormPlan* plan = core.norm_plan();
  if (!plan) throw validation_error("z_norm: analytic field carries no quadrature plan");
  const int d = core.dim();
  const SupportBox sb = core.support();
  MixedAccum acc;
  for (const NormChart& ch : plan->charts) {
    struct Part {
      double w, vr2, l2, l2g, xinf, xinfg;
    };
    std::vector<Part> parts(ch.vnodes.size());
    par::parallel_for(0, static_cast<long long>(ch.vnodes.size()), [&](long long i) {
      const VNode& vn = ch.vnodes[i];
      const XLatticeSpec sp = ch.xbox(vn.v);
      std::vector<Vec> pts;
      lattice_points(sp, d, pts);
      double cellx = 1.0;
      for (int k = 0; k < d; ++k) cellx *= 2.0 * sp.half[k] / sp.n[k];
      double l2 = 0, l2g = 0;
      for (const Vec& p : pts) {
        const double val = f.eval(p, vn.v);
        l2 += val * val;
        bool in = true;
        for (int k = 0; k < d; ++k)
          if (p[k] < sb.xlo[k] || p[k] > sb.xhi[k] || vn.v[k] < sb.vlo[k] ||
              vn.v[k] > sb.vhi[k])
            in = false;
        if (in) {
          const double gm = norm(core.grad_x_raw(p, vn.v));
          l2g += gm * gm;
        }
      }
      double xinf, xinfg;
      analytic_xmax(f, sp, d, vn.v, xinf, xinfg);
      parts[i] = {vn.w, std::pow(1.0 + norm2(vn.v), zp.r0), l2 * cellx, l2g * cellx,
                  xinf, xinfg};
    });
    for (const Part& p : parts) acc.add(p.w, p.vr2, p.l2, p.l2g, p.xinf, p.xinfg);
  }
  return acc.finish(d, zp);
}

}  // namespace

ZBreakdown z_norm_breakdown(const PhaseField& f, const ZParams& zp) {
  return f.is_dense() ? dense_z(f.dense(), zp) : analytic_z(f, zp);
}

double z_norm(const PhaseField& f, const ZParams& zp) {
  return z_norm_breakdown(f, zp).total;
}

// ---------------------------------------------------------------------------
// Fourier restriction norm
// ---------------------------------------------------------------------------

double TaperSpec::value(double t) const {
  const double mid = 0.5 * (t0 + t1), hw = 0.5 * (t1 - t0);
  if (hw <= 0.0) return 0.0;
  return smooth_cutoff_radial(2.0 * std::abs(t - mid) / hw);
}

double xsrb_norm(const Trajectory& traj, double s, double r, double b,
                 const TaperSpec& taper) {
  traj.validate();
  const int nt = static_cast<int>(traj.times.size());
  if (nt < 8) throw validation_error("xsrb_norm: fewer than 8 time samples");
  const Grid& g = traj.grid;
  const long long sx = g.size_x(), sv = g.size_v();
  const double dt = traj.dt();
  const double Tspan = nt * dt;

  // layout [t][x][v], DFT over t and the x-axes
  std::vector<cplx> work(static_cast<long long>(nt) * sx * sv);
  for (int it = 0; it < nt; ++it) {
    const double th = taper.value(traj.times[it]);
    const double* src = traj.fields[it].a.data();
    cplx* dst = work.data() + static_cast<long long>(it) * sx * sv;
    for (long long i = 0; i < sx * sv; ++i) dst[i] = th * src[i];
  }
  std::vector<int> dims;
  dims.push_back(nt);
  for (int k = 0; k < g.d; ++k) dims.push_back(g.nx);
  for (int k = 0; k < g.d; ++k) dims.push_back(g.nv);
  std::vector<int> axes;
  axes.push_back(0);
  for (int k = 0; k < g.d; ++k) axes.push_back(1 + k);
  dft_axes(work.data(), dims, axes, false);

  const double measure =
      dt * g.cell_x() * g.cell_v() / (static_cast<double>(nt) * g.size_x());
  double acc = 0.0;
  for (int it = 0; it < nt; ++it) {
    const double tau = 2.0 * pi * freq_index(it, nt) / Tspan;
    for (long long fx = 0; fx < sx; ++fx) {
      int idx[3] = {0, 0, 0};
      g.unflat(fx, g.nx, idx);
      Vec eta{0, 0, 0};
      for (int k = 0; k < g.d; ++k) eta[k] = freq_phys(idx[k], g.nx, g.Lx);
      const double eta_w = std::pow(1.0 + norm2(eta), s);
      const cplx* row = work.data() + (static_cast<long long>(it) * sx + fx) * sv;
      for (long long fv = 0; fv < sv; ++fv) {
        const Vec v = g.v_point(fv);
        const double mod = tau + dot(eta, v);
        const double w2 =
            std::pow(1.0 + mod * mod, b) * eta_w * std::pow(1.0 + norm2(v), r);
        acc += w2 * std::norm(row[fv]);
      }
    }
  }
  return std::sqrt(acc * measure);
}

}  // namespace kdl
