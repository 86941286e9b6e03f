#include "kdl/inequalities.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kdl/cutoff.hpp"
#include "kdl/fft.hpp"
#include "kdl/par.hpp"
#include "kdl/rng.hpp"

namespace kdl {

const char* ineq_kind_name(IneqKind k) {
  switch (k) {
    case IneqKind::HLS: return "HLS";
    case IneqKind::EndpointHLS: return "EndpointHLS";
    case IneqKind::QGainLr: return "QGainLr";
    case IneqKind::QLossLr: return "QLossLr";
    case IneqKind::QGainL1: return "QGainL1";
    case IneqKind::FracLeibniz: return "FracLeibniz";
    case IneqKind::Strichartz: return "Strichartz";
    case IneqKind::QGainHalfHalf: return "QGainHalfHalf";
  }
  return "?";
}

IneqKind ineq_kind_from_name(const std::string& s) {
  for (IneqKind k :
       {IneqKind::HLS, IneqKind::EndpointHLS, IneqKind::QGainLr, IneqKind::QLossLr,
        IneqKind::QGainL1, IneqKind::FracLeibniz, IneqKind::Strichartz,
        IneqKind::QGainHalfHalf})
    if (s == ineq_kind_name(k)) return k;
  throw validation_error("unknown inequality kind: " + s);
}

namespace {

// ---- little dense toolbox on a d-dim box [-L,L)^n ------------------------

struct Box {
  int d, n;
  double L;
  long long size() const {
    long long s = 1;
    for (int k = 0; k < d; ++k) s *= n;
    return s;
  }
  double h() const { return 2.0 * L / n; }
  double cell() const { return std::pow(h(), d); }
  Vec point(long long f) const {
    int idx[3] = {0, 0, 0};
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(f % n);
      f /= n;
    }
    Vec p{0, 0, 0};
    for (int k = 0; k < d; ++k) p[k] = -L + idx[k] * h();
    return p;
  }
};

double lp_norm(const std::vector<double>& f, const Box& b, double p) {
  double s = 0.0;
  for (double v : f) s += std::pow(std::abs(v), p);
  return std::pow(s * b.cell(), 1.0 / p);
}

// nonnegative compactly supported mixture of shifted gaussians and ball
// indicators
std::vector<double> random_bump_field(const Box& b, Rng& rng, bool smooth_only = false) {
  std::vector<double> f(b.size(), 0.0);
  const int ncomp = rng.uniform_int(1, 3);
  for (int c = 0; c < ncomp; ++c) {
    Vec ctr{0, 0, 0};
    for (int k = 0; k < b.d; ++k) ctr[k] = rng.uniform(-0.45 * b.L, 0.45 * b.L);
    const double width = rng.uniform(0.12, 0.35) * b.L;
    const double amp = rng.uniform(0.2, 1.0);
    const bool gaussian = smooth_only || rng.uniform() < 0.6;
    for (long long i = 0; i < b.size(); ++i) {
      const Vec p = b.point(i);
      const double r2 = norm2(p - ctr);
      if (gaussian) {
        if (r2 < 6.25 * width * width)  // truncated tail keeps support compact
          f[i] += amp * std::exp(-r2 / (2.0 * width * width));
      } else if (r2 <= width * width) {
        f[i] += amp;
      }
    }
  }
  return f;
}

std::string relation_str(const char* rel, std::initializer_list<double> vals) {
  std::ostringstream os;
  os << rel << " [";
  bool first = true;
  for (double v : vals) {
    if (!first) os << ", ";
    os << v;
    first = false;
  }
  os << "]";
  return os.str();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw validation_error("check_inequality: violated scaling relation: " + msg);
}

// ---- per-kind trial machines ----------------------------------------------

struct TrialResult {
  double lhs, rhs;
};

TrialResult trial_hls(const IneqInputs& in, Rng& rng) {
  Box b{in.d, in.grid_n, in.L};
  const auto f = random_bump_field(b, rng);
  const auto h = random_bump_field(b, rng);
  const double cell = b.cell();
  std::vector<Vec> pts(b.size());
  for (long long i = 0; i < b.size(); ++i) pts[i] = b.point(i);
  double lhs = 0.0;
  for (long long i = 0; i < b.size(); ++i) {
    if (f[i] == 0.0) continue;
    double row = 0.0;
    for (long long j = 0; j < b.size(); ++j) {
      if (h[j] == 0.0) continue;
      const double r = norm(pts[i] - pts[j]);
      if (r < 0.5 * b.h()) continue;  // regularized diagonal
      row += h[j] * std::pow(r, in.gamma);
    }
    lhs += f[i] * row;
  }
  lhs *= cell * cell;
  return {lhs, lp_norm(f, b, in.p) * lp_norm(h, b, in.r)};
}

TrialResult trial_endpoint_hls(const IneqInputs& in, Rng& rng) {
  Box b{in.d, in.grid_n, in.L};
  const auto f = random_bump_field(b, rng);
  double lhs = 0.0;
  for (long long i = 0; i < b.size(); ++i) {
    const double r = norm(b.point(i));
    if (r < 0.5 * b.h()) continue;
    lhs += std::abs(f[i]) * std::pow(r, in.gamma);
  }
  lhs *= b.cell();
  const double al =
      ((in.q - 1.0) / in.q + in.gamma / in.d) / (1.0 / in.p - 1.0 / in.q);
  const double be =
      (-in.gamma / in.d - (in.p - 1.0) / in.p) / (1.0 / in.p - 1.0 / in.q);
  return {lhs, std::pow(lp_norm(f, b, in.p), al) * std::pow(lp_norm(f, b, in.q), be)};
}

TrialResult trial_qpm_lr(const IneqInputs& in, Rng& rng, bool gain,
                         const CollisionTables& tab, const Grid& g) {
  Box b{in.d, in.grid_n, in.L};
  const auto f = random_bump_field(b, rng);
  const auto gg = random_bump_field(b, rng);
  std::vector<double> out(b.size());
  if (gain)
    tab.gain_slice(f.data(), gg.data(), out.data());
  else
    tab.loss_slice(f.data(), gg.data(), out.data());
  (void)g;
  return {lp_norm(out, b, in.r), lp_norm(f, b, in.p) * lp_norm(gg, b, in.q)};
}

TrialResult trial_qgain_l1(const IneqInputs& in, Rng& rng, const CollisionTables& tab) {
  Box b{in.d, in.grid_n, in.L};
  const auto f = random_bump_field(b, rng);
  const auto gg = random_bump_field(b, rng);
  std::vector<double> out(b.size());
  tab.gain_slice(f.data(), gg.data(), out.data());
  const double a = 1.0 / (in.d * (1.0 - 1.0 / in.p));
  const double rhs = lp_norm(f, b, 1.0) * std::pow(lp_norm(gg, b, 1.0), 1.0 - a) *
                     std::pow(lp_norm(gg, b, in.p), a);
  return {lp_norm(out, b, 1.0), rhs};
}

// <grad>^s through the periodic spectrum of the box
std::vector<double> bessel_pow(const std::vector<double>& f, const Box& b, double s) {
  std::vector<cplx> w(f.begin(), f.end());
  std::vector<int> dims(b.d, b.n), axes(b.d);
  for (int k = 0; k < b.d; ++k) axes[k] = k;
  dft_axes(w.data(), dims, axes, false);
  for (long long i = 0; i < b.size(); ++i) {
    long long rem = i;
    double k2 = 0.0;
    for (int k = b.d - 1; k >= 0; --k) {
      const int ik = static_cast<int>(rem % b.n);
      rem /= b.n;
      const double kk = freq_phys(ik, b.n, b.L);
      k2 += kk * kk;
    }
    w[i] *= std::pow(1.0 + k2, s / 2.0);
  }
  dft_axes(w.data(), dims, axes, true);
  std::vector<double> out(b.size());
  for (long long i = 0; i < b.size(); ++i) out[i] = w[i].real();
  return out;
}

TrialResult trial_frac_leibniz(const IneqInputs& in, Rng& rng) {
  Box b{in.d, in.grid_n, in.L};
  const auto f = random_bump_field(b, rng, true);
  const auto g = random_bump_field(b, rng, true);
  std::vector<double> fg(b.size());
  for (long long i = 0; i < b.size(); ++i) fg[i] = f[i] * g[i];
  const auto dfg = bessel_pow(fg, b, in.s);
  const auto df = bessel_pow(f, b, in.s);
  const auto dg = bessel_pow(g, b, in.s);
  // 1/r = 1/p1 + 1/q1 = 1/p2 + 1/q2 with p1 = q1 = p2 = q2 = 2r
  const double pr = 2.0 * in.r;
  const double rhs = lp_norm(df, b, pr) * lp_norm(g, b, pr) +
                     lp_norm(f, b, pr) * lp_norm(dg, b, pr);
  return {lp_norm(dfg, b, in.r), rhs};
}

TrialResult trial_strichartz(const IneqInputs& in, Rng& rng) {
  // phase-space box (x, xi), propagator e^{it grad_x . grad_xi}
  const int d = in.d, n = in.grid_n;
  const long long sx = static_cast<long long>(std::pow(n, d));
  const long long tot = sx * sx;
  std::vector<double> re(tot, 0.0);
  // random smooth bump in the 2d-dim (x, xi) box
  Box bx{d, n, in.L};
  const int ncomp = rng.uniform_int(1, 2);
  std::vector<Vec> cx(ncomp), cxi(ncomp);
  std::vector<double> wid(ncomp), amp(ncomp);
  for (int c = 0; c < ncomp; ++c) {
    for (int k = 0; k < d; ++k) {
      cx[c][k] = rng.uniform(-0.4 * in.L, 0.4 * in.L);
      cxi[c][k] = rng.uniform(-0.4 * in.L, 0.4 * in.L);
    }
    wid[c] = rng.uniform(0.15, 0.3) * in.L;
    amp[c] = rng.uniform(0.2, 1.0);
  }
  for (long long ix = 0; ix < sx; ++ix) {
    const Vec x = bx.point(ix);
    for (long long ixi = 0; ixi < sx; ++ixi) {
      const Vec xi = bx.point(ixi);
      double val = 0.0;
      for (int c = 0; c < ncomp; ++c)
        val += amp[c] * std::exp(-(norm2(x - cx[c]) + norm2(xi - cxi[c])) /
                                 (2.0 * wid[c] * wid[c]));
      re[ix * sx + ixi] = val;
    }
  }
  std::vector<cplx> spec(re.begin(), re.end());
  std::vector<int> dims(2 * d, n), axes(2 * d);
  for (int k = 0; k < 2 * d; ++k) axes[k] = k;
  dft_axes(spec.data(), dims, axes, false);

  const double cell = std::pow(2.0 * in.L / n, 2 * d);
  const double l2 = [&] {
    double s = 0.0;
    for (double v : re) s += v * v;
    return std::sqrt(s * cell);
  }();

  const int nt = 16;
  const double T = 1.0;
  double acc = 0.0;
  std::vector<cplx> work(tot);
  for (int it = 0; it < nt; ++it) {
    const double t = T * (it + 0.5) / nt;
    // multiply spectrum by exp(-i t kx . kxi)
    for (long long ix = 0; ix < sx; ++ix) {
      long long rem = ix;
      double kx[3] = {0, 0, 0};
      for (int k = d - 1; k >= 0; --k) {
        kx[k] = freq_phys(static_cast<int>(rem % n), n, in.L);
        rem /= n;
      }
      for (long long ixi = 0; ixi < sx; ++ixi) {
        rem = ixi;
        double dotk = 0.0;
        for (int k = d - 1; k >= 0; --k) {
          dotk += kx[k] * freq_phys(static_cast<int>(rem % n), n, in.L);
          rem /= n;
        }
        work[ix * sx + ixi] = spec[ix * sx + ixi] * std::exp(cplx(0.0, -t * dotk));
      }
    }
    dft_axes(work.data(), dims, axes, true);
    double lp = 0.0;
    for (long long i = 0; i < tot; ++i) lp += std::pow(std::abs(work[i]), in.st_p);
    lp = std::pow(lp * cell, 1.0 / in.st_p);
    acc += std::pow(lp, in.st_q) * (T / nt);
  }
  return {std::pow(acc, 1.0 / in.st_q), l2};
}

// the bilinear gain-form estimate of the frequency-side integral, with
// analytic gaussian-mixture spectra so off-lattice samples are exact
TrialResult trial_qgain_halfhalf(const IneqInputs& in, Rng& rng) {
  const int d = in.d;
  struct Mix {
    std::vector<Vec> c;
    std::vector<double> w, a;
    double operator()(const Vec& p) const {
      double s = 0.0;
      for (size_t i = 0; i < c.size(); ++i)
        s += a[i] * std::exp(-norm2(p - c[i]) / (2.0 * w[i] * w[i]));
      return s;
    }
  };
  auto make = [&](Mix& m) {
    const int nc = rng.uniform_int(1, 3);
    m.c.resize(nc);
    m.w.resize(nc);
    m.a.resize(nc);
    for (int i = 0; i < nc; ++i) {
      for (int k = 0; k < d; ++k) m.c[i][k] = rng.uniform(-0.4 * in.L, 0.4 * in.L);
      m.w[i] = rng.uniform(0.15, 0.35) * in.L;
      m.a[i] = rng.uniform(0.2, 1.0);
    }
  };
  Mix mf, mg;
  make(mf);
  make(mg);

  CollisionKernel kern;
  kern.gamma = in.gamma;
  SphereQuadrature sq = sphere_quadrature(d, d == 2 ? 16 : 8);
  RadialSingularRule rad(in.gamma, 2.5 * in.L, 12);
  std::vector<Vec> zdirs;
  std::vector<double> zw;
  if (d == 2) {
    for (int i = 0; i < 16; ++i) {
      const double th = 2.0 * pi * (i + 0.5) / 16;
      zdirs.push_back(vec2(std::cos(th), std::sin(th)));
      zw.push_back(2.0 * pi / 16);
    }
  } else {
    SphereQuadrature s2 = sphere_quadrature(3, 6);
    zdirs = s2.nodes;
    zw = s2.w;
  }

  Box b{d, in.grid_n, in.L};
  double lhs2 = 0.0;
  for (long long i = 0; i < b.size(); ++i) {
    const Vec xi = b.point(i);
    const double axi = norm(xi);
    double val = 0.0;
    for (size_t io = 0; io < sq.nodes.size(); ++io) {
      const Vec& om = sq.nodes[io];
      const Vec xp = 0.5 * (xi + axi * om);
      const Vec xm = 0.5 * (xi - axi * om);
      const double bfac = axi > 0 ? kern.b(dot(xi, om) / axi) : kern.b(1.0);
      if (bfac == 0.0) continue;
      double inner = 0.0;
      for (size_t ia = 0; ia < zdirs.size(); ++ia)
        for (size_t ir = 0; ir < rad.r.size(); ++ir) {
          const Vec eta = rad.r[ir] * zdirs[ia];
          inner += zw[ia] * rad.w[ir] * mf(xp + eta) * mg(xm - eta);
        }
      val += sq.w[io] * bfac * inner;
    }
    lhs2 += val * val;
  }
  const double lhs = std::sqrt(lhs2 * b.cell());
  const double pf = 2.0 * in.p * d / (2.0 * d - in.p * in.gamma);
  const double qf = 2.0 * in.q * d / (2.0 * d - in.q * in.gamma);
  std::vector<double> fs(b.size()), gs(b.size());
  for (long long i = 0; i < b.size(); ++i) {
    fs[i] = mf(b.point(i));
    gs[i] = mg(b.point(i));
  }
  return {lhs, lp_norm(fs, b, pf) * lp_norm(gs, b, qf)};
}

}  // namespace

InequalityReport check_inequality(IneqKind kind, IneqInputs in, int trials,
                                  std::uint64_t seed) {
  // validate / derive exponents against the cited scaling relation
  switch (kind) {
    case IneqKind::HLS: {
      if (in.p <= 0) in.p = 8.0 / 7.0;
      if (in.r <= 0) in.r = 1.0 / (2.0 + in.gamma / in.d - 1.0 / in.p);
      require(in.p > 1 && in.r > 1 &&
                  std::abs(1.0 / in.p + 1.0 / in.r - 2.0 - in.gamma / in.d) < 1e-9,
              relation_str("1/p + 1/r = 2 + gamma/d", {in.p, in.r, in.gamma}));
      break;
    }
    case IneqKind::EndpointHLS: {
      if (in.p <= 0) in.p = 1.0;
      if (in.q <= 0) in.q = 4.0;
      require(in.p >= 1.0 && in.p < in.d / (in.d + in.gamma) &&
                  in.q > in.d / (in.d + in.gamma),
              relation_str("1 <= p < d/(d+gamma) < q", {in.p, in.q, in.gamma}));
      break;
    }
    case IneqKind::QGainLr:
    case IneqKind::QLossLr: {
      if (in.p <= 0) in.p = kind == IneqKind::QLossLr ? 8.0 : 2.0;
      if (in.q <= 0) in.q = kind == IneqKind::QLossLr ? 8.0 / 7.0 : 2.0;
      if (in.r <= 0) in.r = 1.0 / (1.0 / in.p + 1.0 / in.q - 1.0 - in.gamma / in.d);
      require(in.p > 1 && in.q > 1 && in.r > 1 &&
                  std::abs(1.0 / in.p + 1.0 / in.q - 1.0 - in.gamma / in.d - 1.0 / in.r) <
                      1e-9,
              relation_str("1/p + 1/q = 1 + gamma/d + 1/r", {in.p, in.q, in.r, in.gamma}));
      if (kind == IneqKind::QLossLr)
        require(in.p > in.r, relation_str("p > r for the loss term", {in.p, in.r}));
      break;
    }
    case IneqKind::QGainL1: {
      in.d = 3;  // gamma = -1 endpoint estimate lives at d = 3 in range
      in.gamma = -1.0;
      if (in.p <= 0) in.p = 2.0;
      require(in.p > 1.0, relation_str("p > 1", {in.p}));
      if (in.grid_n > 16) in.grid_n = 16;
      break;
    }
    case IneqKind::FracLeibniz: {
      if (in.r <= 0) in.r = 2.0;
      require(in.s >= 0.0 && in.r > 1.0, relation_str("s >= 0, r > 1", {in.s, in.r}));
      break;
    }
    case IneqKind::Strichartz: {
      require(std::abs(2.0 / in.st_q + 2.0 * in.d / in.st_p - in.d) < 1e-9 &&
                  in.st_q >= 2.0,
              relation_str("2/q + 2d/p = d, q >= 2", {in.st_q, in.st_p}));
      if (in.grid_n > 16 && in.d == 2) in.grid_n = 16;  // (x,xi) is 2d-dimensional
      break;
    }
    case IneqKind::QGainHalfHalf: {
      if (in.p <= 0) in.p = 4.0;
      if (in.q <= 0) in.q = 4.0;
      require(std::abs(1.0 / in.p + 1.0 / in.q - 0.5) < 1e-9,
              relation_str("1/p + 1/q = 1/2", {in.p, in.q}));
      break;
    }
  }

  // shared collision tables for the Q trials
  std::unique_ptr<CollisionTables> tab;
  if (kind == IneqKind::QGainLr || kind == IneqKind::QLossLr ||
      kind == IneqKind::QGainL1) {
    Grid g;
    g.d = in.d;
    g.Lv = in.L;
    g.nv = std::max(8, in.grid_n);
    g.Lx = 1.0;
    g.nx = 8;
    in.grid_n = g.nv;
    CollisionKernel kern;
    kern.gamma = in.gamma;
    kern.validate(in.d);
    tab = std::make_unique<CollisionTables>(g, kern,
                                            sphere_quadrature(in.d, in.d == 2 ? 16 : 8));
  }

  std::vector<double> ratios(trials, 0.0);
  par::parallel_for(0, trials, [&](long long t) {
    Rng rng(seed, static_cast<std::uint64_t>(t));
    TrialResult res{0.0, 1.0};
    switch (kind) {
      case IneqKind::HLS: res = trial_hls(in, rng); break;
      case IneqKind::EndpointHLS: res = trial_endpoint_hls(in, rng); break;
      case IneqKind::QGainLr: {
        Grid g;
        g.d = in.d;
        g.Lv = in.L;
        g.nv = in.grid_n;
        res = trial_qpm_lr(in, rng, true, *tab, g);
        break;
      }
      case IneqKind::QLossLr: {
        Grid g;
        g.d = in.d;
        g.Lv = in.L;
        g.nv = in.grid_n;
        res = trial_qpm_lr(in, rng, false, *tab, g);
        break;
      }
      case IneqKind::QGainL1: res = trial_qgain_l1(in, rng, *tab); break;
      case IneqKind::FracLeibniz: res = trial_frac_leibniz(in, rng); break;
      case IneqKind::Strichartz: res = trial_strichartz(in, rng); break;
      case IneqKind::QGainHalfHalf: res = trial_qgain_halfhalf(in, rng); break;
    }
    ratios[t] = res.rhs > 0.0 ? res.lhs / res.rhs : 0.0;
  }, 1);

  InequalityReport rep;
  rep.kind = ineq_kind_name(kind);
  rep.trials = trials;
  rep.seed = seed;
  rep.worst_ratio = 0.0;
  for (double r : ratios) {
    if (!std::isfinite(r))
      throw divergence_error("check_inequality: non-finite trial ratio", ratios);
    rep.worst_ratio = std::max(rep.worst_ratio, r);
  }
  switch (kind) {
    case IneqKind::HLS: rep.relation = "1/p+1/r = 2+gamma/d"; break;
    case IneqKind::EndpointHLS: rep.relation = "1 <= p < d/(d+gamma) < q"; break;
    case IneqKind::QGainLr:
    case IneqKind::QLossLr: rep.relation = "1/p+1/q = 1+gamma/d+1/r"; break;
    case IneqKind::QGainL1: rep.relation = "gamma = -1, alpha = 1/(d(1-1/p))"; break;
    case IneqKind::FracLeibniz: rep.relation = "1/r = 1/p_i + 1/q_i"; break;
    case IneqKind::Strichartz: rep.relation = "2/q + 2d/p = d"; break;
    case IneqKind::QGainHalfHalf: rep.relation = "1/p + 1/q = 1/2"; break;
  }
  return rep;
}

}  // namespace kdl
