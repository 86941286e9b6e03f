#include "kdl/collision.hpp"

#include <algorithm>
#include <cmath>

#include "kdl/cutoff.hpp"
#include "kdl/fft.hpp"
#include "kdl/par.hpp"

namespace kdl {

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

void CollisionKernel::validate(int d) {
  if (variant == KernelVariant::PowerLaw) {
    if (gamma < -(d - 1) / 2.0 - 1e-12 || gamma > 1e-12)
      throw validation_error("CollisionKernel: gamma out of range -(d-1)/2 <= gamma <= 0");
  } else if (d != 3) {
    throw validation_error("CollisionKernel: composite kernel requires d = 3");
  }
  if (cutoff_eps < 0.0) throw validation_error("CollisionKernel: cutoff_eps >= 0 required");
  double C = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double c = -1.0 + 2.0 * i / 1000.0;
    const double bc = b(c);
    if (!(bc >= 0.0)) throw validation_error("CollisionKernel: b must be nonnegative");
    if (std::abs(c) > 1e-9) C = std::max(C, bc / std::abs(c));
  }
  if (!(b(0.0) <= 1e-12) || !std::isfinite(C))
    throw validation_error("CollisionKernel: Grad cutoff b(c) <= C|c| violated");
  grad_constant = C;
}

double CollisionKernel::radial(double r) const {
  if (variant == KernelVariant::PowerLaw) return std::pow(r, gamma);
  return r <= 1.0 ? r : 1.0 / r;
}

double CollisionKernel::b_l1(int d) const {
  // ||b||_{L^1(S^{d-1})}; smooth composite rule handles the |c|-type kink
  const int n = 4096;
  double s = 0.0;
  if (d == 2) {
    for (int i = 0; i < n; ++i) s += b(std::cos(2.0 * pi * (i + 0.5) / n));
    return s * 2.0 * pi / n;
  }
  for (int i = 0; i < n; ++i) {
    const double t = -1.0 + 2.0 * (i + 0.5) / n;
    s += b(t);
  }
  return 2.0 * pi * s * 2.0 / n;
}

double kernel_eval(const CollisionKernel& k, const Vec& u, const Vec& v,
                   const Vec& omega, int d, double hv) {
  Vec w = u - v;
  if (d == 2) w[2] = 0.0;
  const double r = norm(w);
  if (r < k.cutoff_eps * hv) return 0.0;  // regularized diagonal
  if (r == 0.0)
    throw validation_error("kernel_eval: singular point u = v with cutoff_eps = 0");
  const double c = dot(w, omega) / r;
  return k.radial(r) * k.b(c);
}

// ---------------------------------------------------------------------------
// direct tables
// ---------------------------------------------------------------------------

long long CollisionTables::diff_index(const int* dw) const {
  const int m = 2 * nv_ - 1;
  long long f = 0;
  for (int k = 0; k < d_; ++k) f = f * m + (dw[k] + nv_ - 1);
  return f;
}

CollisionTables::CollisionTables(const Grid& g, const CollisionKernel& k,
                                 const SphereQuadrature& sq)
    : grid_(g), d_(g.d), nv_(g.nv) {
  g.validate();
  if (sq.d != g.d) throw validation_error("CollisionTables: sphere rule dimension mismatch");
  const double h = g.hv();
  const double cell = g.cell_v();
  const int m = 2 * nv_ - 1;
  long long ndiff = 1;
  for (int kk = 0; kk < d_; ++kk) ndiff *= m;
  loss_w_.assign(ndiff, 0.0);
  gain_.assign(ndiff, {});

  // flat strides of the velocity block
  long long stride[3] = {0, 0, 0};
  stride[d_ - 1] = 1;
  for (int kk = d_ - 2; kk >= 0; --kk) stride[kk] = stride[kk + 1] * nv_;

  std::vector<int> dw(d_, -(nv_ - 1));
  for (long long di = 0; di < ndiff; ++di) {
    // decode difference multi-index
    long long rem = di;
    for (int kk = d_ - 1; kk >= 0; --kk) {
      dw[kk] = static_cast<int>(rem % m) - (nv_ - 1);
      rem /= m;
    }
    Vec w{0, 0, 0};
    for (int kk = 0; kk < d_; ++kk) w[kk] = dw[kk] * h;
    const double r = norm(w);
    if (r < k.cutoff_eps * h || r == 0.0) continue;
    const double phi = k.radial(r);
    double lw = 0.0;
    auto& entries = gain_[di];
    for (size_t io = 0; io < sq.nodes.size(); ++io) {
      const Vec& om = sq.nodes[io];
      const double c = dot(w, om) / r;
      const double bw = phi * k.b(c) * sq.w[io] * cell;
      lw += bw;
      if (bw == 0.0) continue;
      // post-collision offsets: v* = v + (w.om)om, u* = u - (w.om)om
      const double lam = dot(w, om);
      GainEntry e{};
      e.bw = bw;
      double fr_v[3], fr_u[3];
      for (int kk = 0; kk < d_; ++kk) {
        const double dv = lam * om[kk] / h;
        double b0 = std::floor(dv);
        e.bv[kk] = static_cast<int>(b0);
        fr_v[kk] = dv - b0;
        const double du = -lam * om[kk] / h;
        b0 = std::floor(du);
        e.bu[kk] = static_cast<int>(b0);
        fr_u[kk] = du - b0;
      }
      e.off_v = 0;
      e.off_u = 0;
      for (int kk = 0; kk < d_; ++kk) {
        e.off_v += e.bv[kk] * static_cast<int>(stride[kk]);
        e.off_u += e.bu[kk] * static_cast<int>(stride[kk]);
      }
      const int corners = 1 << d_;
      for (int cc = 0; cc < corners; ++cc) {
        double wv = 1.0, wu = 1.0;
        for (int kk = 0; kk < d_; ++kk) {
          const int bit = (cc >> kk) & 1;
          wv *= bit ? fr_v[kk] : 1.0 - fr_v[kk];
          wu *= bit ? fr_u[kk] : 1.0 - fr_u[kk];
        }
        e.wv[cc] = wv;
        e.wu[cc] = wu;
      }
      entries.push_back(e);
    }
    loss_w_[di] = lw;
  }
}

void CollisionTables::loss_slice(const double* f, const double* g, double* out) const {
  const long long sv = grid_.size_v();
  const int m = 2 * nv_ - 1;
  if (d_ == 2) {
    for (int a0 = 0; a0 < nv_; ++a0)
      for (int a1 = 0; a1 < nv_; ++a1) {
        const long long iv = static_cast<long long>(a0) * nv_ + a1;
        if (f[iv] == 0.0) {
          out[iv] = 0.0;
          continue;
        }
        double acc = 0.0;
        const double* gp = g;
        for (int b0 = 0; b0 < nv_; ++b0) {
          const double* lw = &loss_w_[static_cast<long long>(b0 - a0 + nv_ - 1) * m +
                                      (0 - a1 + nv_ - 1)];
          for (int b1 = 0; b1 < nv_; ++b1) acc += gp[b1] * lw[b1];
          gp += nv_;
        }
        out[iv] = f[iv] * acc;
      }
    return;
  }
  // d == 3
  for (long long iv = 0; iv < sv; ++iv) {
    if (f[iv] == 0.0) {
      out[iv] = 0.0;
      continue;
    }
    int a[3];
    grid_.unflat(iv, nv_, a);
    double acc = 0.0;
    for (long long iu = 0; iu < sv; ++iu) {
      int b[3];
      grid_.unflat(iu, nv_, b);
      int dw[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
      acc += g[iu] * loss_w_[diff_index(dw)];
    }
    out[iv] = f[iv] * acc;
  }
}

namespace {

// multilinear gather on one velocity slice with zero padding outside
inline double gather2(const double* s, int n, int i0, int i1, const double* w) {
  double acc = 0.0;
  const bool ok0 = i0 >= 0 && i0 < n, ok0p = i0 + 1 >= 0 && i0 + 1 < n;
  const bool ok1 = i1 >= 0 && i1 < n, ok1p = i1 + 1 >= 0 && i1 + 1 < n;
  const double* row0 = s + static_cast<long long>(i0) * n;
  const double* row1 = row0 + n;
  if (ok0) {
    if (ok1) acc += w[0] * row0[i1];
    if (ok1p) acc += w[2] * row0[i1 + 1];
  }
  if (ok0p) {
    if (ok1) acc += w[1] * row1[i1];
    if (ok1p) acc += w[3] * row1[i1 + 1];
  }
  return acc;
}

inline double gather3(const double* s, int n, const int* i, const double* w) {
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    long long idx = 0;
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      const int ii = i[k] + ((c >> k) & 1);
      if (ii < 0 || ii >= n) {
        ok = false;
        break;
      }
      idx = idx * n + ii;
    }
    if (ok) acc += w[c] * s[idx];
  }
  return acc;
}

}  // namespace

void CollisionTables::gain_slice(const double* f, const double* g, double* out) const {
  const long long sv = grid_.size_v();
  std::fill(out, out + sv, 0.0);
  const int m = 2 * nv_ - 1;
  if (d_ == 2) {
    for (int a0 = 0; a0 < nv_; ++a0)
      for (int a1 = 0; a1 < nv_; ++a1) {
        const long long iv = static_cast<long long>(a0) * nv_ + a1;
        double acc = 0.0;
        for (int b0 = 0; b0 < nv_; ++b0)
          for (int b1 = 0; b1 < nv_; ++b1) {
            const auto& entries =
                gain_[static_cast<long long>(b0 - a0 + nv_ - 1) * m + (b1 - a1 + nv_ - 1)];
            if (entries.empty()) continue;
            for (const auto& e : entries) {
              // corner weight layout: bit k of the corner index is axis k
              const double fv = gather2(f, nv_, a0 + e.bv[0], a1 + e.bv[1], e.wv);
              if (fv == 0.0) continue;
              acc += e.bw * fv * gather2(g, nv_, b0 + e.bu[0], b1 + e.bu[1], e.wu);
            }
          }
        out[iv] = acc;
      }
    return;
  }
  for (long long iv = 0; iv < sv; ++iv) {
    int a[3];
    grid_.unflat(iv, nv_, a);
    double acc = 0.0;
    for (long long iu = 0; iu < sv; ++iu) {
      int b[3];
      grid_.unflat(iu, nv_, b);
      int dw[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
      for (const auto& e : gain_[diff_index(dw)]) {
        int iv_idx[3] = {a[0] + e.bv[0], a[1] + e.bv[1], a[2] + e.bv[2]};
        int iu_idx[3] = {b[0] + e.bu[0], b[1] + e.bu[1], b[2] + e.bu[2]};
        const double fv = gather3(f, nv_, iv_idx, e.wv);
        if (fv == 0.0) continue;
        acc += e.bw * fv * gather3(g, nv_, iu_idx, e.wu);
      }
    }
    out[iv] = acc;
  }
}

// ---------------------------------------------------------------------------
// dense field wrappers
// ---------------------------------------------------------------------------

namespace {

DenseField as_dense_on(const PhaseField& f, const Grid& grid, const char* who) {
  if (f.is_dense()) {
    if (!f.dense().grid.same_as(grid))
      throw validation_error(std::string(who) + ": grid mismatch");
    return f.dense();
  }
  return sample_to_grid(f, grid);
}

}  // namespace

PhaseField q_loss_direct(const PhaseField& f, const PhaseField& g,
                         const CollisionKernel& k, const Grid& grid,
                         const SphereQuadrature& sq) {
  const DenseField fd = as_dense_on(f, grid, "q_loss_direct");
  const DenseField gd = as_dense_on(g, grid, "q_loss_direct");
  CollisionTables tab(grid, k, sq);
  DenseField out(grid);
  const long long sx = grid.size_x(), sv = grid.size_v();
  par::parallel_for(0, sx, [&](long long fx) {
    tab.loss_slice(fd.a.data() + fx * sv, gd.a.data() + fx * sv, out.a.data() + fx * sv);
  });
  return PhaseField(std::move(out));
}

PhaseField q_gain_direct(const PhaseField& f, const PhaseField& g,
                         const CollisionKernel& k, const Grid& grid,
                         const SphereQuadrature& sq) {
  const DenseField fd = as_dense_on(f, grid, "q_gain_direct");
  const DenseField gd = as_dense_on(g, grid, "q_gain_direct");
  CollisionTables tab(grid, k, sq);
  DenseField out(grid);
  const long long sx = grid.size_x(), sv = grid.size_v();
  par::parallel_for(0, sx, [&](long long fx) {
    tab.gain_slice(fd.a.data() + fx * sv, gd.a.data() + fx * sv, out.a.data() + fx * sv);
  });
  return PhaseField(std::move(out));
}

std::vector<double> q_loss_slice(const CollisionTables& t, const std::vector<double>& f,
                                 const std::vector<double>& g) {
  std::vector<double> out(t.grid().size_v());
  t.loss_slice(f.data(), g.data(), out.data());
  return out;
}

std::vector<double> q_gain_slice(const CollisionTables& t, const std::vector<double>& f,
                                 const std::vector<double>& g) {
  std::vector<double> out(t.grid().size_v());
  t.gain_slice(f.data(), g.data(), out.data());
  return out;
}

// ---------------------------------------------------------------------------
// spectral prep: harmonic expansion of the kernel transform
// ---------------------------------------------------------------------------

double SpectralPrep::theta_at(double mu) const {
  const int n = static_cast<int>(theta.size());
  double t = (std::clamp(mu, -1.0, 1.0) + 1.0) * 0.5 * (n - 1);
  int i = std::min(n - 2, static_cast<int>(t));
  t -= i;
  return theta[i] * (1.0 - t) + theta[i + 1] * t;
}

SpectralPrep make_spectral_prep(int d, const CollisionKernel& k, int max_harmonic,
                                int table_size) {
  if (!(k.gamma < 0.0))
    throw validation_error("make_spectral_prep: spectral form needs gamma < 0");
  if (k.variant != KernelVariant::PowerLaw)
    throw validation_error("make_spectral_prep: power-law kernel required");
  SpectralPrep p;
  p.d = d;
  p.gamma = k.gamma;
  p.bl1 = k.b_l1(d);
  const double g = k.gamma;
  auto lam = [&](int m) {
    // FT[|y|^gamma * (degree-m harmonic)] = i^{-m} lam(m) |zeta|^{-d-gamma} (same harmonic)
    return std::pow(2.0, d + g) * std::pow(pi, d / 2.0) *
           std::exp(std::lgamma((d + g + m) / 2.0) - std::lgamma((m - g) / 2.0));
  };
  p.riesz = lam(0);

  // only the even part of b enters Q+- (omega -> -omega leaves v*, u* fixed)
  auto beven = [&](double c) { return 0.5 * (k.b(c) + k.b(-c)); };

  std::vector<double> coef;  // coefficient of the degree-m basis, even m only
  if (d == 2) {
    const int nsamp = 4 * max_harmonic;
    std::vector<cplx> samp(nsamp);
    for (int i = 0; i < nsamp; ++i)
      samp[i] = beven(std::cos(2.0 * pi * i / nsamp));
    dft_axis(samp.data(), {nsamp}, 0, false);
    coef.assign(max_harmonic + 1, 0.0);
    for (int m = 0; m <= max_harmonic; m += 2)
      coef[m] = (m == 0 ? 1.0 : 2.0) * samp[m].real() / nsamp;
  } else {
    const int nq = 4096;
    GaussLegendre glq(nq);
    const int lmax = std::min(max_harmonic, 2048);
    coef.assign(lmax + 1, 0.0);
    for (int i = 0; i < nq; ++i) {
      const double c = glq.x[i], w = glq.w[i], bv = beven(c);
      double pm2 = 1.0, pm1 = c;
      coef[0] += 0.5 * w * bv * pm2;
      if (lmax >= 1) coef[1] += 1.5 * w * bv * pm1;
      for (int l = 2; l <= lmax; ++l) {
        const double pl = ((2.0 * l - 1.0) * c * pm1 - (l - 1.0) * pm2) / l;
        coef[l] += (2.0 * l + 1.0) / 2.0 * w * bv * pl;
        pm2 = pm1;
        pm1 = pl;
      }
    }
    for (size_t l = 1; l < coef.size(); l += 2) coef[l] = 0.0;  // even part
  }

  // Theta(mu) = sum_m coef_m * (-1)^{m/2} * lam(m) * T_m-like basis at mu
  p.theta.assign(table_size, 0.0);
  for (int i = 0; i < table_size; ++i) {
    const double mu = -1.0 + 2.0 * i / (table_size - 1.0);
    double s = 0.0;
    if (d == 2) {
      // cos(m psi) = T_m(mu), Chebyshev recurrence
      double tm2 = 1.0, tm1 = mu;
      s += coef[0] * lam(0) * tm2;
      for (int m = 2; m < static_cast<int>(coef.size()); ++m) {
        const double tm = 2.0 * mu * tm1 - tm2;
        if (m % 2 == 0 && coef[m] != 0.0)
          s += coef[m] * ((m / 2) % 2 == 0 ? 1.0 : -1.0) * lam(m) * tm;
        tm2 = tm1;
        tm1 = tm;
      }
    } else {
      double pm2 = 1.0, pm1 = mu;
      s += coef[0] * lam(0) * pm2;
      for (int l = 2; l < static_cast<int>(coef.size()); ++l) {
        const double pl = ((2.0 * l - 1.0) * mu * pm1 - (l - 1.0) * pm2) / l;
        if (l % 2 == 0 && coef[l] != 0.0)
          s += coef[l] * ((l / 2) % 2 == 0 ? 1.0 : -1.0) * lam(l) * pl;
        pm2 = pm1;
        pm1 = pl;
      }
    }
    p.theta[i] = s;
  }
  // pin the sphere mean exactly (absorbs the series tail): the xi = 0 mass
  // identity requires int_S Theta(etahat.omega) domega = ||b||_1 * riesz
  {
    double mean = 0.0;
    const int nq = 8192;
    if (d == 2) {
      for (int i = 0; i < nq; ++i)
        mean += p.theta_at(std::cos(2.0 * pi * (i + 0.5) / nq));
      mean *= 2.0 * pi / nq;
      const double corr = (p.bl1 * p.riesz - mean) / (2.0 * pi);
      for (double& t : p.theta) t += corr;
    } else {
      GaussLegendre glm(256);
      for (int i = 0; i < 256; ++i) mean += glm.w[i] * p.theta_at(glm.x[i]);
      mean *= 2.0 * pi;
      const double corr = (p.bl1 * p.riesz - mean) / (4.0 * pi);
      for (double& t : p.theta) t += corr;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// continuum-normalized v <-> xi transforms of one slice
// ---------------------------------------------------------------------------

namespace {

int idx_parity(long long fv, int n, int d) {
  int s = 0;
  for (int k = 0; k < d; ++k) {
    s += static_cast<int>(fv % n);
    fv /= n;
  }
  return s & 1;
}

// vtilde(xi_k) = (2pi)^-d h^d sum_j f_j e^{+i v_j xi_k}, DFT index order
std::vector<cplx> vslice_to_xi(const double* slice, const Grid& g) {
  const long long sv = g.size_v();
  std::vector<cplx> out(slice, slice + sv);
  std::vector<int> dims(g.d, g.nv), axes(g.d);
  for (int k = 0; k < g.d; ++k) axes[k] = k;
  dft_axes(out.data(), dims, axes, false);
  const double c = g.cell_v() / std::pow(2.0 * pi, g.d);
  for (long long i = 0; i < sv; ++i) {
    const double sgn = idx_parity(i, g.nv, g.d) ? -1.0 : 1.0;
    out[i] = c * sgn * std::conj(out[i]);
  }
  return out;
}

// Q_j = dxi^d sum_k A_k e^{-i v_j xi_k}
std::vector<double> xi_to_vslice(std::vector<cplx> a, const Grid& g) {
  const long long sv = g.size_v();
  for (long long i = 0; i < sv; ++i)
    if (idx_parity(i, g.nv, g.d)) a[i] = -a[i];
  std::vector<int> dims(g.d, g.nv), axes(g.d);
  for (int k = 0; k < g.d; ++k) axes[k] = k;
  dft_axes(a.data(), dims, axes, false);
  const double c = std::pow(pi / g.Lv, g.d);
  std::vector<double> out(sv);
  for (long long i = 0; i < sv; ++i) out[i] = c * a[i].real();
  return out;
}

// reorder DFT index order -> monotone frequency order (and back, same op)
std::vector<cplx> fftshift(const std::vector<cplx>& a, const Grid& g) {
  const int n = g.nv, d = g.d;
  std::vector<cplx> out(a.size());
  const long long sv = g.size_v();
  for (long long i = 0; i < sv; ++i) {
    int idx[3] = {0, 0, 0};
    long long rem = i;
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(rem % n);
      rem /= n;
    }
    long long j = 0;
    for (int k = 0; k < d; ++k) j = j * n + ((idx[k] + n / 2) % n);
    out[j] = a[i];
  }
  return out;
}

// separable Catmull-Rom interpolation on the shifted xi-lattice; zero outside
cplx cubic_xi(const std::vector<cplx>& a, const Grid& g, const Vec& xi) {
  const int n = g.nv, d = g.d;
  const double dxi = pi / g.Lv;
  double t[3];
  int base[3];
  for (int k = 0; k < d; ++k) {
    const double fi = xi[k] / dxi + n / 2.0;  // lattice coordinate
    const double fl = std::floor(fi);
    base[k] = static_cast<int>(fl);
    t[k] = fi - fl;
  }
  double wts[3][4];
  for (int k = 0; k < d; ++k) {
    const double s = t[k];
    wts[k][0] = -0.5 * s * (1.0 - s) * (1.0 - s);
    wts[k][1] = 0.5 * (2.0 - 5.0 * s * s + 3.0 * s * s * s);
    wts[k][2] = 0.5 * s * (1.0 + 4.0 * s - 3.0 * s * s);
    wts[k][3] = -0.5 * s * s * (1.0 - s);
  }
  cplx acc = 0.0;
  if (d == 2) {
    for (int i0 = 0; i0 < 4; ++i0) {
      const int j0 = base[0] - 1 + i0;
      if (j0 < 0 || j0 >= n || wts[0][i0] == 0.0) continue;
      cplx row = 0.0;
      const cplx* r = a.data() + static_cast<long long>(j0) * n;
      for (int i1 = 0; i1 < 4; ++i1) {
        const int j1 = base[1] - 1 + i1;
        if (j1 < 0 || j1 >= n) continue;
        row += wts[1][i1] * r[j1];
      }
      acc += wts[0][i0] * row;
    }
    return acc;
  }
  for (int i0 = 0; i0 < 4; ++i0) {
    const int j0 = base[0] - 1 + i0;
    if (j0 < 0 || j0 >= n) continue;
    for (int i1 = 0; i1 < 4; ++i1) {
      const int j1 = base[1] - 1 + i1;
      if (j1 < 0 || j1 >= n) continue;
      const cplx* r = a.data() + (static_cast<long long>(j0) * n + j1) * n;
      cplx row = 0.0;
      for (int i2 = 0; i2 < 4; ++i2) {
        const int j2 = base[2] - 1 + i2;
        if (j2 < 0 || j2 >= n) continue;
        row += wts[2][i2] * r[j2];
      }
      acc += wts[0][i0] * wts[1][i1] * row;
    }
  }
  return acc;
}

struct ZetaRule {
  std::vector<Vec> dirs;
  std::vector<double> dw;
  std::vector<double> r, rw;
};

ZetaRule make_zeta_rule(const Grid& g, double gamma, const EtaRule& eta) {
  ZetaRule z;
  const double nyq = pi * (g.nv / 2) / g.Lv;
  const double rmax = eta.rmax_frac * nyq;
  if (rmax > nyq * (1.0 + 1e-12))
    throw validation_error("eta rule radius exceeds the xi-grid Nyquist");
  RadialSingularRule rr(gamma, rmax, eta.n_radial);
  z.r = rr.r;
  z.rw = rr.w;
  if (g.d == 2) {
    for (int i = 0; i < eta.n_angular; ++i) {
      const double th = 2.0 * pi * (i + 0.5) / eta.n_angular;
      z.dirs.push_back(vec2(std::cos(th), std::sin(th)));
      z.dw.push_back(2.0 * pi / eta.n_angular);
    }
  } else {
    SphereQuadrature sq = sphere_quadrature(3, std::max(4, eta.n_angular));
    z.dirs = sq.nodes;
    z.dw = sq.w;
  }
  return z;
}

}  // namespace

std::vector<double> q_gain_spectral_slice(const std::vector<double>& f,
                                          const std::vector<double>& g, const Grid& grid,
                                          const CollisionKernel& k,
                                          const SphereQuadrature& sq, const EtaRule& eta,
                                          const SpectralPrep& prep) {
  if (!(k.gamma < 0.0))
    throw validation_error("q_gain_spectral: gamma = 0 unsupported, use the direct form");
  const long long sv = grid.size_v();
  std::vector<cplx> tf = fftshift(vslice_to_xi(f.data(), grid), grid);
  std::vector<cplx> tg = fftshift(vslice_to_xi(g.data(), grid), grid);
  ZetaRule zr = make_zeta_rule(grid, k.gamma, eta);

  std::vector<cplx> acc(sv, 0.0);
  const int n = grid.nv, d = grid.d;
  const double dxi = pi / grid.Lv;
  par::parallel_for(0, sv, [&](long long fxi) {
    int idx[3] = {0, 0, 0};
    grid.unflat(fxi, n, idx);
    Vec xi{0, 0, 0};
    for (int kk = 0; kk < d; ++kk) xi[kk] = (idx[kk] - n / 2) * dxi;
    cplx s = 0.0;
    for (size_t io = 0; io < sq.nodes.size(); ++io) {
      const Vec& om = sq.nodes[io];
      const double xo = dot(xi, om);
      const Vec xi_perp = xi - xo * om;
      cplx so = 0.0;
      for (size_t ia = 0; ia < zr.dirs.size(); ++ia) {
        const Vec& zh = zr.dirs[ia];
        const double th = prep.theta_at(dot(zh, om));
        if (th == 0.0) continue;
        const double zho = dot(zh, om);
        cplx sr = 0.0;
        for (size_t ir = 0; ir < zr.r.size(); ++ir) {
          const double r = zr.r[ir];
          // xi1 = (om.zeta) om + P_perp(xi - zeta), xi2 = xi - xi1
          const Vec zeta = r * zh;
          const Vec xi1 = (r * zho) * om + xi_perp - (zeta - (r * zho) * om);
          const Vec xi2 = xi - xi1;
          const cplx vf = cubic_xi(tf, grid, xi1);
          if (vf == 0.0) continue;
          sr += zr.rw[ir] * vf * cubic_xi(tg, grid, xi2);
        }
        so += zr.dw[ia] * th * sr;
      }
      s += sq.w[io] * so;
    }
    acc[fxi] = s;
  });
  return xi_to_vslice(fftshift(acc, grid), grid);
}

std::vector<double> q_loss_spectral_slice(const std::vector<double>& f,
                                          const std::vector<double>& g, const Grid& grid,
                                          const CollisionKernel& k, const EtaRule& eta,
                                          const SpectralPrep& prep) {
  if (!(k.gamma < 0.0))
    throw validation_error("q_loss_spectral_slice: gamma < 0 required");
  const long long sv = grid.size_v();
  std::vector<cplx> tf = fftshift(vslice_to_xi(f.data(), grid), grid);
  std::vector<cplx> tg = fftshift(vslice_to_xi(g.data(), grid), grid);
  ZetaRule zr = make_zeta_rule(grid, k.gamma, eta);
  const double fac = prep.bl1 * prep.riesz;

  std::vector<cplx> acc(sv, 0.0);
  const int n = grid.nv, d = grid.d;
  const double dxi = pi / grid.Lv;
  par::parallel_for(0, sv, [&](long long fxi) {
    int idx[3] = {0, 0, 0};
    grid.unflat(fxi, n, idx);
    Vec xi{0, 0, 0};
    for (int kk = 0; kk < d; ++kk) xi[kk] = (idx[kk] - n / 2) * dxi;
    cplx s = 0.0;
    for (size_t ia = 0; ia < zr.dirs.size(); ++ia) {
      cplx sr = 0.0;
      for (size_t ir = 0; ir < zr.r.size(); ++ir) {
        const Vec eta_v = zr.r[ir] * zr.dirs[ia];
        const cplx vg = cubic_xi(tg, grid, eta_v);
        if (vg == 0.0) continue;
        sr += zr.rw[ir] * vg * cubic_xi(tf, grid, xi - eta_v);
      }
      s += zr.dw[ia] * sr;
    }
    acc[fxi] = fac * s;
  });
  return xi_to_vslice(fftshift(acc, grid), grid);
}

PhaseField q_gain_spectral(const PhaseField& f, const PhaseField& g,
                           const CollisionKernel& k, const Grid& grid,
                           const SphereQuadrature& sq, const EtaRule& eta) {
  const DenseField fd = as_dense_on(f, grid, "q_gain_spectral");
  const DenseField gd = as_dense_on(g, grid, "q_gain_spectral");
  SpectralPrep prep = make_spectral_prep(grid.d, k);
  DenseField out(grid);
  const long long sx = grid.size_x(), sv = grid.size_v();
  for (long long fx = 0; fx < sx; ++fx) {
    std::vector<double> fs(fd.a.begin() + fx * sv, fd.a.begin() + (fx + 1) * sv);
    std::vector<double> gs(gd.a.begin() + fx * sv, gd.a.begin() + (fx + 1) * sv);
    std::vector<double> qs = q_gain_spectral_slice(fs, gs, grid, k, sq, eta, prep);
    std::copy(qs.begin(), qs.end(), out.a.begin() + fx * sv);
  }
  return PhaseField(std::move(out));
}

PhaseField q_loss_spectral(const PhaseField& f, const PhaseField& g,
                           const CollisionKernel& k, const Grid& grid,
                           const EtaRule& eta) {
  const DenseField fd = as_dense_on(f, grid, "q_loss_spectral");
  const DenseField gd = as_dense_on(g, grid, "q_loss_spectral");
  DenseField out(grid);
  const long long sx = grid.size_x(), sv = grid.size_v();
  if (k.gamma == 0.0) {
    // Q-(f,g) = f * ||b||_1 * int g du: the |eta|^{-d} form is only formal
    const double bl1 = k.b_l1(grid.d);
    const double cell = grid.cell_v();
    for (long long fx = 0; fx < sx; ++fx) {
      double mass = 0.0;
      for (long long fv = 0; fv < sv; ++fv) mass += gd.at(fx, fv);
      mass *= cell * bl1;
      for (long long fv = 0; fv < sv; ++fv) out.at(fx, fv) = fd.at(fx, fv) * mass;
    }
    return PhaseField(std::move(out));
  }
  SpectralPrep prep = make_spectral_prep(grid.d, k);
  for (long long fx = 0; fx < sx; ++fx) {
    std::vector<double> fs(fd.a.begin() + fx * sv, fd.a.begin() + (fx + 1) * sv);
    std::vector<double> gs(gd.a.begin() + fx * sv, gd.a.begin() + (fx + 1) * sv);
    std::vector<double> qs = q_loss_spectral_slice(fs, gs, grid, k, eta, prep);
    std::copy(qs.begin(), qs.end(), out.a.begin() + fx * sv);
  }
  return PhaseField(std::move(out));
}

// ---------------------------------------------------------------------------
// pointwise Carleman forms
// ---------------------------------------------------------------------------

namespace {

std::vector<RotBox> field_v_boxes(const PhaseField& f) {
  if (f.is_analytic()) {
    std::vector<RotBox> bs = f.core().v_boxes();
    if (!bs.empty()) return bs;
    const SupportBox sb = f.core().support();
    RotBox b;
    b.center = 0.5 * (sb.vlo + sb.vhi);
    b.axes[0] = vec3(1, 0, 0);
    b.axes[1] = vec3(0, 1, 0);
    b.axes[2] = vec3(0, 0, 1);
    for (int k = 0; k < 3; ++k) b.half[k] = 0.5 * (sb.vhi[k] - sb.vlo[k]);
    return {b};
  }
  const Grid& g = f.dense().grid;
  RotBox b;
  b.center = vec3(0, 0, 0);
  b.axes[0] = vec3(1, 0, 0);
  b.axes[1] = vec3(0, 1, 0);
  b.axes[2] = vec3(0, 0, 1);
  for (int k = 0; k < g.d; ++k) b.half[k] = g.Lv;
  for (int k = g.d; k < 3; ++k) b.half[k] = 0.0;
  return {b};
}

bool ray_box(const RotBox& bx, const Vec& p0, const Vec& dir, int d, double& t0,
             double& t1) {
  t0 = -1e300;
  t1 = 1e300;
  const Vec q = p0 - bx.center;
  for (int k = 0; k < d; ++k) {
    const double a = dot(q, bx.axes[k]);
    const double b = dot(dir, bx.axes[k]);
    const double h = bx.half[k];
    if (std::abs(b) < 1e-14) {
      if (std::abs(a) > h) return false;
      continue;
    }
    double lo = (-h - a) / b, hi = (h - a) / b;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 >= t1) return false;
  }
  return t0 < t1;
}

}  // namespace

double loss_u_integral(const PhaseField& g, const CollisionKernel& k, const Vec& x,
                       const Vec& v, int n_box) {
  const int d = g.dim();
  GaussLegendre gl(n_box);
  double acc = 0.0;
  for (const RotBox& bx : field_v_boxes(g)) {
    // tensor GL over the box
    double nodes[3][64], wts[3][64];
    for (int kk = 0; kk < d; ++kk)
      for (int i = 0; i < n_box; ++i) {
        nodes[kk][i] = bx.half[kk] * gl.x[i];
        wts[kk][i] = bx.half[kk] * gl.w[i];
      }
    const int n1 = n_box, n2 = n_box, n3 = (d == 3) ? n_box : 1;
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j)
        for (int l = 0; l < n3; ++l) {
          Vec u = bx.center + nodes[0][i] * bx.axes[0] + nodes[1][j] * bx.axes[1];
          if (d == 3) u = u + nodes[2][l] * bx.axes[2];
          const double gv = g.eval(x, u);
          if (gv == 0.0) continue;
          const double r = norm(u - v);
          if (r < 1e-12) continue;
          double w = wts[0][i] * wts[1][j];
          if (d == 3) w *= wts[2][l];
          acc += w * gv * k.radial(r);
        }
  }
  return acc;
}

double q_loss_pointwise(const PhaseField& f, const PhaseField& g,
                        const CollisionKernel& k, const Vec& x, const Vec& v,
                        int n_box) {
  const double fv = f.eval(x, v);
  if (fv == 0.0) return 0.0;
  return fv * k.b_l1(f.dim()) * loss_u_integral(g, k, x, v, n_box);
}

double q_gain_pointwise(const PhaseField& f, const PhaseField& g,
                        const CollisionKernel& k, const Vec& x, const Vec& v,
                        const CarlemanRule& rule) {
  const int d = f.dim();
  const std::vector<RotBox> fb = field_v_boxes(f);
  const std::vector<RotBox> gb = field_v_boxes(g);
  GaussLegendre gl(rule.n_line);
  double acc = 0.0;

  for (size_t io = 0; io < rule.sq.nodes.size(); ++io) {
    const Vec& om = rule.sq.nodes[io];
    // lambda legs along omega through the support of f
    struct Leg {
      double t, w;
    };
    std::vector<Leg> lam;
    auto add_legs = [&](std::vector<Leg>& dst, double t0, double t1) {
      // split a crossing straddling 0 so the rule clusters at the kernel kink
      const bool split = t0 < 0.0 && t1 > 0.0;
      const int nseg = split ? 2 : 1;
      double a = t0;
      for (int seg = 0; seg < nseg; ++seg) {
        const double b = (split && seg == 0) ? 0.0 : t1;
        for (int i = 0; i < rule.n_line; ++i)
          dst.push_back({0.5 * (a + b) + 0.5 * (b - a) * gl.x[i],
                         0.5 * (b - a) * gl.w[i]});
        a = b;
      }
    };
    for (const RotBox& bx : fb) {
      double t0, t1;
      if (!ray_box(bx, v, om, d, t0, t1)) continue;
      add_legs(lam, t0, t1);
    }
    if (lam.empty()) continue;

    if (d == 2) {
      const Vec perp = vec2(-om[1], om[0]);
      std::vector<Leg> mu;
      for (const RotBox& bx : gb) {
        double t0, t1;
        if (!ray_box(bx, v, perp, d, t0, t1)) continue;
        add_legs(mu, t0, t1);
      }
      for (const Leg& lg : lam) {
        const double fval = f.eval(x, v + lg.t * om);
        if (fval == 0.0) continue;
        for (const Leg& mg : mu) {
          const double gval = g.eval(x, v + mg.t * perp);
          if (gval == 0.0) continue;
          const double r2 = lg.t * lg.t + mg.t * mg.t;
          if (r2 < rule.eps * rule.eps) continue;
          const double r = std::sqrt(r2);
          acc += rule.sq.w[io] * lg.w * mg.w * fval * gval * k.radial(r) *
                 k.b(lg.t / r);
        }
      }
    } else {
      // orthonormal pair spanning omega^perp
      Vec e1 = std::abs(om[0]) < 0.9 ? vec3(1, 0, 0) : vec3(0, 1, 0);
      e1 = e1 - dot(e1, om) * om;
      e1 = (1.0 / norm(e1)) * e1;
      const Vec e2 = vec3(om[1] * e1[2] - om[2] * e1[1], om[2] * e1[0] - om[0] * e1[2],
                          om[0] * e1[1] - om[1] * e1[0]);
      for (const RotBox& bx : gb) {
        // bounding rectangle of the box's shadow on the plane v + span(e1,e2)
        const Vec q = bx.center - v;
        const double c1 = dot(q, e1), c2 = dot(q, e2);
        double h1 = 0.0, h2 = 0.0;
        for (int kk = 0; kk < 3; ++kk) {
          h1 += bx.half[kk] * std::abs(dot(bx.axes[kk], e1));
          h2 += bx.half[kk] * std::abs(dot(bx.axes[kk], e2));
        }
        for (int i = 0; i < rule.n_line; ++i)
          for (int j = 0; j < rule.n_line; ++j) {
            const double a1 = c1 + h1 * gl.x[i];
            const double a2 = c2 + h2 * gl.x[j];
            const double wp = h1 * gl.w[i] * h2 * gl.w[j];
            const Vec p = a1 * e1 + a2 * e2;
            const double gval = g.eval(x, v + p);
            if (gval == 0.0) continue;
            for (const Leg& lg : lam) {
              const double fval = f.eval(x, v + lg.t * om);
              if (fval == 0.0) continue;
              const double r2 = lg.t * lg.t + a1 * a1 + a2 * a2;
              if (r2 < rule.eps * rule.eps) continue;
              const double r = std::sqrt(r2);
              acc += rule.sq.w[io] * lg.w * wp * fval * gval * k.radial(r) *
                     k.b(lg.t / r);
            }
          }
      }
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// conservation diagnostics
// ---------------------------------------------------------------------------

InvariantResiduals collision_invariants(const PhaseField& f, const CollisionKernel& k,
                                        const Grid& grid, const SphereQuadrature& sq) {
  const DenseField fd = as_dense_on(f, grid, "collision_invariants");
  CollisionTables tab(grid, k, sq);
  const long long sx = grid.size_x(), sv = grid.size_v();
  const double cell = grid.cell_v();
  InvariantResiduals res;
  std::vector<InvariantResiduals> per_x(sx);
  par::parallel_for(0, sx, [&](long long fx) {
    std::vector<double> qp(sv), qm(sv);
    tab.gain_slice(fd.a.data() + fx * sv, fd.a.data() + fx * sv, qp.data());
    tab.loss_slice(fd.a.data() + fx * sv, fd.a.data() + fx * sv, qm.data());
    double m = 0.0, mp = 0.0, en = 0.0, enp = 0.0;
    Vec mom{0, 0, 0}, momp{0, 0, 0};
    for (long long fv = 0; fv < sv; ++fv) {
      const Vec v = grid.v_point(fv);
      const double q = (qp[fv] - qm[fv]) * cell;
      const double qpl = qp[fv] * cell;
      m += q;
      mp += qpl;
      mom = mom + q * v;
      momp = momp + qpl * v;
      en += q * norm2(v);
      enp += qpl * norm2(v);
    }
    per_x[fx].mass = std::abs(m) / (1.0 + std::abs(mp));
    per_x[fx].momentum = norm(mom) / (1.0 + norm(momp));
    per_x[fx].energy = std::abs(en) / (1.0 + std::abs(enp));
  });
  for (const auto& r : per_x) {
    res.mass = std::max(res.mass, r.mass);
    res.momentum = std::max(res.momentum, r.momentum);
    res.energy = std::max(res.energy, r.energy);
  }
  return res;
}

}  // namespace kdl
