#include "kdl/deflation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <unordered_map>

#include "kdl/cutoff.hpp"
#include "kdl/par.hpp"
#include "kdl/rng.hpp"

namespace kdl {

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

void DeflationParams::finalize() {
  if (r0 < 0.0) r0 = std::max(0.0, s0 + gamma);
  if (J == 0) J = std::max(4, static_cast<int>(std::lround(std::pow(M * N2, d - 1))));
  if (T_star == 0.0) T_star = -0.2 * std::pow(M, s - (d - 1) / 2.0);
}

void DeflationParams::validate() const {
  if (d != 2 && d != 3) throw validation_error("DeflationParams: d must be 2 or 3");
  if (!(N1 >= N2 && N2 >= M && M >= 2.0))
    throw validation_error("DeflationParams: need N1 >= N2 >= M >= 2");
  if (!(s0 >= 0.0 && s0 < (d - 1) / 2.0 && s0 < s && s < (d - 1) / 2.0))
    throw validation_error("DeflationParams: need 0 <= s0 < s < (d-1)/2");
  if (!(T_star < 0.0 && std::abs(T_star) <= 0.25))
    throw validation_error("DeflationParams: need T* < 0 and |T*| <= 1/4");
  if (std::abs(r0 - std::max(0.0, s0 + gamma)) > 1e-12)
    throw validation_error("DeflationParams: r0 must equal max(0, s0 + gamma)");
  const double jref = std::pow(M * N2, d - 1);
  if (!(J >= 0.5 * jref && J <= 2.0 * jref) || J < 4)
    throw validation_error("DeflationParams: J must be within a factor 2 of (M N2)^{d-1}");
  if (gamma > 0.0 && !allow_hard)
    throw validation_error("DeflationParams: gamma > 0 requires the hard-potential flag");
  if (gamma < -(d - 1) / 2.0 - 1e-12)
    throw validation_error("DeflationParams: gamma out of range -(d-1)/2 <= gamma <= 0");
  // disjoint velocity supports of f_r and f_b
  if (!(2.0 / N1 < 0.8 * N2))
    throw validation_error("DeflationParams: v-supports of f_r and f_b overlap");
  if (j_schedule < 4) throw validation_error("DeflationParams: j_schedule >= 4");
}

double DeflationParams::amplitude_fb() const {
  return std::pow(M, (d - 1) / 2.0 - s) / std::pow(N2, d + gamma);
}
double DeflationParams::amplitude_fr() const {
  return std::pow(M, d / 2.0 - s) * std::pow(N1, d / 2.0);
}

// ---------------------------------------------------------------------------
// sphere points
// ---------------------------------------------------------------------------

BumpFamily sphere_points(int d, int J) {
  if (J < 4) throw validation_error("sphere_points: J >= 4 required");
  BumpFamily fam;
  fam.d = d;
  fam.points.resize(J);
  fam.perp1.resize(J);
  fam.perp2.resize(J);
  if (d == 2) {
    for (int j = 0; j < J; ++j) {
      const double th = 2.0 * pi * j / J;
      fam.points[j] = vec2(std::cos(th), std::sin(th));
      fam.perp1[j] = vec2(-std::sin(th), std::cos(th));
      fam.perp2[j] = vec3(0, 0, 1);
    }
    fam.min_angle = 2.0 * pi / J;
    return fam;
  }
  // Fibonacci lattice
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int j = 0; j < J; ++j) {
    const double z = 1.0 - 2.0 * (j + 0.5) / J;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * pi * j / golden;
    fam.points[j] = vec3(r * std::cos(phi), r * std::sin(phi), z);
    Vec e1 = std::abs(fam.points[j][0]) < 0.9 ? vec3(1, 0, 0) : vec3(0, 1, 0);
    e1 = e1 - dot(e1, fam.points[j]) * fam.points[j];
    e1 = (1.0 / norm(e1)) * e1;
    fam.perp1[j] = e1;
    const Vec& e = fam.points[j];
    fam.perp2[j] = vec3(e[1] * e1[2] - e[2] * e1[1], e[2] * e1[0] - e[0] * e1[2],
                        e[0] * e1[1] - e[1] * e1[0]);
  }
  double mina = pi;
  for (int i = 0; i < J; ++i)
    for (int j = i + 1; j < J; ++j) {
      const double c = std::clamp(dot(fam.points[i], fam.points[j]), -1.0, 1.0);
      mina = std::min(mina, std::acos(c));
    }
  fam.min_angle = mina;
  return fam;
}

// ---------------------------------------------------------------------------
// f_b
// ---------------------------------------------------------------------------

namespace {

double sector_angular_halfwidth(const DeflationParams& p) {
  const double cross = 2.0 * std::sqrt(static_cast<double>(p.d - 1)) / p.M;
  return std::atan(cross / (0.8 * p.N2)) * 1.5 + 1e-3;
}

}  // namespace

FbCore::FbCore(const DeflationParams& p, const BumpFamily& fam, double t)
    : p_(p), fam_(fam), t_(t) {
  p_.validate();
  if (static_cast<int>(fam.points.size()) != p_.J)
    throw validation_error("FbCore: family size does not match J");
  amp_ = p_.amplitude_fb();

  // direction buckets over (z, azimuth) for O(1) sector candidates
  const double hw = sector_angular_halfwidth(p_);
  nbucket_ = std::max(8, static_cast<int>(2.0 * pi / std::max(hw, 1e-3)) / 2);
  nbucket_ = std::min(nbucket_, 512);
  const int nb2 = p_.d == 3 ? nbucket_ : 1;
  buckets_.assign(static_cast<size_t>(nbucket_) * nb2, {});
  for (int j = 0; j < p_.J; ++j) {
    const Vec& e = fam_.points[j];
    // mark every bucket whose center lies within hw + bucket radius; bucket
    // angles use the atan2 convention of the query path
    for (int b0 = 0; b0 < nbucket_; ++b0) {
      const double th = -pi + 2.0 * pi * (b0 + 0.5) / nbucket_;
      if (p_.d == 2) {
        const Vec c = vec2(std::cos(th), std::sin(th));
        const double ang = std::acos(std::clamp(dot(c, e), -1.0, 1.0));
        if (ang <= hw + pi / nbucket_ + 1e-12) buckets_[b0].push_back(j);
      } else {
        for (int b1 = 0; b1 < nb2; ++b1) {
          const double z = -1.0 + 2.0 * (b1 + 0.5) / nb2;
          const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
          const Vec c = vec3(r * std::cos(th), r * std::sin(th), z);
          const double ang = std::acos(std::clamp(dot(c, e), -1.0, 1.0));
          if (ang <= hw + 2.5 * pi / nb2 + 1e-12)
            buckets_[static_cast<size_t>(b0) * nb2 + b1].push_back(j);
        }
      }
    }
  }

  // quadrature plan: one chart per sector, x-lattice in the sector frame;
  // the velocity rules are segment-adapted to the cutoff transitions
  std::vector<double> ax, aw, cx, cw;
  gl_segments(4, 6, p_.N2 / 10.0, p_.N2 / 5.0, ax, aw);
  gl_segments(4, p_.d == 2 ? 6 : 4, 1.0 / p_.M, 2.0 / p_.M, cx, cw);
  const int n_along = static_cast<int>(ax.size()), n_across = static_cast<int>(cx.size());
  // the d = 2 family is exactly J-fold rotation symmetric: one sector chart
  // with J-scaled weights carries the whole sum
  const int n_charts = p_.d == 2 ? 1 : p_.J;
  const double mult = p_.d == 2 ? static_cast<double>(p_.J) : 1.0;
  plan_.charts.resize(n_charts);
  for (int j = 0; j < n_charts; ++j) {
    NormChart& ch = plan_.charts[j];
    const Vec e = fam_.points[j], q1 = fam_.perp1[j], q2 = fam_.perp2[j];
    for (int ia = 0; ia < n_along; ++ia)
      for (int ic = 0; ic < n_across; ++ic) {
        if (p_.d == 2) {
          VNode vn;
          vn.v = (p_.N2 + ax[ia]) * e + cx[ic] * q1;
          vn.w = mult * aw[ia] * cw[ic];
          ch.vnodes.push_back(vn);
        } else {
          for (int ic2 = 0; ic2 < n_across; ++ic2) {
            VNode vn;
            vn.v = (p_.N2 + ax[ia]) * e + cx[ic] * q1 + cx[ic2] * q2;
            vn.w = aw[ia] * cw[ic] * cw[ic2];
            ch.vnodes.push_back(vn);
          }
        }
      }
    // the Bessel weight has exponential tails, so the lattice box carries a
    // fixed physical margin beyond the support, and the across-axis step
    // resolves the 1/M profile
    const double t = t_;
    const DeflationParams pp = p_;
    ch.xbox = [e, q1, q2, t, pp](const Vec& v) {
      XLatticeSpec sp;
      sp.origin = t * v;
      sp.axes[0] = e;
      sp.axes[1] = q1;
      sp.axes[2] = q2;
      const double margin = 2.5;
      sp.half[0] = 2.0 * pp.N2 + margin;
      sp.half[1] = 2.0 / pp.M + margin;
      sp.half[2] = sp.half[1];
      const double h_across = (pp.d == 2 ? 0.12 : 0.3) / pp.M;
      int n1 = static_cast<int>(std::ceil(2.0 * sp.half[1] / h_across / 4.0)) * 4;
      n1 = std::min(n1, 768);
      sp.n[0] = 48;
      sp.n[1] = n1;
      sp.n[2] = pp.d == 3 ? n1 : 1;
      return sp;
    };
  }
}

double FbCore::bucket_of(const Vec& v, int& b0, int& b1) const {
  const double r = norm(v);
  if (r == 0.0) {
    b0 = 0;
    b1 = 0;
    return 0.0;
  }
  const double th = std::atan2(v[1], v[0]);
  b0 = static_cast<int>(std::floor((th + pi) / (2.0 * pi) * nbucket_));
  b0 = std::clamp(b0, 0, nbucket_ - 1);
  if (p_.d == 3) {
    const double z = v[2] / r;
    b1 = std::clamp(static_cast<int>((z + 1.0) / 2.0 * nbucket_), 0, nbucket_ - 1);
  } else {
    b1 = 0;
  }
  return r;
}

void FbCore::candidate_sectors(const Vec& v, std::vector<int>& out) const {
  out.clear();
  const double r = norm(v);
  if (r < 0.8 * p_.N2 || r > 1.3 * p_.N2 + 2.0) return;
  int b0, b1;
  bucket_of(v, b0, b1);
  const auto& lst = buckets_[p_.d == 3 ? static_cast<size_t>(b0) * nbucket_ + b1
                                       : static_cast<size_t>(b0)];
  out.assign(lst.begin(), lst.end());
}

double FbCore::kj(int j, const Vec& y) const {
  const Vec& e = fam_.points[j];
  const double ypar = dot(y, e);
  const Vec yperp = y - ypar * e;
  return smooth_cutoff_r2(p_.M * p_.M * norm2(yperp)) *
         smooth_cutoff_r2(ypar * ypar / (p_.N2 * p_.N2));
}

double FbCore::ij(int j, const Vec& v) const {
  const Vec& e = fam_.points[j];
  const double vpar = dot(v, e);
  const Vec vperp = v - vpar * e;
  const double a = 10.0 * (vpar - p_.N2) / p_.N2;
  return smooth_cutoff_r2(p_.M * p_.M * norm2(vperp)) * smooth_cutoff_r2(a * a);
}

double FbCore::eval_raw(const Vec& x, const Vec& v) const {
  thread_local std::vector<int> cand;
  candidate_sectors(v, cand);
  if (cand.empty()) return 0.0;
  double s = 0.0;
  const Vec y0 = x - t_ * v;
  for (int j : cand) {
    const double iv = ij(j, v);
    if (iv == 0.0) continue;
    s += kj(j, y0) * iv;
  }
  return amp_ * s;
}

Vec FbCore::grad_x_raw(const Vec& x, const Vec& v) const {
  thread_local std::vector<int> cand;
  candidate_sectors(v, cand);
  Vec g{0, 0, 0};
  if (cand.empty()) return g;
  const Vec y = x - t_ * v;
  for (int j : cand) {
    const double iv = ij(j, v);
    if (iv == 0.0) continue;
    const Vec& e = fam_.points[j];
    const double ypar = dot(y, e);
    const Vec yperp = y - ypar * e;
    const double cperp = smooth_cutoff_r2(p_.M * p_.M * norm2(yperp));
    const double cpar = smooth_cutoff_r2(ypar * ypar / (p_.N2 * p_.N2));
    // grad of chi(M P_perp y): M * gradchi at M y_perp (already perp);
    // grad of chi(P y / N2): (1/N2) * gradchi at y_par e / N2 (along e)
    const Vec g1 = p_.M * smooth_cutoff_grad(p_.M * yperp);
    const Vec g2 = (1.0 / p_.N2) * smooth_cutoff_grad((ypar / p_.N2) * e);
    g = g + iv * (cpar * g1 + cperp * g2);
  }
  return amp_ * g;
}

std::vector<RotBox> FbCore::v_boxes() const {
  std::vector<RotBox> out(p_.J);
  for (int j = 0; j < p_.J; ++j) {
    RotBox& b = out[j];
    b.center = p_.N2 * fam_.points[j];
    b.axes[0] = fam_.points[j];
    b.axes[1] = fam_.perp1[j];
    b.axes[2] = fam_.perp2[j];
    b.half[0] = p_.N2 / 5.0;
    b.half[1] = 2.0 / p_.M;
    b.half[2] = p_.d == 3 ? 2.0 / p_.M : 0.0;
  }
  return out;
}

SupportBox FbCore::support() const {
  SupportBox sb;
  const double rv =
      std::sqrt(1.44 * p_.N2 * p_.N2 + (p_.d - 1) * 4.0 / (p_.M * p_.M));
  const double rx =
      std::sqrt(4.0 * p_.N2 * p_.N2 + (p_.d - 1) * 4.0 / (p_.M * p_.M)) +
      std::abs(t_) * rv;
  for (int k = 0; k < p_.d; ++k) {
    sb.vlo[k] = -rv;
    sb.vhi[k] = rv;
    sb.xlo[k] = -rx;
    sb.xhi[k] = rx;
  }
  return sb;
}

PhaseField build_fb(const DeflationParams& p, const BumpFamily& fam, double t) {
  if (t > 0.0) throw validation_error("build_fb: t <= 0 required");
  return PhaseField(std::make_shared<FbCore>(p, fam, t));
}

// ---------------------------------------------------------------------------
// beta
// ---------------------------------------------------------------------------

BetaEvaluator::BetaEvaluator(const DeflationParams& p, const BumpFamily& fam)
    : p_(p), fam_(fam) {
  p_.validate();
  {
    CollisionKernel k;
    k.gamma = p_.gamma;
    bl1_ = k.b_l1(p_.d);
  }
  const int n = p_.sector_quad;
  gl_on_interval(n, -p_.N2 / 5.0, p_.N2 / 5.0, along_x_, along_w_);
  along_chi_.resize(n);
  for (int i = 0; i < n; ++i) {
    const double a = 10.0 * along_x_[i] / p_.N2;
    along_chi_[i] = smooth_cutoff_r2(a * a);
  }
  std::vector<double> cx, cw;
  gl_on_interval(n, -2.0 / p_.M, 2.0 / p_.M, cx, cw);
  if (p_.d == 2) {
    for (int l = 0; l < n; ++l) {
      perp_off_.push_back(vec2(cx[l], 0.0));  // local coords (c1, c2)
      perp_w_.push_back(cw[l]);
      perp_chi_.push_back(smooth_cutoff_r2(p_.M * p_.M * cx[l] * cx[l]));
    }
  } else {
    for (int l1 = 0; l1 < n; ++l1)
      for (int l2 = 0; l2 < n; ++l2) {
        perp_off_.push_back(vec2(cx[l1], cx[l2]));
        perp_w_.push_back(cw[l1] * cw[l2]);
        perp_chi_.push_back(
            smooth_cutoff_r2(p_.M * p_.M * (cx[l1] * cx[l1] + cx[l2] * cx[l2])));
      }
  }
}

template <class F>
double BetaEvaluator::accumulate(double t, const Vec& x, const Vec& v, F&& kfac) const {
  // sum over sectors, trapezoid nodes on [t, 0], and sector tensor nodes
  const int K = p_.j_schedule;
  double total = 0.0;
  for (int j = 0; j < p_.J; ++j) {
    const Vec e = fam_.points[j], q1 = fam_.perp1[j], q2 = fam_.perp2[j];
    for (int k = 0; k <= K; ++k) {
      const double t0 = t * (1.0 - static_cast<double>(k) / K);  // t .. 0
      const double wt = (k == 0 || k == K) ? 0.5 : 1.0;
      const double dtw = wt * std::abs(t) / K;
      double node_sum = 0.0;
      for (size_t l = 0; l < perp_off_.size(); ++l) {
        const double pw = perp_w_[l] * perp_chi_[l];
        if (pw == 0.0) continue;
        const Vec pvec = perp_off_[l][0] * q1 + perp_off_[l][1] * q2;
        for (size_t i = 0; i < along_x_.size(); ++i) {
          const double aw = along_w_[i] * along_chi_[i];
          if (aw == 0.0) continue;
          const Vec u = (p_.N2 + along_x_[i]) * e + pvec;
          const double r = norm(u - v);
          if (r < 1e-9) continue;  // kernel cutoff rule
          node_sum += pw * aw * kfac(j, u, x - t0 * u) * std::pow(r, p_.gamma);
        }
      }
      total += dtw * node_sum;
    }
  }
  return total;
}

double BetaEvaluator::rate(double t, const Vec& x, const Vec& v) const {
  const double amp = p_.amplitude_fb();
  double total = 0.0;
  for (int j = 0; j < p_.J; ++j) {
    const Vec e = fam_.points[j], q1 = fam_.perp1[j], q2 = fam_.perp2[j];
    for (size_t l = 0; l < perp_off_.size(); ++l) {
      const double pw = perp_w_[l] * perp_chi_[l];
      if (pw == 0.0) continue;
      const Vec pvec = perp_off_[l][0] * q1 + perp_off_[l][1] * q2;
      for (size_t i = 0; i < along_x_.size(); ++i) {
        const double aw = along_w_[i] * along_chi_[i];
        if (aw == 0.0) continue;
        const Vec u = (p_.N2 + along_x_[i]) * e + pvec;
        const double r = norm(u - v);
        if (r < 1e-9) continue;
        const Vec y = x - t * u;
        const double ypar = dot(y, e);
        const Vec yperp = y - ypar * e;
        const double kj = smooth_cutoff_r2(p_.M * p_.M * norm2(yperp)) *
                          smooth_cutoff_r2(ypar * ypar / (p_.N2 * p_.N2));
        total += pw * aw * kj * std::pow(r, p_.gamma);
      }
    }
  }
  return bl1_ * amp * total;
}

double BetaEvaluator::pointwise(double t, const Vec& x, const Vec& v) const {
  if (t > 0.0) throw validation_error("beta: t <= 0 required");
  if (t == 0.0) return 0.0;
  FbCore* fb = nullptr;  // K_j evaluated inline, no field object needed
  (void)fb;
  const double amp = p_.amplitude_fb();
  const double a = accumulate(t, x, v, [&](int j, const Vec&, const Vec& y) {
    const Vec& e = fam_.points[j];
    const double ypar = dot(y, e);
    const Vec yperp = y - ypar * e;
    return smooth_cutoff_r2(p_.M * p_.M * norm2(yperp)) *
           smooth_cutoff_r2(ypar * ypar / (p_.N2 * p_.N2));
  });
  return -bl1_ * amp * a;  // int_0^t = -int_t^0, integrand >= 0
}

Vec BetaEvaluator::grad_pointwise(double t, const Vec& x, const Vec& v) const {
  if (t >= 0.0) return {0, 0, 0};
  const double amp = p_.amplitude_fb();
  Vec g{0, 0, 0};
  for (int comp = 0; comp < p_.d; ++comp) {
    const double a = accumulate(t, x, v, [&](int j, const Vec&, const Vec& y) {
      const Vec& e = fam_.points[j];
      const double ypar = dot(y, e);
      const Vec yperp = y - ypar * e;
      const double cperp = smooth_cutoff_r2(p_.M * p_.M * norm2(yperp));
      const double cpar = smooth_cutoff_r2(ypar * ypar / (p_.N2 * p_.N2));
      const Vec g1 = p_.M * smooth_cutoff_grad(p_.M * yperp);
      const Vec g2 = (1.0 / p_.N2) * smooth_cutoff_grad((ypar / p_.N2) * e);
      return cpar * g1[comp] + cperp * g2[comp];
    });
    g[comp] = -bl1_ * amp * a;
  }
  return g;
}

std::vector<double> BetaEvaluator::batch(const std::vector<double>& times,
                                         const std::vector<Vec>& xs,
                                         const std::vector<Vec>& vs) const {
  const int nt = static_cast<int>(times.size());
  const int nx = static_cast<int>(xs.size());
  const int nv = static_cast<int>(vs.size());
  double tmin = 0.0;
  for (double t : times) {
    if (t > 1e-15) throw validation_error("beta batch: times must be <= 0");
    tmin = std::min(tmin, t);
  }
  // merged descending t0 mesh: uniform j_schedule nodes plus requested times
  std::vector<double> mesh;
  for (int k = 0; k <= p_.j_schedule; ++k)
    mesh.push_back(tmin * static_cast<double>(k) / p_.j_schedule);
  mesh.insert(mesh.end(), times.begin(), times.end());
  std::sort(mesh.begin(), mesh.end(), std::greater<double>());
  mesh.erase(std::unique(mesh.begin(), mesh.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-15; }),
             mesh.end());
  const int K = static_cast<int>(mesh.size());
  if (tmin == 0.0) return std::vector<double>(static_cast<size_t>(nt) * nx * nv, 0.0);
  std::vector<int> tindex(nt);
  for (int i = 0; i < nt; ++i) {
    int best = 0;
    for (int k = 0; k < K; ++k)
      if (std::abs(mesh[k] - times[i]) < std::abs(mesh[best] - times[i])) best = k;
    tindex[i] = best;
  }

  // core-domain guard: chi(P_j(x - u t0)/N2) = 1 for every node; a small
  // overshoot into the transition onset is allowed since psi(1 + delta)
  // deviates from 1 only by O(exp(-1/delta))
  double xmax = 0.0;
  for (const Vec& x : xs) xmax = std::max(xmax, norm(x));
  if (xmax + std::abs(tmin) * 1.2 * p_.N2 > 1.08 * p_.N2)
    throw validation_error("beta batch: x outside the exact-split core domain");

  const int nl = static_cast<int>(perp_off_.size());
  const int na = static_cast<int>(along_x_.size());
  const double amp = p_.amplitude_fb();

  // v-factor R[j][l][iv] = sum_i w_i chi_i |u_{jil} - v|^gamma
  std::vector<double> R(static_cast<size_t>(p_.J) * nl * nv);
  par::parallel_for(0, p_.J, [&](long long j) {
    const Vec e = fam_.points[j], q1 = fam_.perp1[j], q2 = fam_.perp2[j];
    for (int l = 0; l < nl; ++l) {
      const Vec pvec = perp_off_[l][0] * q1 + perp_off_[l][1] * q2;
      for (int iv = 0; iv < nv; ++iv) {
        double s = 0.0;
        for (int i = 0; i < na; ++i) {
          const double aw = along_w_[i] * along_chi_[i];
          if (aw == 0.0) continue;
          const Vec u = (p_.N2 + along_x_[i]) * e + pvec;
          const double r = norm(u - vs[iv]);
          if (r < 1e-9) continue;
          s += aw * std::pow(r, p_.gamma);
        }
        R[(static_cast<size_t>(j) * nl + l) * nv + iv] = s;
      }
    }
  });

  std::vector<double> out(static_cast<size_t>(nt) * nx * nv, 0.0);
  par::parallel_for(0, nx, [&](long long ix) {
    const Vec& x = xs[ix];
    // prefix integrals S[j][l][mesh-k]
    std::vector<double> S(static_cast<size_t>(p_.J) * nl * K);
    for (int j = 0; j < p_.J; ++j) {
      const Vec e = fam_.points[j], q1 = fam_.perp1[j], q2 = fam_.perp2[j];
      const double x1 = dot(x, q1), x2 = p_.d == 3 ? dot(x, q2) : 0.0;
      (void)e;
      for (int l = 0; l < nl; ++l) {
        const double c1 = perp_off_[l][0], c2 = perp_off_[l][1];
        double* Sj = S.data() + (static_cast<size_t>(j) * nl + l) * K;
        double prev_g = 0.0, acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const double t0 = mesh[k];
          const double d1 = x1 - t0 * c1;
          const double d2 = p_.d == 3 ? x2 - t0 * c2 : 0.0;
          const double gk = smooth_cutoff_r2(p_.M * p_.M * (d1 * d1 + d2 * d2));
          if (k > 0) acc += 0.5 * (prev_g + gk) * (mesh[k - 1] - mesh[k]);
          prev_g = gk;
          Sj[k] = acc;
        }
      }
    }
    for (int it = 0; it < nt; ++it) {
      const int k = tindex[it];
      for (int iv = 0; iv < nv; ++iv) {
        double s = 0.0;
        for (int j = 0; j < p_.J; ++j)
          for (int l = 0; l < nl; ++l) {
            const double pw = perp_w_[l] * perp_chi_[l];
            s += pw * S[(static_cast<size_t>(j) * nl + l) * K + k] *
                 R[(static_cast<size_t>(j) * nl + l) * nv + iv];
          }
        out[(static_cast<size_t>(it) * nx + ix) * nv + iv] = -bl1_ * amp * s;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// f_r
// ---------------------------------------------------------------------------

namespace {
struct BetaMemo {
  std::mutex mu;
  std::unordered_map<std::uint64_t, double> map;
};

std::uint64_t point_key(const Vec& x, const Vec& v, int d) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  auto mix1 = [&](double val) {
    std::uint64_t u;
    std::memcpy(&u, &val, 8);
    h = Rng::mix(h ^ u);
  };
  for (int k = 0; k < d; ++k) mix1(x[k]);
  for (int k = 0; k < d; ++k) mix1(v[k]);
  return h;
}
}  // namespace

FrCore::FrCore(const DeflationParams& p, const BumpFamily& fam, double t, FrMode mode,
               std::shared_ptr<const BetaEvaluator> beta)
    : p_(p), t_(t), mode_(mode), beta_(std::move(beta)) {
  p_.validate();
  if (!(t <= 0.0) || t < p_.T_star - 1e-12)
    throw validation_error("FrCore: T* <= t <= 0 required");
  if (!beta_) beta_ = std::make_shared<BetaEvaluator>(p_, fam);
  amp_ = p_.amplitude_fr();
  memo_ = std::make_shared<BetaMemo>();

  // quadrature plan: single core chart, segment rule around the cutoff bands
  std::vector<double> cx, cw;
  gl_segments(4, p_.d == 2 ? 5 : 4, 1.0 / p_.N1, 2.0 / p_.N1, cx, cw);
  const int nvq = static_cast<int>(cx.size());
  NormChart ch;
  for (int i = 0; i < nvq; ++i)
    for (int j = 0; j < nvq; ++j) {
      if (p_.d == 2) {
        ch.vnodes.push_back({vec2(cx[i], cx[j]), cw[i] * cw[j]});
      } else {
        for (int l = 0; l < nvq; ++l)
          ch.vnodes.push_back({vec3(cx[i], cx[j], cx[l]), cw[i] * cw[j] * cw[l]});
      }
    }
  const DeflationParams pp = p_;
  ch.xbox = [pp](const Vec&) {
    XLatticeSpec sp;
    sp.origin = vec3(0, 0, 0);
    sp.axes[0] = vec3(1, 0, 0);
    sp.axes[1] = vec3(0, 1, 0);
    sp.axes[2] = vec3(0, 0, 1);
    const double margin = 2.5;
    for (int k = 0; k < 3; ++k) sp.half[k] = 2.0 / pp.M + margin;
    const double h = (pp.d == 2 ? 0.12 : 0.3) / pp.M;
    int n = static_cast<int>(std::ceil(2.0 * sp.half[0] / h / 4.0)) * 4;
    n = std::min(n, 768);
    sp.n[0] = sp.n[1] = n;
    sp.n[2] = pp.d == 3 ? n : 1;
    return sp;
  };
  plan_.charts.push_back(std::move(ch));

  if (mode_ == FrMode::Table) {
    tnx_ = p_.d == 2 ? 48 : 20;
    tnv_ = p_.d == 2 ? 12 : 8;
    txh_ = 2.2 / p_.M;
    tvh_ = 2.2 / p_.N1;
    std::vector<Vec> xs, vs;
    for (int i = 0; i < tnx_; ++i)
      for (int j = 0; j < tnx_; ++j) {
        if (p_.d == 2)
          xs.push_back(vec2(-txh_ + 2.0 * txh_ * i / (tnx_ - 1.0),
                            -txh_ + 2.0 * txh_ * j / (tnx_ - 1.0)));
        else
          for (int l = 0; l < tnx_; ++l)
            xs.push_back(vec3(-txh_ + 2.0 * txh_ * i / (tnx_ - 1.0),
                              -txh_ + 2.0 * txh_ * j / (tnx_ - 1.0),
                              -txh_ + 2.0 * txh_ * l / (tnx_ - 1.0)));
      }
    for (int i = 0; i < tnv_; ++i)
      for (int j = 0; j < tnv_; ++j) {
        if (p_.d == 2)
          vs.push_back(vec2(-tvh_ + 2.0 * tvh_ * i / (tnv_ - 1.0),
                            -tvh_ + 2.0 * tvh_ * j / (tnv_ - 1.0)));
        else
          for (int l = 0; l < tnv_; ++l)
            vs.push_back(vec3(-tvh_ + 2.0 * tvh_ * i / (tnv_ - 1.0),
                              -tvh_ + 2.0 * tvh_ * j / (tnv_ - 1.0),
                              -tvh_ + 2.0 * tvh_ * l / (tnv_ - 1.0)));
      }
    if (t_ == 0.0) {
      table_.assign(xs.size() * vs.size(), 0.0);
    } else {
      std::vector<double> b = beta_->batch({t_}, xs, vs);
      table_.resize(xs.size() * vs.size());
      // reorder to [v][x]
      for (size_t ix = 0; ix < xs.size(); ++ix)
        for (size_t iv = 0; iv < vs.size(); ++iv)
          table_[iv * xs.size() + ix] = b[ix * vs.size() + iv];
    }
  }
}

double FrCore::table_beta(const Vec& x, const Vec& v) const {
  // multilinear in v then x on the uniform product lattice
  const int d = p_.d;
  const double hx = 2.0 * txh_ / (tnx_ - 1.0), hv = 2.0 * tvh_ / (tnv_ - 1.0);
  int bx[3] = {0, 0, 0}, bv[3] = {0, 0, 0};
  double fx[3] = {0, 0, 0}, fv[3] = {0, 0, 0};
  for (int k = 0; k < d; ++k) {
    double tx = (x[k] + txh_) / hx;
    bx[k] = std::clamp(static_cast<int>(std::floor(tx)), 0, tnx_ - 2);
    fx[k] = std::clamp(tx - bx[k], 0.0, 1.0);
    double tv = (v[k] + tvh_) / hv;
    bv[k] = std::clamp(static_cast<int>(std::floor(tv)), 0, tnv_ - 2);
    fv[k] = std::clamp(tv - bv[k], 0.0, 1.0);
  }
  const long long nxtot = d == 2 ? static_cast<long long>(tnx_) * tnx_
                                 : static_cast<long long>(tnx_) * tnx_ * tnx_;
  double acc = 0.0;
  const int cors = 1 << d;
  for (int cv = 0; cv < cors; ++cv) {
    double wv = 1.0;
    long long ivf = 0;
    for (int k = 0; k < d; ++k) {
      const int bit = (cv >> k) & 1;
      wv *= bit ? fv[k] : 1.0 - fv[k];
      ivf = ivf * tnv_ + (bv[k] + bit);
    }
    if (wv == 0.0) continue;
    const double* slab = table_.data() + ivf * nxtot;
    for (int cx = 0; cx < cors; ++cx) {
      double wx = 1.0;
      long long ixf = 0;
      for (int k = 0; k < d; ++k) {
        const int bit = (cx >> k) & 1;
        wx *= bit ? fx[k] : 1.0 - fx[k];
        ixf = ixf * tnx_ + (bx[k] + bit);
      }
      if (wx != 0.0) acc += wv * wx * slab[ixf];
    }
  }
  return acc;
}

double FrCore::beta_at(const Vec& x, const Vec& v) const {
  if (t_ == 0.0) return 0.0;
  if (mode_ == FrMode::Table) return table_beta(x, v);
  auto* memo = static_cast<BetaMemo*>(memo_.get());
  const std::uint64_t key = point_key(x, v, p_.d);
  {
    std::lock_guard<std::mutex> lk(memo->mu);
    auto it = memo->map.find(key);
    if (it != memo->map.end()) return it->second;
  }
  const double b = beta_->pointwise(t_, x, v);
  {
    std::lock_guard<std::mutex> lk(memo->mu);
    memo->map.emplace(key, b);
  }
  return b;
}

Vec FrCore::beta_grad_at(const Vec& x, const Vec& v) const {
  if (t_ == 0.0) return {0, 0, 0};
  if (mode_ == FrMode::Exact) return beta_->grad_pointwise(t_, x, v);
  const double h = 0.5 * 2.0 * txh_ / (tnx_ - 1.0);
  Vec g{0, 0, 0};
  for (int k = 0; k < p_.d; ++k) {
    Vec xp = x, xm = x;
    xp[k] = std::min(xp[k] + h, txh_);
    xm[k] = std::max(xm[k] - h, -txh_);
    g[k] = (table_beta(xp, v) - table_beta(xm, v)) / (xp[k] - xm[k]);
  }
  return g;
}

double FrCore::eval_raw(const Vec& x, const Vec& v) const {
  const double cx = smooth_cutoff_r2(p_.M * p_.M * norm2(x));
  if (cx == 0.0) return 0.0;
  const double cv = smooth_cutoff_r2(p_.N1 * p_.N1 * norm2(v));
  if (cv == 0.0) return 0.0;
  return amp_ * std::exp(-beta_at(x, v)) * cx * cv;
}

Vec FrCore::grad_x_raw(const Vec& x, const Vec& v) const {
  const double cv = smooth_cutoff_r2(p_.N1 * p_.N1 * norm2(v));
  if (cv == 0.0) return {0, 0, 0};
  const double cx = smooth_cutoff_r2(p_.M * p_.M * norm2(x));
  if (cx == 0.0) return {0, 0, 0};
  const double eb = std::exp(-beta_at(x, v));
  const Vec gchi = p_.M * smooth_cutoff_grad(p_.M * x);
  const Vec gbeta = beta_grad_at(x, v);
  Vec g;
  for (int k = 0; k < 3; ++k)
    g[k] = amp_ * cv * eb * (gchi[k] - gbeta[k] * cx);
  return g;
}

std::vector<RotBox> FrCore::v_boxes() const {
  RotBox b;
  b.center = vec3(0, 0, 0);
  b.axes[0] = vec3(1, 0, 0);
  b.axes[1] = vec3(0, 1, 0);
  b.axes[2] = vec3(0, 0, 1);
  for (int k = 0; k < p_.d; ++k) b.half[k] = 2.0 / p_.N1;
  return {b};
}

SupportBox FrCore::support() const {
  SupportBox sb;
  for (int k = 0; k < p_.d; ++k) {
    sb.xlo[k] = -2.0 / p_.M;
    sb.xhi[k] = 2.0 / p_.M;
    sb.vlo[k] = -2.0 / p_.N1;
    sb.vhi[k] = 2.0 / p_.N1;
  }
  return sb;
}

PhaseField build_fr(const DeflationParams& p, const BumpFamily& fam, double t,
                    FrMode mode, std::shared_ptr<const BetaEvaluator> beta) {
  return PhaseField(std::make_shared<FrCore>(p, fam, t, mode, std::move(beta)));
}

// ---------------------------------------------------------------------------
// f_a
// ---------------------------------------------------------------------------

FaCore::FaCore(std::shared_ptr<const FrCore> fr, std::shared_ptr<const FbCore> fb)
    : fr_(std::move(fr)), fb_(std::move(fb)) {
  if (fr_->dim() != fb_->dim()) throw validation_error("FaCore: dimension mismatch");
  // velocity supports must be disjoint (core radius < inner ring radius)
  const auto& p = fb_->params();
  if (!(2.0 / p.N1 < 0.8 * p.N2))
    throw validation_error("FaCore: overlapping velocity supports");
  plan_ = *fr_->norm_plan();
  for (const auto& ch : fb_->norm_plan()->charts) plan_.charts.push_back(ch);
}

double FaCore::eval_raw(const Vec& x, const Vec& v) const {
  double s = 0.0;
  const SupportBox r = fr_->support();
  bool in = true;
  for (int k = 0; k < dim(); ++k)
    if (x[k] < r.xlo[k] || x[k] > r.xhi[k] || v[k] < r.vlo[k] || v[k] > r.vhi[k])
      in = false;
  if (in) s += fr_->eval_raw(x, v);
  const SupportBox b = fb_->support();
  in = true;
  for (int k = 0; k < dim(); ++k)
    if (x[k] < b.xlo[k] || x[k] > b.xhi[k] || v[k] < b.vlo[k] || v[k] > b.vhi[k])
      in = false;
  if (in) s += fb_->eval_raw(x, v);
  return s;
}

Vec FaCore::grad_x_raw(const Vec& x, const Vec& v) const {
  Vec g{0, 0, 0};
  const SupportBox r = fr_->support();
  bool in = true;
  for (int k = 0; k < dim(); ++k)
    if (x[k] < r.xlo[k] || x[k] > r.xhi[k] || v[k] < r.vlo[k] || v[k] > r.vhi[k])
      in = false;
  if (in) g = g + fr_->grad_x_raw(x, v);
  const SupportBox b = fb_->support();
  in = true;
  for (int k = 0; k < dim(); ++k)
    if (x[k] < b.xlo[k] || x[k] > b.xhi[k] || v[k] < b.vlo[k] || v[k] > b.vhi[k])
      in = false;
  if (in) g = g + fb_->grad_x_raw(x, v);
  return g;
}

std::vector<RotBox> FaCore::v_boxes() const {
  std::vector<RotBox> out = fr_->v_boxes();
  for (const auto& b : fb_->v_boxes()) out.push_back(b);
  return out;
}

SupportBox FaCore::support() const {
  SupportBox a = fr_->support(), b = fb_->support();
  SupportBox u;
  for (int k = 0; k < 3; ++k) {
    u.xlo[k] = std::min(a.xlo[k], b.xlo[k]);
    u.xhi[k] = std::max(a.xhi[k], b.xhi[k]);
    u.vlo[k] = std::min(a.vlo[k], b.vlo[k]);
    u.vhi[k] = std::max(a.vhi[k], b.vhi[k]);
  }
  return u;
}

PhaseField build_fa(const DeflationParams& p, const BumpFamily& fam, double t,
                    FrMode mode) {
  auto fr = std::make_shared<FrCore>(p, fam, t, mode);
  auto fb = std::make_shared<FbCore>(p, fam, t);
  return PhaseField(std::make_shared<FaCore>(std::move(fr), std::move(fb)));
}

// ---------------------------------------------------------------------------
// error term
// ---------------------------------------------------------------------------

DenseField assemble_f_err(const DeflationParams& p, const BumpFamily& fam, double t,
                          const Grid& grid, const SphereQuadrature& sq,
                          bool force_fr_zero) {
  grid.validate();
  CollisionKernel kern;
  kern.gamma = p.gamma;
  kern.validate(p.d);

  PhaseField fb = build_fb(p, fam, t);
  DenseField fb_d = sample_to_grid(fb, grid);
  DenseField fr_d(grid);
  if (!force_fr_zero) {
    PhaseField fr = build_fr(p, fam, t);
    fr_d = sample_to_grid(fr, grid);
  }
  // support must sit inside the grid box
  {
    const SupportBox sb = fb.core().support();
    for (int k = 0; k < p.d; ++k)
      if (sb.vhi[k] > grid.Lv || sb.xhi[k] > grid.Lx)
        throw validation_error("assemble_f_err: grid does not cover the supports");
  }

  const long long sx = grid.size_x(), sv = grid.size_v();
  DenseField out(grid);

  // v . grad_x f_r, spectral derivative of the sampled core
  if (!force_fr_zero) {
    for (int a = 0; a < grid.d; ++a) {
      SpectralField s = transform_forward(PhaseField(fr_d), AXIS_X);
      for (long long fx = 0; fx < sx; ++fx) {
        int idx[3] = {0, 0, 0};
        grid.unflat(fx, grid.nx, idx);
        const cplx ik(0.0, s.kx(idx[a]));
        cplx* row = s.a.data() + fx * sv;
        for (long long fv = 0; fv < sv; ++fv) row[fv] *= ik;
      }
      PhaseField deriv = transform_inverse(s);
      const DenseField& dd = deriv.dense();
      for (long long fx = 0; fx < sx; ++fx)
        for (long long fv = 0; fv < sv; ++fv)
          out.at(fx, fv) += grid.v_point(fv)[a] * dd.at(fx, fv);
    }
  }

  CollisionTables tab(grid, kern, sq);
  auto add_pair = [&](const DenseField& a, const DenseField& b) {
    // -Q+(a,b) + Q-(a,b)
    par::parallel_for(0, sx, [&](long long fx) {
      std::vector<double> qp(sv), qm(sv);
      tab.gain_slice(a.a.data() + fx * sv, b.a.data() + fx * sv, qp.data());
      tab.loss_slice(a.a.data() + fx * sv, b.a.data() + fx * sv, qm.data());
      for (long long fv = 0; fv < sv; ++fv) out.at(fx, fv) += qm[fv] - qp[fv];
    });
  };
  if (!force_fr_zero) {
    // -Q+(f_r, f_b) alone (its loss partner cancels against d/dt f_r)
    par::parallel_for(0, sx, [&](long long fx) {
      std::vector<double> qp(sv);
      tab.gain_slice(fr_d.a.data() + fx * sv, fb_d.a.data() + fx * sv, qp.data());
      for (long long fv = 0; fv < sv; ++fv) out.at(fx, fv) -= qp[fv];
    });
    add_pair(fb_d, fr_d);
    add_pair(fr_d, fr_d);
  }
  add_pair(fb_d, fb_d);
  return out;
}

FerrContext make_ferr_context(const DeflationParams& p, const BumpFamily& fam) {
  FerrContext ctx;
  ctx.p = p;
  ctx.p.finalize();
  ctx.p.validate();
  ctx.fam = fam;
  ctx.kernel.gamma = p.gamma;
  ctx.kernel.validate(p.d);
  ctx.gain_rule.sq = sphere_quadrature(p.d, p.d == 2 ? 16 : 6);
  ctx.gain_rule.n_line = 6;
  ctx.loss_nodes = 8;
  ctx.bl1 = ctx.kernel.b_l1(p.d);
  ctx.beta = std::make_shared<BetaEvaluator>(ctx.p, fam);
  return ctx;
}

void FerrContext::set_time(double t_new, FrMode mode) {
  t = t_new;
  fb_at_t = std::make_shared<FbCore>(p, fam, t);
  fr_at_t = std::make_shared<FrCore>(p, fam, t, mode, beta);
}

double ferr_point(const FerrContext& ctx, const Vec& x, const Vec& v) {
  PhaseField fr(std::static_pointer_cast<const AnalyticCore>(ctx.fr_at_t));
  PhaseField fb(std::static_pointer_cast<const AnalyticCore>(ctx.fb_at_t));
  const double bl1 = ctx.bl1;

  double acc = 0.0;
  // v . grad_x f_r
  {
    const SupportBox sb = ctx.fr_at_t->support();
    bool in = true;
    for (int k = 0; k < ctx.p.d; ++k)
      if (x[k] < sb.xlo[k] || x[k] > sb.xhi[k] || v[k] < sb.vlo[k] || v[k] > sb.vhi[k])
        in = false;
    if (in) acc += dot(v, ctx.fr_at_t->grad_x_raw(x, v));
  }
  // gain terms
  acc -= q_gain_pointwise(fr, fb, ctx.kernel, x, v, ctx.gain_rule);
  acc -= q_gain_pointwise(fb, fr, ctx.kernel, x, v, ctx.gain_rule);
  acc -= q_gain_pointwise(fr, fr, ctx.kernel, x, v, ctx.gain_rule);
  acc -= q_gain_pointwise(fb, fb, ctx.kernel, x, v, ctx.gain_rule);
  // loss terms (Q-(f_r, f_b) is absorbed by the f_r equation)
  const double fbv = fb.eval(x, v), frv = fr.eval(x, v);
  if (fbv != 0.0) {
    acc += fbv * bl1 * loss_u_integral(fr, ctx.kernel, x, v, ctx.loss_nodes);
    acc += fbv * bl1 * loss_u_integral(fb, ctx.kernel, x, v, ctx.loss_nodes);
  }
  if (frv != 0.0)
    acc += frv * bl1 * loss_u_integral(fr, ctx.kernel, x, v, ctx.loss_nodes);
  return acc;
}

// ---------------------------------------------------------------------------
// deflation experiment
// ---------------------------------------------------------------------------

DeflationReport deflation_experiment(const DeflationParams& p_in, const BumpFamily& fam,
                                     const NormSpec& norm, int n_times) {
  DeflationParams p = p_in;
  p.finalize();
  p.validate();
  norm.validate();
  if (n_times < 2) throw validation_error("deflation_experiment: n_times >= 2");

  auto beta = std::make_shared<BetaEvaluator>(p, fam);
  DeflationReport rep;
  for (int i = 0; i < n_times; ++i)
    rep.times.push_back(p.T_star * (1.0 - static_cast<double>(i) / (n_times - 1)));

  auto eval_norm = [&](const PhaseField& f) {
    if (norm.kind == NormSpec::Kind::Sobolev) return sobolev_norm(f, norm.s, norm.r);
    if (norm.kind == NormSpec::Kind::Znorm)
      return z_norm(f, {norm.M, norm.N2, norm.gamma, norm.r0});
    throw validation_error("deflation_experiment: unsupported norm kind");
  };

  for (double t : rep.times) {
    auto fr = std::make_shared<FrCore>(p, fam, t, FrMode::Table, beta);
    auto fb = std::make_shared<FbCore>(p, fam, t);
    const double nr =
        eval_norm(PhaseField(std::static_pointer_cast<const AnalyticCore>(fr)));
    const double nb =
        eval_norm(PhaseField(std::static_pointer_cast<const AnalyticCore>(fb)));
    rep.norm_fr.push_back(nr);
    rep.norm_fb.push_back(nb);
    if (norm.kind == NormSpec::Kind::Sobolev) {
      // disjoint velocity supports make the squares add exactly
      rep.norm_fa.push_back(std::sqrt(nr * nr + nb * nb));
    } else {
      auto fa = std::make_shared<FaCore>(fr, fb);
      rep.norm_fa.push_back(
          eval_norm(PhaseField(std::static_pointer_cast<const AnalyticCore>(fa))));
    }
  }
  rep.ratio = rep.norm_fa.front() / rep.norm_fa.back();
  return rep;
}

}  // namespace kdl
