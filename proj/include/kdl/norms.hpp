#pragma once

#include <functional>

#include "kdl/field.hpp"
#include "kdl/trajectory.hpp"

namespace kdl {

/// scaling-critical indices: s_c = (d-2)/2 and the weight line r(s) = s + gamma
struct CriticalIndices {
  double s_c;
  std::function<double(double)> r_c;
};
CriticalIndices critical_indices(int d, double gamma);

struct NormSpec {
  enum class Kind { Sobolev, Znorm, Xsrb };
  Kind kind = Kind::Sobolev;
  double s = 0.0, r = 0.0;                          // Sobolev / Xsrb
  double b = 0.0;                                   // Xsrb
  double M = 0.0, N2 = 0.0, gamma = 0.0, r0 = 0.0;  // Znorm

  void validate() const {
    if (kind == Kind::Xsrb && !(b > 0.5 && b < 1.0))
      throw validation_error("NormSpec: Xsrb requires b in (1/2, 1)");
    if (kind == Kind::Znorm && !(M >= 2.0 && N2 >= 2.0))
      throw validation_error("NormSpec: Znorm requires M, N2 >= 2");
  }
};

/**
 * || <grad_x>^s <v>^r f ||_{L^2_{x,v}}.  Dense fields go through the periodic
 * Fourier multiplier; analytic fields require a tensor quadrature plan
 * (velocity nodes, each with a local x-lattice on which the x-norm is
 * evaluated spectrally).
 */
double sobolev_norm(const PhaseField& f, double s, double r);

/// x-norm helper on one plan lattice: || <grad>^s g ||_{L^2} of samples
double xlattice_hs_norm_sq(const std::vector<double>& samples, const XLatticeSpec& sp,
                           int d, double s);

/**
 * Littlewood-Paley shell projector along the x- or v-block: multiplier
 * phi_N(k) = chi(k/N) - chi(2k/N) for dyadic N >= 2 and phi_1 = chi(k), so
 * the shells telescope to chi(k/Nmax).
 */
PhaseField lp_project(const PhaseField& f, int N, char axis /* 'x' or 'v' */);

struct ZParams {
  double M;
  double N2;
  double gamma;
  double r0;
};

/**
 * The six-term Z-norm
 *   M^{(d-3)/2} ||grad_x f||_{L_v^{2,r0} L_x^2} + M^{(d-1)/2} ||f||_{L_v^{2,r0} L_x^2}
 * + N2^gamma ||f||_{L_v^1 L_x^inf} + N2^{2d/5+gamma} ||f||_{L_v^{5/3} L_x^inf}
 * + M^{-1} N2^gamma ||grad_x f||_{L_v^1 L_x^inf}
 * + M^{-1} N2^{2d/5+gamma} ||grad_x f||_{L_v^{5/3} L_x^inf},
 * mixed norms evaluated inner-axis-first (L_x^inf inside).
 */
double z_norm(const PhaseField& f, const ZParams& zp);

/// individual pieces, exposed for trend diagnostics
struct ZBreakdown {
  double l2 = 0, l2_grad = 0, lv1 = 0, lv53 = 0, lv1_grad = 0, lv53_grad = 0;
  double total = 0;
};
ZBreakdown z_norm_breakdown(const PhaseField& f, const ZParams& zp);

struct TaperSpec {
  double t0 = 0.0, t1 = 1.0;  // support window; flat on the middle half
  double value(double t) const;
};

/**
 * Fourier restriction norm || fhat(tau,eta,v) <tau + eta.v>^b <eta>^s <v>^r ||_{L^2}
 * of a tapered trajectory: DFT in (t,x), velocity stays physical.  One fixed
 * smooth taper emulates the finite-time restriction; no infimum over
 * extensions is attempted.
 */
double xsrb_norm(const Trajectory& traj, double s, double r, double b,
                 const TaperSpec& taper);

}  // namespace kdl
