#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kdl/field.hpp"
#include "kdl/grid.hpp"
#include "kdl/quadrature.hpp"

namespace kdl {

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

enum class KernelVariant { PowerLaw, Composite };

/**
 * Cutoff collision kernel B(u-v, omega) = Phi(|u-v|) * b(cos theta) with
 * cos theta = (u-v)/|u-v| . omega.  PowerLaw: Phi(r) = r^gamma with
 * -(d-1)/2 <= gamma <= 0; Composite (d=3): Phi(r) = r for r <= 1 and 1/r for
 * r >= 1.  The |u-v|^gamma singularity is regularized by zeroing the kernel
 * inside cutoff_eps * h_v; the excluded mass is O(h^{d+gamma}).
 */
struct CollisionKernel {
  double gamma = -0.5;
  std::function<double(double)> b = [](double c) { return std::abs(c); };
  std::string b_name = "abs_cos";
  KernelVariant variant = KernelVariant::PowerLaw;
  double cutoff_eps = 0.5;

  double grad_constant = 1.0;  // recorded C with 0 <= b(c) <= C|c|

  void validate(int d);
  double radial(double r) const;       // Phi(r), no cutoff handling
  double b_l1(int d) const;            // ||b||_{L^1(S^{d-1})}
};

/// full kernel value with the regularized diagonal; throws on u = v when
/// cutoff_eps = 0
double kernel_eval(const CollisionKernel& k, const Vec& u, const Vec& v,
                   const Vec& omega, int d, double hv);

// ---------------------------------------------------------------------------
// direct quadrature on velocity grids
// ---------------------------------------------------------------------------

/**
 * Precomputed difference tables for the direct (u, omega) quadrature on one
 * velocity grid: for every velocity difference w = u - v on the difference
 * lattice and every sphere node, the kernel weight and the interpolation
 * stencils of the post-collision points v* = v + (w.omega)omega and
 * u* = u - (w.omega)omega.  Built once per (grid, kernel, rule) and shared by
 * every x-slice.
 */
class CollisionTables {
 public:
  CollisionTables(const Grid& g, const CollisionKernel& k, const SphereQuadrature& sq);

  const Grid& grid() const { return grid_; }

  // loss:  out[iv] = f[iv] * sum_u g[iu] * W(iu - iv)
  void loss_slice(const double* f, const double* g, double* out) const;

  // gain:  out[iv] = sum_u sum_w  f(v*) g(u*) Bw
  void gain_slice(const double* f, const double* g, double* out) const;

 private:
  struct GainEntry {
    double bw;           // kernel * sphere weight * h^d
    int off_v, off_u;    // flat stencil base offsets
    int bv[3], bu[3];    // per-axis base offsets (for bounds checks)
    double wv[8], wu[8];  // multilinear corner weights
  };
  Grid grid_;
  int d_;
  int nv_;
  std::vector<double> loss_w_;           // (2nv-1)^d difference weights
  std::vector<std::vector<GainEntry>> gain_;  // per difference, entries over omega
  long long diff_index(const int* dw) const;
};

PhaseField q_loss_direct(const PhaseField& f, const PhaseField& g,
                         const CollisionKernel& k, const Grid& grid,
                         const SphereQuadrature& sq);
PhaseField q_gain_direct(const PhaseField& f, const PhaseField& g,
                         const CollisionKernel& k, const Grid& grid,
                         const SphereQuadrature& sq);

// slice forms (one x), reusing caller-built tables
std::vector<double> q_loss_slice(const CollisionTables& t, const std::vector<double>& f,
                                 const std::vector<double>& g);
std::vector<double> q_gain_slice(const CollisionTables& t, const std::vector<double>& f,
                                 const std::vector<double>& g);

// ---------------------------------------------------------------------------
// spectral (Fourier) forms, gamma < 0 strictly
// ---------------------------------------------------------------------------

/**
 * Angular profile of the Fourier transform of the cut kernel: for gamma < 0
 *
 *   FT[ |y|^gamma b(yhat . omega) ](zeta) = |zeta|^{-d-gamma} Theta(zetahat . omega),
 *
 * computed from the harmonic expansion of the even part of b (only the even
 * part of b enters Q^{+-}).  riesz is the ell = 0 factor, i.e. the constant
 * in FT[|y|^gamma] = riesz * |zeta|^{-d-gamma}.
 */
struct SpectralPrep {
  int d = 2;
  double gamma = -0.5;
  double bl1 = 0.0;
  double riesz = 0.0;
  std::vector<double> theta;  // sampled at mu = cos psi in [-1, 1], uniform

  double theta_at(double mu) const;
};

SpectralPrep make_spectral_prep(int d, const CollisionKernel& k, int max_harmonic = 16384,
                                int table_size = 2048);

struct EtaRule {
  int n_radial = 16;
  int n_angular = 24;    // d=2 circle nodes; d=3 sphere order
  double rmax_frac = 1.0;  // fraction of the xi-grid Nyquist radius
};

PhaseField q_gain_spectral(const PhaseField& f, const PhaseField& g,
                           const CollisionKernel& k, const Grid& grid,
                           const SphereQuadrature& sq, const EtaRule& eta);
PhaseField q_loss_spectral(const PhaseField& f, const PhaseField& g,
                           const CollisionKernel& k, const Grid& grid,
                           const EtaRule& eta);

// slice-level spectral forms (one x-slice of velocity values)
std::vector<double> q_gain_spectral_slice(const std::vector<double>& f,
                                          const std::vector<double>& g, const Grid& g_,
                                          const CollisionKernel& k,
                                          const SphereQuadrature& sq, const EtaRule& eta,
                                          const SpectralPrep& prep);
std::vector<double> q_loss_spectral_slice(const std::vector<double>& f,
                                          const std::vector<double>& g, const Grid& g_,
                                          const CollisionKernel& k, const EtaRule& eta,
                                          const SpectralPrep& prep);

// ---------------------------------------------------------------------------
// pointwise Carleman-form evaluation for analytic (support-sliced) fields
// ---------------------------------------------------------------------------

/**
 * Gain term at a single phase-space point through the orthogonal split
 * u - v = lambda*omega + p, p perp omega:
 *
 *   Q+(f,g)(x,v) = int_S int_R int_{omega^perp}
 *       f(x, v + lambda omega) g(x, v + p) Phi(|w|) b(lambda/|w|) dp dlambda domega
 *
 * with |w|^2 = lambda^2 + |p|^2.  The lambda- and p-ranges are sliced against
 * the velocity support boxes of f and g, so narrowly supported fields cost
 * only their own measure.
 */
struct CarlemanRule {
  SphereQuadrature sq;
  int n_line = 8;   // GL nodes per support-box crossing
  double eps = 1e-9;
};

double q_gain_pointwise(const PhaseField& f, const PhaseField& g,
                        const CollisionKernel& k, const Vec& x, const Vec& v,
                        const CarlemanRule& rule);

/// loss integrand  f(x,v) * ||b||_1 * int g(x,u) Phi(|u-v|) du  with the
/// u-integral as tensor Gauss-Legendre over g's velocity boxes
double q_loss_pointwise(const PhaseField& f, const PhaseField& g,
                        const CollisionKernel& k, const Vec& x, const Vec& v,
                        int n_box = 10);

/// the bare u-integral int g(x,u) Phi(|u-v|) du (no f factor, no ||b||_1)
double loss_u_integral(const PhaseField& g, const CollisionKernel& k, const Vec& x,
                       const Vec& v, int n_box = 10);

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

struct InvariantResiduals {
  double mass = 0.0;
  double momentum = 0.0;
  double energy = 0.0;
};

/**
 * Relative conservation residuals of the discrete Q = Q+ - Q-:
 * max over x of |int Q(f,f) psi dv| / (1 + |int Q+ psi dv|) for
 * psi in {1, v, |v|^2} (momentum reported as the Euclidean norm over
 * components).
 */
InvariantResiduals collision_invariants(const PhaseField& f, const CollisionKernel& k,
                                        const Grid& grid, const SphereQuadrature& sq);

}  // namespace kdl
