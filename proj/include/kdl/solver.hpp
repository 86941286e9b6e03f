#pragma once

#include <utility>

#include "kdl/collision.hpp"
#include "kdl/deflation.hpp"
#include "kdl/trajectory.hpp"

namespace kdl {

/**
 * Exact free transport e^{-t v.grad_x}: dense fields get the spectral shift
 * x -> x - v t per velocity node (exact for band-limited data, periodic),
 * analytic fields get their evaluator composed with the shift.  On dense
 * fields with compact x-support the shift must stay within the distance from
 * the support to the box edge; periodic-in-x data skips the check.
 */
PhaseField free_transport(const PhaseField& f, double t);

/// trapezoid Duhamel sum  int_{t_lo}^{t_hi} e^{-(t_hi - t0) v.grad_x} S(t0) dt0
PhaseField duhamel(const Trajectory& source, double t_lo, double t_hi);

/**
 * The pointwise damping ODE  d/dt f_r = -f_r * int f_b(t,x,u)|u-v|^gamma du,
 * anchored at the t = 0 bump and integrated backward with the exponential
 * integrator (trapezoid exponent).  Returns {ode trajectory, closed-form
 * trajectory} on the same mesh for cross-checking the two routes.
 */
std::pair<Trajectory, Trajectory> fr_ode_evolve(const DeflationParams& p,
                                                const BumpFamily& fam,
                                                const std::vector<double>& times,
                                                const Grid& grid);

struct PicardResult {
  Trajectory traj;
  std::vector<double> residuals;  // successive-iterate max-over-mesh L2 distances
};

/**
 * Duhamel fixed point f^{m+1} = e^{-t v.grad} f0 + int_0^t e^{-(t-s)v.grad}
 * Q(f^m, f^m)(s) ds on a uniform mesh over [0, T].  Stops when the
 * successive-iterate distance falls below tol; two consecutive increases
 * raise a divergence error carrying the history.
 */
PicardResult picard_local_solve(const PhaseField& f0, const CollisionKernel& k,
                                const SphereQuadrature& sq, double T, int n_steps,
                                double tol, int max_iter = 25);

struct CorrectionOptions {
  int n_subintervals = 8;
  int nodes_per_sub = 2;   // interior mesh intervals per subinterval
  double tol = 2e-3;       // relative successive-iterate tolerance
  int max_iter = 8;
  FrMode fr_mode = FrMode::Table;
  bool force_ferr_zero = false;  // drop the -F_err source (diagnostic)
};

struct CorrectionResult {
  Trajectory traj;                 // ascending mesh over [T*, 0]
  std::vector<double> z_history;   // sup Z-norm per subinterval, j = 0 first
};

/**
 * Correction-term solve: f_c(0) = 0 and, backward over a descending
 * partition of [T*, 0], the Duhamel iteration of
 *   d/dt f_c + v.grad_x f_c = +-Q^{+-}(f_c,f_a) +- Q^{+-}(f_a,f_c)
 *                             +- Q^{+-}(f_c,f_c) - F_err
 * with f_a frozen (sampled analytically per mesh node) and F_err evaluated
 * through the pointwise analytic route on the grid.
 */
CorrectionResult solve_correction(const DeflationParams& p, const BumpFamily& fam,
                                  const Grid& grid, const SphereQuadrature& sq,
                                  const CorrectionOptions& opt);

}  // namespace kdl
