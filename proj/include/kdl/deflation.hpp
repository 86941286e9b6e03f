#pragma once

#include <memory>
#include <vector>

#include "kdl/collision.hpp"
#include "kdl/field.hpp"
#include "kdl/norms.hpp"

namespace kdl {

/**
 * Parameters of the norm-deflation construction.  The desk-scale schedule
 * relaxes the asymptotic regime N1 >= N2^10 >= M^100 to N1 >= N2 >= M >= 2;
 * trends over M and N2 are what the experiments check.
 */
struct DeflationParams {
  int d = 2;
  double gamma = -0.5;
  double M = 4.0;
  double N1 = 32.0;
  double N2 = 8.0;
  double s0 = 0.25;
  double s = 0.45;
  double r0 = -1.0;    // < 0 -> derived max(0, s0 + gamma)
  int J = 0;           // 0 -> round((M N2)^{d-1})
  double T_star = 0.0; // 0 -> -0.2 M^{s-(d-1)/2}
  int j_schedule = 32; // beta time-quadrature intervals
  int sector_quad = 16;  // per-axis u-nodes on each sector box
  bool allow_hard = false;

  void finalize();
  void validate() const;
  double amplitude_fb() const;  // M^{(d-1)/2-s} / N2^{d+gamma}
  double amplitude_fr() const;  // M^{d/2-s} N1^{d/2}
};

/// roughly equally spaced unit vectors with their orthogonal frames
struct BumpFamily {
  int d = 2;
  std::vector<Vec> points;
  std::vector<Vec> perp1, perp2;  // orthonormal complement of each point
  double min_angle = 0.0;
};

BumpFamily sphere_points(int d, int J);

// ---------------------------------------------------------------------------
// f_b: free-streaming bump family
// ---------------------------------------------------------------------------

/**
 * f_b(t,x,v) = M^{(d-1)/2-s} N2^{-d-gamma} sum_j K_j(x - v t) I_j(v) with
 * K_j(x) = chi(M P_j^perp x) chi(P_j x / N2),
 * I_j(v) = chi(M P_j^perp v) chi(10 P_j (v - N2 e_j) / N2).
 * Sector lookup is by direction, so an evaluation touches O(1) terms.
 */
class FbCore : public AnalyticCore {
 public:
  FbCore(const DeflationParams& p, const BumpFamily& fam, double t);
  int dim() const override { return p_.d; }
  SupportBox support() const override;
  double eval_raw(const Vec& x, const Vec& v) const override;
  Vec grad_x_raw(const Vec& x, const Vec& v) const override;
  std::vector<RotBox> v_boxes() const override;
  const NormPlan* norm_plan() const override { return &plan_; }

  double time() const { return t_; }
  const DeflationParams& params() const { return p_; }
  const BumpFamily& family() const { return fam_; }
  // K_j and I_j factors of one sector
  double kj(int j, const Vec& y) const;
  double ij(int j, const Vec& v) const;
  void candidate_sectors(const Vec& v, std::vector<int>& out) const;

 private:
  DeflationParams p_;
  BumpFamily fam_;
  double t_;
  double amp_;
  NormPlan plan_;
  // direction buckets for sector lookup
  int nbucket_ = 0;
  std::vector<std::vector<int>> buckets_;
  double bucket_of(const Vec& v, int& b0, int& b1) const;
};

PhaseField build_fb(const DeflationParams& p, const BumpFamily& fam, double t);

// ---------------------------------------------------------------------------
// beta: the damping integral of the pointwise bound
// ---------------------------------------------------------------------------

/**
 * beta(t,x,v) = ||b||_{L^1(S^{d-1})} int_0^t int f_b(t0,x,u) |u-v|^gamma du dt0,
 * nonpositive for t <= 0.  The angular mass of the cutoff kernel is included
 * so that d/dt f_r = -Q^-(f_r, f_b) holds exactly for f_r = A exp(-beta) chi chi
 * (with the default b(c) = |c| the factor is 4 in d = 2).
 * The u-integral is a per-sector tensor Gauss-Legendre rule on the I_j
 * support boxes (the integrand is smooth there since |u-v| ~ N2 on the core),
 * the t0-integral a trapezoid over j_schedule intervals.  A batched path
 * evaluates beta on an (x-lattice) x (v-set) x (time-mesh) product by
 * splitting the node sum into an x-dependent and a v-dependent factor; on the
 * core the split is exact because chi(P_j(x - u t0)/N2) = 1 there.
 */
class BetaEvaluator {
 public:
  BetaEvaluator(const DeflationParams& p, const BumpFamily& fam);

  double pointwise(double t, const Vec& x, const Vec& v) const;
  Vec grad_pointwise(double t, const Vec& x, const Vec& v) const;

  /// the damping rate -d beta/dt = ||b||_1 int f_b(t,x,u)|u-v|^gamma du with
  /// the same sector quadrature as beta itself
  double rate(double t, const Vec& x, const Vec& v) const;

  // beta on times x xs x vs; times must be nonpositive and within [T*, 0].
  // result[it][ix][iv]
  std::vector<double> batch(const std::vector<double>& times, const std::vector<Vec>& xs,
                            const std::vector<Vec>& vs) const;

  const DeflationParams& params() const { return p_; }

 private:
  DeflationParams p_;
  BumpFamily fam_;
  double bl1_ = 1.0;  // angular mass of the cutoff kernel
  // per-sector tensor rule in the rotated frame
  std::vector<double> along_x_, along_w_;           // offsets a_i about N2
  std::vector<Vec> perp_off_;                       // perpendicular offsets p_l (local frame coords)
  std::vector<double> perp_w_;
  std::vector<double> along_chi_, perp_chi_;        // I_j factors at nodes
  template <class F>
  double accumulate(double t, const Vec& x, const Vec& v, F&& kfac) const;
};

// ---------------------------------------------------------------------------
// f_r: damped core
// ---------------------------------------------------------------------------

enum class FrMode { Exact, Table };

/**
 * f_r(t,x,v) = M^{d/2-s} N1^{d/2} exp[-beta(t,x,v)] chi(M x) chi(N1 v).
 * Exact mode quadratures beta lazily with memoization keyed on the query
 * point; Table mode precomputes beta on a product lattice over the support
 * and interpolates (the fast path for norm experiments).
 */
class FrCore : public AnalyticCore {
 public:
  FrCore(const DeflationParams& p, const BumpFamily& fam, double t,
         FrMode mode = FrMode::Exact, std::shared_ptr<const BetaEvaluator> beta = nullptr);
  int dim() const override { return p_.d; }
  SupportBox support() const override;
  double eval_raw(const Vec& x, const Vec& v) const override;
  Vec grad_x_raw(const Vec& x, const Vec& v) const override;
  std::vector<RotBox> v_boxes() const override;
  const NormPlan* norm_plan() const override { return &plan_; }

  double time() const { return t_; }
  double beta_at(const Vec& x, const Vec& v) const;
  Vec beta_grad_at(const Vec& x, const Vec& v) const;
  const BetaEvaluator& beta() const { return *beta_; }

 private:
  DeflationParams p_;
  double t_;
  FrMode mode_;
  std::shared_ptr<const BetaEvaluator> beta_;
  double amp_;
  NormPlan plan_;
  // table mode storage
  int tnx_ = 0, tnv_ = 0;
  double txh_ = 0, tvh_ = 0;  // lattice half-widths
  std::vector<double> table_;  // [v-lattice][x-lattice]
  mutable std::shared_ptr<void> memo_;  // exact-mode cache
  double table_beta(const Vec& x, const Vec& v) const;
};

PhaseField build_fr(const DeflationParams& p, const BumpFamily& fam, double t,
                    FrMode mode = FrMode::Exact,
                    std::shared_ptr<const BetaEvaluator> beta = nullptr);

// ---------------------------------------------------------------------------
// f_a = f_r + f_b and the error term
// ---------------------------------------------------------------------------

class FaCore : public AnalyticCore {
 public:
  FaCore(std::shared_ptr<const FrCore> fr, std::shared_ptr<const FbCore> fb);
  int dim() const override { return fr_->dim(); }
  SupportBox support() const override;
  double eval_raw(const Vec& x, const Vec& v) const override;
  Vec grad_x_raw(const Vec& x, const Vec& v) const override;
  std::vector<RotBox> v_boxes() const override;
  const NormPlan* norm_plan() const override { return &plan_; }
  const FrCore& fr() const { return *fr_; }
  const FbCore& fb() const { return *fb_; }

 private:
  std::shared_ptr<const FrCore> fr_;
  std::shared_ptr<const FbCore> fb_;
  NormPlan plan_;
};

PhaseField build_fa(const DeflationParams& p, const BumpFamily& fam, double t,
                    FrMode mode = FrMode::Exact);

/**
 * F_err = v.grad_x f_r - Q+(f_r,f_b) -+ Q+-(f_b,f_r) -+ Q+-(f_r,f_r)
 *         -+ Q+-(f_b,f_b)
 * assembled on a dense grid: fields sampled, x-derivative spectral, collision
 * terms by direct quadrature.  force_fr_zero drops every f_r-term (then
 * F_err = -+ Q+-(f_b,f_b)).
 */
DenseField assemble_f_err(const DeflationParams& p, const BumpFamily& fam, double t,
                          const Grid& grid, const SphereQuadrature& sq,
                          bool force_fr_zero = false);

/// pointwise F_err through the analytic route (Carleman gain quadrature)
struct FerrContext {
  DeflationParams p;
  BumpFamily fam;
  CollisionKernel kernel;
  CarlemanRule gain_rule;
  int loss_nodes = 8;
  double bl1 = 0.0;
  std::shared_ptr<const BetaEvaluator> beta;
  std::shared_ptr<const FbCore> fb_at_t;   // caches for one evaluation time
  std::shared_ptr<const FrCore> fr_at_t;
  double t = 0.0;

  void set_time(double t_new, FrMode mode = FrMode::Table);
};

FerrContext make_ferr_context(const DeflationParams& p, const BumpFamily& fam);
double ferr_point(const FerrContext& ctx, const Vec& x, const Vec& v);

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct DeflationReport {
  std::vector<double> times;
  std::vector<double> norm_fa, norm_fr, norm_fb;
  double ratio = 0.0;  // ||f_a(T*)|| / ||f_a(0)||
};

DeflationReport deflation_experiment(const DeflationParams& p, const BumpFamily& fam,
                                     const NormSpec& norm, int n_times);

}  // namespace kdl
