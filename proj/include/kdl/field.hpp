#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kdl/common.hpp"
#include "kdl/fft.hpp"
#include "kdl/grid.hpp"

namespace kdl {

// ---------------------------------------------------------------------------
// representations
// ---------------------------------------------------------------------------

/// Axis-aligned bounding box in phase space.
struct SupportBox {
  Vec xlo{0, 0, 0}, xhi{0, 0, 0};
  Vec vlo{0, 0, 0}, vhi{0, 0, 0};
};

/// Rotated rectangular box (used for sector supports and ray slicing).
struct RotBox {
  Vec center{0, 0, 0};
  Vec axes[3];       // orthonormal frame
  double half[3]{};  // half-lengths along axes
};

/// Rotated rectangular x-sampling lattice attached to one velocity node of a
/// quadrature plan.
struct XLatticeSpec {
  Vec origin{0, 0, 0};
  Vec axes[3];
  double half[3]{};
  int n[3]{1, 1, 1};
};

struct VNode {
  Vec v{0, 0, 0};
  double w = 0.0;
};

/// One chart of a tensor-structured quadrature plan: velocity nodes with
/// weights, and for each node an x-lattice on which x-norms are evaluated.
struct NormChart {
  std::vector<VNode> vnodes;
  std::function<XLatticeSpec(const Vec&)> xbox;
};

struct NormPlan {
  std::vector<NormChart> charts;
};

struct DenseField {
  Grid grid;
  std::vector<double> a;  // x-major: idx = fx * size_v + fv

  DenseField() = default;
  explicit DenseField(const Grid& g) : grid(g), a(g.total(), 0.0) { g.validate(); }

  double& at(long long fx, long long fv) { return a[fx * grid.size_v() + fv]; }
  double at(long long fx, long long fv) const { return a[fx * grid.size_v() + fv]; }
};

/**
 * Lazy analytic representation.  eval_raw is called only inside the declared
 * support box; the public evaluation clamps to zero outside, which is also
 * the contract tests sample.  Fields that know their velocity support as
 * rotated boxes expose them for ray-sliced collision quadrature, and fields
 * built for norm experiments carry a tensor quadrature plan.
 */
class AnalyticCore {
 public:
  virtual ~AnalyticCore() = default;
  virtual int dim() const = 0;
  virtual SupportBox support() const = 0;
  virtual double eval_raw(const Vec& x, const Vec& v) const = 0;

  virtual Vec grad_x_raw(const Vec& x, const Vec& v) const {
    // centered differences at a scale tied to the support box
    const SupportBox sb = support();
    Vec g{0, 0, 0};
    for (int k = 0; k < dim(); ++k) {
      double h = 1e-5 * std::max(1.0, sb.xhi[k] - sb.xlo[k]);
      Vec xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      g[k] = (eval_raw(xp, v) - eval_raw(xm, v)) / (2.0 * h);
    }
    return g;
  }

  virtual std::vector<RotBox> v_boxes() const { return {}; }
  virtual const NormPlan* norm_plan() const { return nullptr; }
};

class PhaseField {
 public:
  PhaseField() = default;
  explicit PhaseField(DenseField d) : dense_(std::make_shared<DenseField>(std::move(d))) {}
  explicit PhaseField(std::shared_ptr<const AnalyticCore> a) : core_(std::move(a)) {}

  bool is_dense() const { return static_cast<bool>(dense_); }
  bool is_analytic() const { return static_cast<bool>(core_); }

  const DenseField& dense() const {
    if (!dense_) throw validation_error("PhaseField: dense representation required");
    return *dense_;
  }
  const AnalyticCore& core() const {
    if (!core_) throw validation_error("PhaseField: analytic representation required");
    return *core_;
  }
  std::shared_ptr<const AnalyticCore> core_ptr() const { return core_; }

  int dim() const { return dense_ ? dense_->grid.d : core_->dim(); }

  /// pointwise evaluation; analytic fields vanish outside their support box
  double eval(const Vec& x, const Vec& v) const;

 private:
  std::shared_ptr<DenseField> dense_;
  std::shared_ptr<const AnalyticCore> core_;
};

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

enum Axes : unsigned { AXIS_X = 1u, AXIS_V = 2u, AXIS_T = 4u };

/**
 * DFT data for a phase-space field.  Layout matches the dense storage; the
 * `axes` mask records which blocks hold mode coefficients.  Mode i of an
 * x-axis carries frequency 2*pi*k/(2*Lx) with k the signed index, same with
 * Lv on v-axes.
 */
struct SpectralField {
  Grid grid;
  unsigned axes = 0;
  std::vector<cplx> a;

  double kx(int i) const { return freq_phys(i, grid.nx, grid.Lx); }
  double kv(int i) const { return freq_phys(i, grid.nv, grid.Lv); }
};

SpectralField transform_forward(const PhaseField& f, unsigned axes);
PhaseField transform_inverse(const SpectralField& s);

/**
 * Applies symbol(kx, kv) as a Fourier multiplier on the chosen axis blocks
 * and returns the (real) field.  Untransformed block frequencies are passed
 * as zero vectors.  A symbol that is not finite on some grid frequency
 * raises a validation error.
 */
PhaseField fourier_multiplier(const PhaseField& f, unsigned axes,
                              const std::function<double(const Vec&, const Vec&)>& symbol);

/// multilinear interpolation (dense) / evaluator call (analytic); zero
/// outside the dense box
double interpolate(const PhaseField& f, const Vec& x, const Vec& v);

// dense-kernel form used in hot loops: zero-padded multilinear stencil on one
// velocity slice
double interp_v_slice(const double* slice, const Grid& g, const Vec& v);

// ---------------------------------------------------------------------------
// serialization: flat binary container, magic "KDF1", header of little-endian
// 64-bit values d, n_x, n_v, L_x, L_v, then 64-bit float values x-major.
// ---------------------------------------------------------------------------

void save_kdf1(const std::string& path, const DenseField& f);
DenseField load_kdf1(const std::string& path);

// sampling helper: materialize any field on a grid
DenseField sample_to_grid(const PhaseField& f, const Grid& g);

}  // namespace kdl
