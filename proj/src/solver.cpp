#include "kdl/solver.hpp"

#include <algorithm>
#include <cmath>

#include "kdl/cutoff.hpp"
#include "kdl/fft.hpp"
#include "kdl/norms.hpp"
#include "kdl/par.hpp"

namespace kdl {

// ---------------------------------------------------------------------------
// free transport
// ---------------------------------------------------------------------------

namespace {

class ShiftedCore : public AnalyticCore {
 public:
  ShiftedCore(std::shared_ptr<const AnalyticCore> base, double t)
      : base_(std::move(base)), t_(t) {}
  int dim() const override { return base_->dim(); }
  SupportBox support() const override {
    SupportBox sb = base_->support();
    // x-support grows by |t| * max |v| over the v-support
    for (int k = 0; k < dim(); ++k) {
      const double vmax = std::max(std::abs(sb.vlo[k]), std::abs(sb.vhi[k]));
      sb.xlo[k] -= std::abs(t_) * vmax;
      sb.xhi[k] += std::abs(t_) * vmax;
    }
    return sb;
  }
  double eval_raw(const Vec& x, const Vec& v) const override {
    return base_->eval_raw(x - t_ * v, v);
  }
  Vec grad_x_raw(const Vec& x, const Vec& v) const override {
    return base_->grad_x_raw(x - t_ * v, v);
  }
  std::vector<RotBox> v_boxes() const override { return base_->v_boxes(); }

 private:
  std::shared_ptr<const AnalyticCore> base_;
  double t_;
};

// distance from the numerical x-support to the box edge, and the largest
// |v_a t| over occupied velocity slices; returns false for periodic data
bool dense_shift_budget(const DenseField& df, double t, double& margin,
                        double& shift) {
  const Grid& g = df.grid;
  const long long sx = g.size_x(), sv = g.size_v();
  double amax = 0.0;
  for (double v : df.a) amax = std::max(amax, std::abs(v));
  if (amax == 0.0) return false;
  const double tol = 1e-14 * amax;
  int lo[3], hi[3];
  for (int k = 0; k < g.d; ++k) {
    lo[k] = g.nx;
    hi[k] = -1;
  }
  double vshift = 0.0;
  for (long long fx = 0; fx < sx; ++fx) {
    int idx[3] = {0, 0, 0};
    g.unflat(fx, g.nx, idx);
    const double* row = df.a.data() + fx * sv;
    bool occupied = false;
    for (long long fv = 0; fv < sv; ++fv)
      if (std::abs(row[fv]) > tol) {
        occupied = true;
        const Vec v = g.v_point(fv);
        for (int k = 0; k < g.d; ++k)
          vshift = std::max(vshift, std::abs(v[k] * t));
      }
    if (occupied)
      for (int k = 0; k < g.d; ++k) {
        lo[k] = std::min(lo[k], idx[k]);
        hi[k] = std::max(hi[k], idx[k]);
      }
  }
  margin = 1e300;
  for (int k = 0; k < g.d; ++k) {
    if (lo[k] <= 0 || hi[k] >= g.nx - 1) return false;  // fills the box: periodic
    margin = std::min(margin, std::min(lo[k], g.nx - 1 - hi[k]) * g.hx());
  }
  shift = vshift;
  return true;
}

}  // namespace

PhaseField free_transport(const PhaseField& f, double t) {
  if (f.is_analytic())
    return PhaseField(std::make_shared<ShiftedCore>(f.core_ptr(), t));
  const DenseField& df = f.dense();
  if (t == 0.0) return PhaseField(df);
  const Grid& g = df.grid;
  double margin = 0.0, shift = 0.0;
  if (dense_shift_budget(df, t, margin, shift) && shift > margin)
    throw validation_error("free_transport: shift exceeds the support margin (wraparound)");

  SpectralField s = transform_forward(f, AXIS_X);
  const long long sx = g.size_x(), sv = g.size_v();
  std::vector<double> kx(g.nx);
  for (int i = 0; i < g.nx; ++i) kx[i] = s.kx(i);
  par::parallel_for(0, sx, [&](long long fx) {
    int idx[3] = {0, 0, 0};
    g.unflat(fx, g.nx, idx);
    Vec kvec{0, 0, 0};
    for (int k = 0; k < g.d; ++k) kvec[k] = kx[idx[k]];
    cplx* row = s.a.data() + fx * sv;
    for (long long fv = 0; fv < sv; ++fv) {
      const double ph = -t * dot(kvec, g.v_point(fv));
      row[fv] *= cplx(std::cos(ph), std::sin(ph));
    }
  });
  return transform_inverse(s);
}

// ---------------------------------------------------------------------------
// duhamel
// ---------------------------------------------------------------------------

PhaseField duhamel(const Trajectory& source, double t_lo, double t_hi) {
  source.validate();
  const double eps = 1e-9 * std::max(1.0, std::abs(source.times.back()));
  if (t_lo < source.times.front() - eps || t_hi > source.times.back() + eps ||
      t_lo > t_hi)
    throw validation_error("duhamel: [t_lo, t_hi] outside the trajectory span");
  int i_lo = -1, i_hi = -1;
  for (size_t i = 0; i < source.times.size(); ++i) {
    if (std::abs(source.times[i] - t_lo) < eps) i_lo = static_cast<int>(i);
    if (std::abs(source.times[i] - t_hi) < eps) i_hi = static_cast<int>(i);
  }
  if (i_lo < 0 || i_hi < 0)
    throw validation_error("duhamel: endpoints must lie on the time mesh");

  DenseField acc(source.grid);
  if (i_lo == i_hi) return PhaseField(std::move(acc));
  const double dt = source.dt();
  for (int i = i_lo; i <= i_hi; ++i) {
    const double w = (i == i_lo || i == i_hi) ? 0.5 * dt : dt;
    PhaseField moved =
        free_transport(PhaseField(source.fields[i]), t_hi - source.times[i]);
    const DenseField& md = moved.dense();
    for (size_t k = 0; k < acc.a.size(); ++k) acc.a[k] += w * md.a[k];
  }
  return PhaseField(std::move(acc));
}

// ---------------------------------------------------------------------------
// f_r damping ODE
// ---------------------------------------------------------------------------

std::pair<Trajectory, Trajectory> fr_ode_evolve(const DeflationParams& p_in,
                                                const BumpFamily& fam,
                                                const std::vector<double>& times,
                                                const Grid& grid) {
  DeflationParams p = p_in;
  p.finalize();
  p.validate();
  grid.validate();
  if (times.size() < 2) throw validation_error("fr_ode_evolve: need >= 2 times");
  for (double t : times)
    if (t > 1e-12 || t < p.T_star - 1e-12)
      throw validation_error("fr_ode_evolve: times must lie in [T*, 0]");

  auto beta = std::make_shared<BetaEvaluator>(p, fam);
  const int nt = static_cast<int>(times.size());

  // closed-form route
  Trajectory closed;
  closed.grid = grid;
  closed.times = times;
  for (double t : times) {
    auto fr = std::make_shared<FrCore>(p, fam, std::min(t, 0.0), FrMode::Exact, beta);
    closed.fields.push_back(
        sample_to_grid(PhaseField(std::static_pointer_cast<const AnalyticCore>(fr)), grid));
  }

  // exponential-integrator route, anchored at t = 0 and run backward
  // d/dt f = -rate(t) f  =>  f(t_k) = f(t_{k+1}) exp(+int_{t_k}^{t_{k+1}} rate)
  const long long sx = grid.size_x(), sv = grid.size_v();
  Trajectory ode = closed;  // copy mesh/grid; fields overwritten
  // initial bump at t = 0
  DenseField f0(grid);
  const double amp = p.amplitude_fr();
  std::vector<std::pair<long long, long long>> core_nodes;
  for (long long fx = 0; fx < sx; ++fx) {
    const Vec x = grid.x_point(fx);
    const double cx = smooth_cutoff_r2(p.M * p.M * norm2(x));
    if (cx == 0.0) continue;
    for (long long fv = 0; fv < sv; ++fv) {
      const Vec v = grid.v_point(fv);
      const double cv = smooth_cutoff_r2(p.N1 * p.N1 * norm2(v));
      if (cv == 0.0) continue;
      f0.at(fx, fv) = amp * cx * cv;
      core_nodes.push_back({fx, fv});
    }
  }

  // damping rate through the beta quadrature itself, so the exponential
  // integrator is exact given beta's rule (the mesh is extended by t = 0,
  // where the ODE is anchored)
  std::vector<double> ext(times);
  if (std::abs(ext.back()) > 1e-14) ext.push_back(0.0);
  const int ne = static_cast<int>(ext.size());
  std::vector<std::vector<double>> rate(ne, std::vector<double>(core_nodes.size(), 0.0));
  for (int it = 0; it < ne; ++it) {
    par::parallel_for(0, static_cast<long long>(core_nodes.size()), [&](long long i) {
      const Vec x = grid.x_point(core_nodes[i].first);
      const Vec v = grid.v_point(core_nodes[i].second);
      rate[it][i] = beta->rate(ext[it], x, v);
    });
  }

  // march backward from the t = 0 anchor
  std::vector<DenseField> fields(ne, DenseField(grid));
  fields[ne - 1] = f0;
  for (int it = ne - 2; it >= 0; --it) {
    const double dt = ext[it + 1] - ext[it];
    fields[it] = fields[it + 1];
    for (size_t i = 0; i < core_nodes.size(); ++i) {
      const double ex = 0.5 * dt * (rate[it][i] + rate[it + 1][i]);
      fields[it].at(core_nodes[i].first, core_nodes[i].second) *= std::exp(ex);
    }
  }
  fields.resize(nt);  // drop the auxiliary anchor if it was appended
  ode.fields = std::move(fields);
  return {std::move(ode), std::move(closed)};
}

// ---------------------------------------------------------------------------
// Picard local solve
// ---------------------------------------------------------------------------

namespace {

double l2_distance(const DenseField& a, const DenseField& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) {
    const double d = a.a[i] - b.a[i];
    s += d * d;
  }
  return std::sqrt(s * a.grid.cell_x() * a.grid.cell_v());
}

}  // namespace

PicardResult picard_local_solve(const PhaseField& f0, const CollisionKernel& k,
                                const SphereQuadrature& sq, double T, int n_steps,
                                double tol, int max_iter) {
  const DenseField& f0d = f0.dense();
  const Grid& g = f0d.grid;
  if (n_steps < 1) throw validation_error("picard_local_solve: n_steps >= 1");
  CollisionTables tab(g, k, sq);
  const long long sx = g.size_x(), sv = g.size_v();

  Trajectory traj;
  traj.grid = g;
  for (int i = 0; i <= n_steps; ++i) traj.times.push_back(T * i / n_steps);
  std::vector<DenseField> free(n_steps + 1, DenseField(g));
  for (int i = 0; i <= n_steps; ++i)
    free[i] = free_transport(f0, traj.times[i]).dense();
  traj.fields = free;

  std::vector<double> history;
  for (int m = 0; m < max_iter; ++m) {
    // Q(f,f) at each mesh node
    std::vector<DenseField> qf(n_steps + 1, DenseField(g));
    for (int i = 0; i <= n_steps; ++i) {
      par::parallel_for(0, sx, [&](long long fx) {
        std::vector<double> qp(sv), qm(sv);
        const double* s = traj.fields[i].a.data() + fx * sv;
        tab.gain_slice(s, s, qp.data());
        tab.loss_slice(s, s, qm.data());
        double* out = qf[i].a.data() + fx * sv;
        for (long long fv = 0; fv < sv; ++fv) out[fv] = qp[fv] - qm[fv];
      });
    }
    // Duhamel update
    std::vector<DenseField> next(n_steps + 1, DenseField(g));
    next[0] = f0d;
    const double dt = T / n_steps;
    for (int i = 1; i <= n_steps; ++i) {
      DenseField acc = free[i];
      for (int j = 0; j <= i; ++j) {
        const double w = (j == 0 || j == i) ? 0.5 * dt : dt;
        PhaseField moved =
            free_transport(PhaseField(qf[j]), traj.times[i] - traj.times[j]);
        const DenseField& md = moved.dense();
        for (size_t idx = 0; idx < acc.a.size(); ++idx) acc.a[idx] += w * md.a[idx];
      }
      next[i] = std::move(acc);
    }
    double dist = 0.0;
    for (int i = 0; i <= n_steps; ++i)
      dist = std::max(dist, l2_distance(next[i], traj.fields[i]));
    history.push_back(dist);
    traj.fields = std::move(next);
    if (dist <= tol) break;
    const size_t h = history.size();
    if (h >= 3 && history[h - 1] > history[h - 2] && history[h - 2] > history[h - 3])
      throw divergence_error("picard_local_solve: non-contraction", history);
  }
  return {std::move(traj), std::move(history)};
}

// ---------------------------------------------------------------------------
// correction-term solve
// ---------------------------------------------------------------------------

CorrectionResult solve_correction(const DeflationParams& p_in, const BumpFamily& fam,
                                  const Grid& grid, const SphereQuadrature& sq,
                                  const CorrectionOptions& opt) {
  DeflationParams p = p_in;
  p.finalize();
  p.validate();
  grid.validate();
  CollisionKernel kern;
  kern.gamma = p.gamma;
  kern.validate(p.d);
  CollisionTables tab(grid, kern, sq);
  const long long sx = grid.size_x(), sv = grid.size_v();

  const int nsub = opt.n_subintervals, m = opt.nodes_per_sub;
  const int ntot = nsub * m + 1;
  // descending global mesh 0 = tau_0 > ... > tau_{ntot-1} = T*
  std::vector<double> mesh(ntot);
  for (int i = 0; i < ntot; ++i) mesh[i] = p.T_star * i / (ntot - 1.0);

  // frozen f_a and pointwise F_err on the grid per mesh node
  FerrContext ctx = make_ferr_context(p, fam);
  std::vector<DenseField> fa(ntot, DenseField(grid)), ferr(ntot, DenseField(grid));
  for (int i = 0; i < ntot; ++i) {
    ctx.set_time(mesh[i], opt.fr_mode);
    const PhaseField frf(std::static_pointer_cast<const AnalyticCore>(ctx.fr_at_t));
    const PhaseField fbf(std::static_pointer_cast<const AnalyticCore>(ctx.fb_at_t));
    par::parallel_for(0, sx, [&](long long fx) {
      const Vec x = grid.x_point(fx);
      for (long long fv = 0; fv < sv; ++fv) {
        const Vec v = grid.v_point(fv);
        fa[i].at(fx, fv) = frf.eval(x, v) + fbf.eval(x, v);
        if (!opt.force_ferr_zero) ferr[i].at(fx, fv) = ferr_point(ctx, x, v);
      }
    });
  }

  auto apply_G = [&](const DenseField& fc, int node) {
    // G = Q(f_c, f_a + f_c) + Q(f_a, f_c) - F_err, Q = gain - loss
    DenseField out(grid);
    par::parallel_for(0, sx, [&](long long fx) {
      std::vector<double> sum_af(sv), qp(sv), qm(sv);
      const double* fcs = fc.a.data() + fx * sv;
      const double* fas = fa[node].a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) sum_af[fv] = fas[fv] + fcs[fv];
      double* o = out.a.data() + fx * sv;
      tab.gain_slice(fcs, sum_af.data(), qp.data());
      tab.loss_slice(fcs, sum_af.data(), qm.data());
      for (long long fv = 0; fv < sv; ++fv) o[fv] = qp[fv] - qm[fv];
      tab.gain_slice(fas, fcs, qp.data());
      tab.loss_slice(fas, fcs, qm.data());
      const double* fe = ferr[node].a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) o[fv] += qp[fv] - qm[fv] - fe[fv];
    });
    return out;
  };

  const ZParams zp{p.M, p.N2, p.gamma, p.r0};
  std::vector<DenseField> fc(ntot, DenseField(grid));  // f_c(0) = 0
  std::vector<double> z_history;

  for (int j = 0; j < nsub; ++j) {
    const int base = j * m;  // mesh index of T_j
    // initialize the subinterval by transporting the left state
    for (int i = 1; i <= m; ++i)
      fc[base + i] = free_transport(PhaseField(fc[base]), mesh[base + i] - mesh[base]).dense();

    double prev = -1.0, prev2 = -1.0;
    for (int it = 0; it < opt.max_iter; ++it) {
      std::vector<DenseField> G(m + 1, DenseField(grid));
      for (int i = 0; i <= m; ++i) G[i] = apply_G(fc[base + i], base + i);
      double dist = 0.0, scale = 0.0;
      for (int i = 1; i <= m; ++i) {
        DenseField acc =
            free_transport(PhaseField(fc[base]), mesh[base + i] - mesh[base]).dense();
        const double dt = mesh[base + 1] - mesh[base];  // negative
        for (int l = 0; l <= i; ++l) {
          const double w = (l == 0 || l == i) ? 0.5 * dt : dt;
          PhaseField moved =
              free_transport(PhaseField(G[l]), mesh[base + i] - mesh[base + l]);
          const DenseField& md = moved.dense();
          for (size_t idx = 0; idx < acc.a.size(); ++idx) acc.a[idx] += w * md.a[idx];
        }
        dist = std::max(dist, l2_distance(acc, fc[base + i]));
        double nn = 0.0;
        for (double vv : acc.a) nn += vv * vv;
        scale = std::max(scale, std::sqrt(nn * grid.cell_x() * grid.cell_v()));
        fc[base + i] = std::move(acc);
      }
      if (dist <= opt.tol * std::max(scale, 1e-30)) break;
      if (prev2 >= 0.0 && dist > prev && prev > prev2)
        throw divergence_error("solve_correction: non-contraction", z_history, j);
      prev2 = prev;
      prev = dist;
    }
    double zmax = 0.0;
    for (int i = 0; i <= m; ++i)
      zmax = std::max(zmax, z_norm(PhaseField(fc[base + i]), zp));
    z_history.push_back(zmax);
  }

  CorrectionResult res;
  res.traj.grid = grid;
  for (int i = ntot - 1; i >= 0; --i) {
    res.traj.times.push_back(mesh[i]);
    res.traj.fields.push_back(fc[i]);
  }
  res.z_history = std::move(z_history);
  return res;
}

}  // namespace kdl
