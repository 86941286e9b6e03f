#include "kdl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kdl/cutoff.hpp"
#include "kdl/par.hpp"
#include "kdl/rng.hpp"

namespace kdl {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw validation_error("cannot write " + path);
  os << text;
}

}  // namespace

// ---------------------------------------------------------------------------
// collision check
// ---------------------------------------------------------------------------

CollisionCheckResult collision_check_experiment(int nv_balance, int n_pairs,
                                                std::uint64_t seed) {
  CollisionCheckResult res;
  CollisionKernel kern;  // gamma = -1/2, b = |c|
  kern.validate(2);

  // detailed balance on the grid Maxwellian (one x-slice; the Maxwellian is
  // velocity-only)
  {
    Grid g;
    g.d = 2;
    g.nv = nv_balance;
    g.Lv = 3.2;
    g.nx = 8;
    g.Lx = 1.0;
    CollisionTables tab(g, kern, sphere_quadrature(2, 32));
    const long long sv = g.size_v();
    std::vector<double> mx(sv);
    for (long long i = 0; i < sv; ++i) mx[i] = std::exp(-norm2(g.v_point(i)));
    std::vector<double> qp = q_gain_slice(tab, mx, mx);
    std::vector<double> qm = q_loss_slice(tab, mx, mx);
    double dmax = 0.0, pmax = 0.0;
    for (long long i = 0; i < sv; ++i) {
      dmax = std::max(dmax, std::abs(qp[i] - qm[i]));
      pmax = std::max(pmax, std::abs(qp[i]));
    }
    res.detailed_balance = dmax / pmax;
  }

  // direct vs spectral gain on random smooth pairs
  {
    Grid g;
    g.d = 2;
    g.nv = 32;
    g.Lv = 4.0;
    g.nx = 8;
    g.Lx = 1.0;
    SphereQuadrature sq = sphere_quadrature(2, 16);
    CollisionTables tab(g, kern, sq);
    SpectralPrep prep = make_spectral_prep(2, kern);
    EtaRule eta;
    const long long sv = g.size_v();
    for (int pair = 0; pair < n_pairs; ++pair) {
      Rng rng(seed, 1000 + pair);
      auto smooth = [&](std::vector<double>& f) {
        f.assign(sv, 0.0);
        const int nc = rng.uniform_int(2, 3);
        for (int c = 0; c < nc; ++c) {
          Vec ctr = vec2(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
          const double w = rng.uniform(0.5, 0.9);
          const double a = rng.uniform(0.3, 1.0);
          for (long long i = 0; i < sv; ++i) {
            const Vec v = g.v_point(i);
            f[i] += a * std::exp(-norm2(v - ctr) / (2.0 * w * w));
          }
        }
      };
      std::vector<double> f, h;
      smooth(f);
      smooth(h);
      std::vector<double> qd = q_gain_slice(tab, f, h);
      std::vector<double> qs = q_gain_spectral_slice(f, h, g, kern, sq, eta, prep);
      double num = 0.0, den = 0.0;
      for (long long i = 0; i < sv; ++i) {
        num += (qd[i] - qs[i]) * (qd[i] - qs[i]);
        den += qd[i] * qd[i];
      }
      res.spectral_gaps.push_back(std::sqrt(num / den));
    }
  }

  // conservation residual trend over velocity resolutions
  for (int nv : {16, 32, 64}) {
    Grid g;
    g.d = 2;
    g.nv = nv;
    g.Lv = 4.0;
    g.nx = 8;
    g.Lx = 1.0;
    DenseField f(g);
    const long long sx = g.size_x(), sv = g.size_v();
    for (long long fx = 0; fx < sx; ++fx) {
      const double mod = 1.0 + 0.3 * std::cos(pi * g.x_point(fx)[0] / g.Lx);
      for (long long fv = 0; fv < sv; ++fv)
        f.at(fx, fv) = mod * std::exp(-norm2(g.v_point(fv)));
    }
    InvariantResiduals r =
        collision_invariants(PhaseField(f), kern, g, sphere_quadrature(2, 32));
    res.conservation_nv.push_back(nv);
    res.conservation_mass.push_back(r.mass);
  }
  return res;
}

// ---------------------------------------------------------------------------
// beta bracket
// ---------------------------------------------------------------------------

BetaBracket beta_bracket_experiment(const DeflationParams& p_in, const BumpFamily& fam,
                                    int n_samples, std::uint64_t seed) {
  DeflationParams p = p_in;
  p.finalize();
  p.validate();
  BetaEvaluator beta(p, fam);
  const double scale = std::pow(p.M, (p.d - 1) / 2.0 - p.s);
  BetaBracket br;
  br.c1 = 1e300;
  br.c2 = 0.0;
  std::vector<double> ratios(n_samples, 0.0);
  par::parallel_for(0, n_samples, [&](long long i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    const double t = p.T_star * rng.uniform(0.2, 1.0);
    Vec x{0, 0, 0}, v{0, 0, 0};
    for (int k = 0; k < p.d; ++k) {
      x[k] = rng.uniform(-1.0, 1.0) / p.M;
      v[k] = rng.uniform(-1.0, 1.0) / p.N1;
    }
    // |x| <= 1/M, |v| <= 1/N1 ball
    const double nx = norm(x), nv = norm(v);
    if (nx > 1.0 / p.M) x = (1.0 / (p.M * nx)) * x;
    if (nv > 1.0 / p.N1) v = (1.0 / (p.N1 * nv)) * v;
    ratios[i] = std::abs(beta.pointwise(t, x, v)) / (std::abs(t) * scale);
  });
  for (double r : ratios) {
    br.c1 = std::min(br.c1, r);
    br.c2 = std::max(br.c2, r);
  }
  return br;
}

// ---------------------------------------------------------------------------
// Duhamel F_err Z-norm instrument
// ---------------------------------------------------------------------------

namespace {

struct DuhamelFerr {
  std::vector<FerrContext> ctxs;
  std::vector<double> w, t0;
  int d = 2;
  double fd_h = 1e-3;

  double eval(const Vec& x, const Vec& v) const {
    double s = 0.0;
    for (size_t k = 0; k < ctxs.size(); ++k)
      s += w[k] * ferr_point(ctxs[k], x + t0[k] * v, v);
    return s;
  }
  double grad_mag(const Vec& x, const Vec& v) const {
    double g2 = 0.0;
    for (int a = 0; a < d; ++a) {
      Vec xp = x, xm = x;
      xp[a] += fd_h;
      xm[a] -= fd_h;
      const double gd = (eval(xp, v) - eval(xm, v)) / (2.0 * fd_h);
      g2 += gd * gd;
    }
    return std::sqrt(g2);
  }
};

struct Lattice2 {
  Vec origin{0, 0, 0};
  Vec e0, e1;
  double h0 = 0, h1 = 0;  // half-lengths
  int n0 = 1, n1 = 1;
  double cell() const { return (2.0 * h0 / n0) * (2.0 * h1 / n1); }
  Vec point(int i, int j) const {
    return origin + (-h0 + (i + 0.5) * 2.0 * h0 / n0) * e0 +
           (-h1 + (j + 0.5) * 2.0 * h1 / n1) * e1;
  }
};

bool inside_patch(const Lattice2& patch, const Vec& x) {
  const Vec q = x - patch.origin;
  return std::abs(dot(q, patch.e0)) <= patch.h0 && std::abs(dot(q, patch.e1)) <= patch.h1;
}

struct VChart {
  std::vector<VNode> vnodes;
  bool with_strip = false;
};

}  // namespace

double duhamel_ferr_znorm(const DeflationParams& p_in, const BumpFamily& fam,
                          const DuhamelFerrOptions& opt) {
  DeflationParams p = p_in;
  p.finalize();
  p.validate();
  if (p.d != 2)
    throw validation_error("duhamel_ferr_znorm: instrument implemented for d = 2");

  DuhamelFerr D;
  D.d = 2;
  D.fd_h = 0.02 / p.M;
  {
    std::vector<double> tn, tw;
    gl_on_interval(opt.n_t0, p.T_star, 0.0, tn, tw);
    FerrContext base = make_ferr_context(p, fam);
    for (int k = 0; k < opt.n_t0; ++k) {
      FerrContext c = base;
      c.set_time(tn[k]);
      D.ctxs.push_back(std::move(c));
      D.t0.push_back(tn[k]);
      D.w.push_back(tw[k]);
    }
  }

  // velocity charts: polar panels; all but the core use one angular period
  // of the J-fold symmetry with weight J
  std::vector<VChart> charts;
  auto polar_chart = [&](double r0, double r1, int nr, int na, bool period,
                         bool strip) {
    VChart ch;
    ch.with_strip = strip;
    std::vector<double> rx, rw, ax, aw;
    gl_on_interval(nr, r0, r1, rx, rw);
    const double a_half = period ? pi / p.J : pi;
    gl_on_interval(na, -a_half, a_half, ax, aw);
    const double mult = period ? static_cast<double>(p.J) : 1.0;
    for (int i = 0; i < nr; ++i)
      for (int j = 0; j < na; ++j) {
        VNode vn;
        vn.v = vec2(rx[i] * std::cos(ax[j]), rx[i] * std::sin(ax[j]));
        vn.w = mult * rw[i] * rx[i] * aw[j];
        ch.vnodes.push_back(vn);
      }
    charts.push_back(std::move(ch));
  };
  polar_chart(0.0, 2.2 / p.N1, opt.core_nr, opt.core_na, false, false);
  polar_chart(2.2 / p.N1, 0.7 * p.N2, opt.mid_nr, opt.mid_na, true, true);
  polar_chart(0.7 * p.N2, 1.3 * p.N2, opt.ring_nr, opt.ring_na, true, true);
  polar_chart(1.3 * p.N2, 1.75 * p.N2, opt.halo_nr, opt.halo_na, true, true);

  const double Ts = std::abs(p.T_star);
  struct Part {
    double l2 = 0, l2g = 0, lv1 = 0, lv1g = 0, lv53 = 0, lv53g = 0;
  };

  Part total;
  for (const VChart& ch : charts) {
    std::vector<Part> parts(ch.vnodes.size());
    par::parallel_for(0, static_cast<long long>(ch.vnodes.size()), [&](long long iv) {
      const VNode& vn = ch.vnodes[iv];
      // sampling sets: central patch (always) plus the sector strip
      Lattice2 patch;
      patch.e0 = vec2(1, 0);
      patch.e1 = vec2(0, 1);
      if (ch.with_strip) {
        patch.h0 = patch.h1 = 4.0 / p.M + 0.35 * p.N2 * Ts + 0.5;
        patch.n0 = patch.n1 = opt.patch_n;
      } else {
        patch.h0 = patch.h1 = 2.6 / p.M + Ts * norm(vn.v) + 0.05;
        patch.n0 = patch.n1 = opt.core_xn;
      }
      Lattice2 strip;
      strip.e0 = vec2(1, 0);  // sector 0 frame: the period window is centered on it
      strip.e1 = vec2(0, 1);
      strip.h0 = 2.2 * p.N2 + Ts * 1.3 * p.N2;
      strip.h1 = 3.2 / p.M + Ts * 4.0 / p.M;
      strip.n0 = opt.strip_along;
      strip.n1 = opt.strip_across;

      double l2 = 0, l2g = 0, fmax = 0, gmax = 0;
      Vec argf = patch.origin, argg = patch.origin;
      double step_f = patch.h0 / patch.n0, step_g = step_f;
      auto visit = [&](const Vec& x, double cell) {
        const double val = D.eval(x, vn.v);
        const double gm = D.grad_mag(x, vn.v);
        l2 += val * val * cell;
        l2g += gm * gm * cell;
        if (std::abs(val) > fmax) {
          fmax = std::abs(val);
          argf = x;
          step_f = std::sqrt(cell);
        }
        if (gm > gmax) {
          gmax = gm;
          argg = x;
          step_g = std::sqrt(cell);
        }
      };
      for (int i = 0; i < patch.n0; ++i)
        for (int j = 0; j < patch.n1; ++j) visit(patch.point(i, j), patch.cell());
      if (ch.with_strip)
        for (int i = 0; i < strip.n0; ++i)
          for (int j = 0; j < strip.n1; ++j) {
            const Vec x = strip.point(i, j);
            if (!inside_patch(patch, x)) visit(x, strip.cell());
          }
      // local refinement of the maxima
      for (int round = 0; round < 2; ++round) {
        step_f *= 0.25;
        step_g *= 0.25;
        Vec bf = argf, bg = argg;
        for (int i = -2; i <= 2; ++i)
          for (int j = -2; j <= 2; ++j) {
            Vec xf = argf;
            xf[0] += i * step_f;
            xf[1] += j * step_f;
            const double av = std::abs(D.eval(xf, vn.v));
            if (av > fmax) {
              fmax = av;
              bf = xf;
            }
            Vec xg = argg;
            xg[0] += i * step_g;
            xg[1] += j * step_g;
            const double ag = D.grad_mag(xg, vn.v);
            if (ag > gmax) {
              gmax = ag;
              bg = xg;
            }
          }
        argf = bf;
        argg = bg;
      }
      Part& pt = parts[iv];
      const double vr = std::pow(1.0 + norm2(vn.v), p.r0);
      pt.l2 = vn.w * vr * l2;
      pt.l2g = vn.w * vr * l2g;
      pt.lv1 = vn.w * fmax;
      pt.lv1g = vn.w * gmax;
      pt.lv53 = vn.w * std::pow(fmax, 5.0 / 3.0);
      pt.lv53g = vn.w * std::pow(gmax, 5.0 / 3.0);
    });
    for (const Part& pt : parts) {
      total.l2 += pt.l2;
      total.l2g += pt.l2g;
      total.lv1 += pt.lv1;
      total.lv1g += pt.lv1g;
      total.lv53 += pt.lv53;
      total.lv53g += pt.lv53g;
    }
  }

  const int d = p.d;
  const double z = std::pow(p.M, (d - 3) / 2.0) * std::sqrt(total.l2g) +
                   std::pow(p.M, (d - 1) / 2.0) * std::sqrt(total.l2) +
                   std::pow(p.N2, p.gamma) * total.lv1 +
                   std::pow(p.N2, 2.0 * d / 5.0 + p.gamma) *
                       std::pow(total.lv53, 3.0 / 5.0) +
                   std::pow(p.M, -1.0) * std::pow(p.N2, p.gamma) * total.lv1g +
                   std::pow(p.M, -1.0) * std::pow(p.N2, 2.0 * d / 5.0 + p.gamma) *
                       std::pow(total.lv53g, 3.0 / 5.0);
  return z;
}

// ---------------------------------------------------------------------------
// JSON runners
// ---------------------------------------------------------------------------

DeflationParams deflation_params_from_json(const json& j) {
  DeflationParams p;
  p.d = j.value("d", 2);
  p.gamma = j.value("gamma", -0.5);
  p.M = j.value("M", 4.0);
  p.N1 = j.value("N1", 32.0);
  p.N2 = j.value("N2", 8.0);
  p.s0 = j.value("s0", 0.25);
  p.s = j.value("s", 0.45);
  if (j.contains("r0")) p.r0 = j["r0"].get<double>();
  p.J = j.value("J", 0);
  p.T_star = j.value("T_star", 0.0);
  p.j_schedule = j.value("j_schedule", 32);
  p.sector_quad = j.value("sector_quad", 16);
  p.allow_hard = j.value("allow_hard", false);
  p.finalize();
  p.validate();
  return p;
}

CollisionKernel kernel_from_json(const json& j, int d) {
  CollisionKernel k;
  k.gamma = j.value("gamma", -0.5);
  const std::string bn = j.value("b", "abs_cos");
  if (bn == "abs_cos") {
    k.b = [](double c) { return std::abs(c); };
  } else if (bn == "half_abs_cos") {
    k.b = [](double c) { return 0.5 * std::abs(c); };
  } else {
    throw validation_error("kernel_from_json: unknown angular factor " + bn);
  }
  k.b_name = bn;
  const std::string var = j.value("variant", "power_law");
  if (var == "power_law")
    k.variant = KernelVariant::PowerLaw;
  else if (var == "composite")
    k.variant = KernelVariant::Composite;
  else
    throw validation_error("kernel_from_json: unknown variant " + var);
  k.cutoff_eps = j.value("cutoff_eps", 0.5);
  k.validate(d);
  return k;
}

namespace {

void write_manifest(const std::string& out_dir, const json& cfg, double wall_s) {
  json m;
  m["config"] = cfg;
  m["tool"] = "kdl";
  m["version"] = "1.0.0";
  m["wall_time_s"] = wall_s;
  write_text(out_dir + "/manifest.json", m.dump(2) + "\n");
}

}  // namespace

json run_deflation(const json& cfg, const std::string& out_dir) {
  const json pj = cfg.value("params", json::object());
  std::vector<double> m_values;
  if (pj.contains("M_values"))
    for (const auto& v : pj["M_values"]) m_values.push_back(v.get<double>());
  else
    m_values.push_back(pj.value("M", 4.0));
  const int n_times = cfg.value("n_times", 9);
  const std::uint64_t seed = cfg.value("seed", 0ULL);

  json summary;
  summary["ratios"] = json::array();
  std::string csv = "M,t,norm_fa,norm_fr,norm_fb\n";
  json brackets = json::array();
  for (double Mv : m_values) {
    json pj2 = pj;
    pj2["M"] = Mv;
    // keep the schedule admissible under N1 >= N2 >= M as M grows
    const double n2 = std::max(pj.value("N2", 8.0), Mv);
    pj2["N2"] = n2;
    pj2["N1"] = std::max(pj.value("N1", 32.0), n2);
    pj2.erase("J");
    pj2.erase("T_star");
    DeflationParams p = deflation_params_from_json(pj2);
    BumpFamily fam = sphere_points(p.d, p.J);
    NormSpec norm;
    norm.kind = NormSpec::Kind::Sobolev;
    norm.s = p.s0;
    norm.r = p.r0;
    DeflationReport rep = deflation_experiment(p, fam, norm, n_times);
    for (size_t i = 0; i < rep.times.size(); ++i)
      csv += fmt17(Mv) + "," + fmt17(rep.times[i]) + "," + fmt17(rep.norm_fa[i]) + "," +
             fmt17(rep.norm_fr[i]) + "," + fmt17(rep.norm_fb[i]) + "\n";
    summary["ratios"].push_back({{"M", Mv}, {"ratio", rep.ratio}});
    BetaBracket br = beta_bracket_experiment(p, fam, cfg.value("bracket_samples", 128),
                                             seed);
    brackets.push_back({{"M", Mv}, {"c1", br.c1}, {"c2", br.c2}});
  }
  summary["beta_brackets"] = brackets;
  summary["params"] = pj;
  summary["seed"] = seed;
  write_text(out_dir + "/deflation.csv", csv);
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return summary;
}

json run_collision_check(const json& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.value("seed", 0ULL);
  const int nv = cfg.value("nv", 32);
  const int pairs = cfg.value("pairs", 10);
  CollisionCheckResult r = collision_check_experiment(nv, pairs, seed);
  json summary;
  summary["detailed_balance"] = r.detailed_balance;
  summary["spectral_gaps"] = r.spectral_gaps;
  summary["conservation"] = json::array();
  std::string csv = "nv,mass_residual\n";
  for (size_t i = 0; i < r.conservation_nv.size(); ++i) {
    summary["conservation"].push_back(
        {{"nv", r.conservation_nv[i]}, {"mass", r.conservation_mass[i]}});
    csv += std::to_string(r.conservation_nv[i]) + "," + fmt17(r.conservation_mass[i]) +
           "\n";
  }
  summary["seed"] = seed;
  write_text(out_dir + "/conservation.csv", csv);
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return summary;
}

json run_inequality_suite(const json& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.value("seed", 0ULL);
  const int trials = cfg.value("trials", 100);
  std::vector<std::string> kinds;
  if (cfg.contains("kinds"))
    for (const auto& k : cfg["kinds"]) kinds.push_back(k.get<std::string>());
  else
    kinds = {"HLS",     "EndpointHLS", "QGainLr",    "QLossLr",
             "QGainL1", "FracLeibniz", "Strichartz", "QGainHalfHalf"};
  json summary;
  summary["reports"] = json::array();
  for (const std::string& name : kinds) {
    IneqInputs in;
    in.d = cfg.value("d", 2);
    in.gamma = cfg.value("gamma", -0.5);
    InequalityReport rep = check_inequality(ineq_kind_from_name(name), in, trials, seed);
    summary["reports"].push_back({{"kind", rep.kind},
                                  {"trials", rep.trials},
                                  {"worst_ratio", rep.worst_ratio},
                                  {"seed", rep.seed},
                                  {"relation", rep.relation}});
  }
  summary["seed"] = seed;
  write_text(out_dir + "/inequalities.json", summary.dump(2) + "\n");
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return summary;
}

json run_wellposed(const json& cfg, const std::string& out_dir) {
  const double eps = cfg.value("eps", 1e-2);
  const double T = cfg.value("T", 0.1);
  const int n_steps = cfg.value("n_steps", 8);
  const int nv = cfg.value("nv", 16);
  Grid g;
  g.d = 2;
  g.nv = nv;
  g.Lv = 4.0;
  g.nx = 8;
  g.Lx = 2.0;
  DenseField f0(g);
  const long long sx = g.size_x(), sv = g.size_v();
  for (long long fx = 0; fx < sx; ++fx) {
    const double mod = 1.0 + 0.5 * std::cos(pi * g.x_point(fx)[0] / g.Lx);
    for (long long fv = 0; fv < sv; ++fv)
      f0.at(fx, fv) = eps * mod * std::exp(-norm2(g.v_point(fv)));
  }
  CollisionKernel kern = kernel_from_json(cfg.value("kernel", json::object()), 2);
  PicardResult pr = picard_local_solve(PhaseField(f0), kern, sphere_quadrature(2, 16),
                                       T, n_steps, cfg.value("tol", 1e-12),
                                       cfg.value("max_iter", 12));
  std::string csv = "iteration,distance\n";
  for (size_t i = 0; i < pr.residuals.size(); ++i)
    csv += std::to_string(i) + "," + fmt17(pr.residuals[i]) + "\n";
  json summary;
  summary["residuals"] = pr.residuals;
  int decays = 0;
  for (size_t i = 1; i < pr.residuals.size(); ++i)
    if (pr.residuals[i] <= 0.5 * pr.residuals[i - 1]) ++decays;
  summary["halving_steps"] = decays;
  write_text(out_dir + "/residuals.csv", csv);
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return summary;
}

json run_correction(const json& cfg, const std::string& out_dir) {
  const json pj = cfg.value("params", json::object());
  json summary;

  if (cfg.value("ferr_trend", false)) {
    std::vector<double> n2s;
    if (pj.contains("N2_values"))
      for (const auto& v : pj["N2_values"]) n2s.push_back(v.get<double>());
    else
      n2s = {8.0, 16.0, 32.0};
    DuhamelFerrOptions opt;
    summary["ferr_trend"] = json::array();
    for (double n2 : n2s) {
      json pj2 = pj;
      pj2["N2"] = n2;
      pj2.erase("J");
      DeflationParams p = deflation_params_from_json(pj2);
      BumpFamily fam = sphere_points(p.d, p.J);
      const double z = duhamel_ferr_znorm(p, fam, opt);
      summary["ferr_trend"].push_back({{"N2", n2}, {"z_duhamel_ferr", z}});
    }
  }

  if (cfg.value("subordination", true)) {
    DeflationParams p = deflation_params_from_json(pj);
    BumpFamily fam = sphere_points(p.d, p.J);
    Grid g;
    g.d = p.d;
    g.nx = cfg.value("nx", 8);
    g.Lx = cfg.value("Lx", 2.6 * p.N2);
    g.nv = cfg.value("nv", 32);
    g.Lv = cfg.value("Lv", 1.5 * p.N2);
    CorrectionOptions opt;
    opt.n_subintervals = cfg.value("n_subintervals", 8);
    opt.nodes_per_sub = cfg.value("nodes_per_sub", 2);
    opt.tol = cfg.value("tol", 2e-3);
    opt.max_iter = cfg.value("max_iter", 8);
    CorrectionResult cr =
        solve_correction(p, fam, g, sphere_quadrature(p.d, p.d == 2 ? 8 : 6), opt);
    std::string csv = "subinterval,sup_z\n";
    for (size_t i = 0; i < cr.z_history.size(); ++i)
      csv += std::to_string(i) + "," + fmt17(cr.z_history[i]) + "\n";
    write_text(out_dir + "/correction_z.csv", csv);
    summary["z_history"] = cr.z_history;

    // Z-norm of the frozen approximation over the same interval
    const ZParams zp{p.M, p.N2, p.gamma, p.r0};
    double min_zfa = 1e300;
    for (double t : {p.T_star, 0.5 * p.T_star, 0.0}) {
      PhaseField fa = build_fa(p, fam, t, FrMode::Table);
      min_zfa = std::min(min_zfa, z_norm(fa, zp));
    }
    double max_zc = 0.0;
    for (double z : cr.z_history) max_zc = std::max(max_zc, z);
    summary["min_z_fa"] = min_zfa;
    summary["max_z_fc"] = max_zc;
    summary["subordination_ratio"] = max_zc / min_zfa;
    double growth = 0.0;
    for (size_t i = 1; i < cr.z_history.size(); ++i)
      if (cr.z_history[i - 1] > 0.0)
        growth = std::max(growth, cr.z_history[i] / cr.z_history[i - 1]);
    summary["max_growth_factor"] = growth;
  }

  summary["params"] = pj;
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return summary;
}

json run_experiment(const json& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string cmd = cfg.value("command", "");
  json summary;
  if (cmd == "deflation")
    summary = run_deflation(cfg, out_dir);
  else if (cmd == "collision-check")
    summary = run_collision_check(cfg, out_dir);
  else if (cmd == "inequality-suite")
    summary = run_inequality_suite(cfg, out_dir);
  else if (cmd == "wellposed")
    summary = run_wellposed(cfg, out_dir);
  else if (cmd == "correction")
    summary = run_correction(cfg, out_dir);
  else
    throw validation_error("unknown command: " + cmd);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_dir, cfg, wall);
  return summary;
}

}  // namespace kdl
