#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "kdl/deflation.hpp"
#include "kdl/inequalities.hpp"
#include "kdl/norms.hpp"
#include "kdl/solver.hpp"

namespace kdl {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// typed experiment drivers (reused by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

struct CollisionCheckResult {
  double detailed_balance = 0.0;            // relative sup-norm defect
  std::vector<double> spectral_gaps;        // per random pair
  std::vector<int> conservation_nv;         // grid sizes
  std::vector<double> conservation_mass;    // residual per size
};

CollisionCheckResult collision_check_experiment(int nv_balance, int n_pairs,
                                                std::uint64_t seed);

struct BetaBracket {
  double c1 = 0.0, c2 = 0.0;  // measured |beta| / (|t| M^{(d-1)/2-s}) range
};

BetaBracket beta_bracket_experiment(const DeflationParams& p, const BumpFamily& fam,
                                    int n_samples, std::uint64_t seed);

/**
 * Z-norm of the Duhamel integral of F_err over [T*, 0], evaluated at t = 0
 * through the analytic route:  D(x,v) = int_{T*}^0 F_err(t0, x + t0 v, v) dt0.
 * The velocity quadrature exploits the J-fold rotation symmetry of the d = 2
 * construction (one angular period carries weight J); x-norms per velocity
 * node are taken over a sector-aligned strip plus a central patch, where the
 * translated sector profiles concentrate.
 */
struct DuhamelFerrOptions {
  int n_t0 = 4;
  int strip_along = 40, strip_across = 12;
  int patch_n = 28;
  int core_xn = 28;
  int ring_nr = 8, ring_na = 10;
  int mid_nr = 4, mid_na = 8;
  int halo_nr = 5, halo_na = 8;
  int core_nr = 4, core_na = 12;
};

double duhamel_ferr_znorm(const DeflationParams& p, const BumpFamily& fam,
                          const DuhamelFerrOptions& opt);

// ---------------------------------------------------------------------------
// JSON-facing runners: execute one experiment, write artifacts + manifest
// into out_dir, return the summary document.
// ---------------------------------------------------------------------------

json run_deflation(const json& cfg, const std::string& out_dir);
json run_collision_check(const json& cfg, const std::string& out_dir);
json run_inequality_suite(const json& cfg, const std::string& out_dir);
json run_wellposed(const json& cfg, const std::string& out_dir);
json run_correction(const json& cfg, const std::string& out_dir);

/// dispatch on cfg["command"]; writes manifest.json; exit-code semantics of
/// the CLI: 0 ok, 2 validation, 3 divergence
json run_experiment(const json& cfg, const std::string& out_dir);

DeflationParams deflation_params_from_json(const json& j);
CollisionKernel kernel_from_json(const json& j, int d);

}  // namespace kdl
