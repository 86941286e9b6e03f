#pragma once

#include <cstdint>
#include <string>

#include "kdl/collision.hpp"

namespace kdl {

enum class IneqKind {
  HLS,
  EndpointHLS,
  QGainLr,
  QLossLr,
  QGainL1,
  FracLeibniz,
  Strichartz,
  QGainHalfHalf
};

const char* ineq_kind_name(IneqKind k);
IneqKind ineq_kind_from_name(const std::string& s);

/**
 * Randomized-family configuration.  Exponents are validated against the
 * scaling relation of the cited estimate before any computation; a violated
 * relation is reported in the error message.  Grid sizes are per-axis counts
 * of the velocity (or frequency) sampling box of half-width L.
 */
struct IneqInputs {
  int d = 2;
  double gamma = -0.5;
  double p = 0.0, q = 0.0, r = 0.0;  // meaning depends on the kind
  double s = 0.7;                    // FracLeibniz regularity
  double st_q = 2.0, st_p = 4.0;     // Strichartz pair
  int grid_n = 32;
  double L = 2.0;
};

struct InequalityReport {
  std::string kind;
  int trials = 0;
  double worst_ratio = 0.0;
  std::uint64_t seed = 0;
  std::string relation;  // scaling relation satisfied by the exponent tuple
};

InequalityReport check_inequality(IneqKind kind, IneqInputs in, int trials,
                                  std::uint64_t seed);

}  // namespace kdl
