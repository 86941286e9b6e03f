#pragma once

#include <vector>

#include "kdl/field.hpp"

namespace kdl {

/// Time-sampled solution on a uniform mesh, all snapshots dense on one grid.
struct Trajectory {
  std::vector<double> times;
  std::vector<DenseField> fields;
  Grid grid;

  void validate() const {
    if (times.size() != fields.size() || times.empty())
      throw validation_error("Trajectory: times/fields size mismatch");
    const double dt = times.size() > 1 ? times[1] - times[0] : 0.0;
    for (size_t i = 1; i < times.size(); ++i) {
      const double step = times[i] - times[i - 1];
      if (!(step > 0.0) || std::abs(step - dt) > 1e-9 * std::max(1.0, std::abs(dt)))
        throw validation_error("Trajectory: times must be strictly increasing and uniform");
    }
    for (const auto& f : fields)
      if (!f.grid.same_as(grid)) throw validation_error("Trajectory: field off the shared grid");
  }

  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
};

}  // namespace kdl
