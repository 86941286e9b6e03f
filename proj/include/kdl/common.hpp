#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdl {

// Small fixed-capacity point in R^d, d <= 3.  The active dimension is carried
// by the surrounding object (Grid, kernel, ...), unused components stay zero
// so dot/norm over all three components remain correct.
using Vec = std::array<double, 3>;

inline Vec vec2(double a, double b) { return {a, b, 0.0}; }
inline Vec vec3(double a, double b, double c) { return {a, b, c}; }

inline double dot(const Vec& a, const Vec& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

inline Vec operator+(const Vec& a, const Vec& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec operator-(const Vec& a, const Vec& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec operator*(double s, const Vec& a) {
  return {s * a[0], s * a[1], s * a[2]};
}

// Error taxonomy used across the library.  Validation failures (bad
// parameters, shape mismatches) and numerical divergence are distinguished
// so that the CLI can map them to exit codes 2 and 3.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class divergence_error : public std::runtime_error {
 public:
  divergence_error(const std::string& msg, std::vector<double> history_,
                   int where_ = -1)
      : std::runtime_error(msg), history(std::move(history_)), where(where_) {}
  std::vector<double> history;  // per-iteration distances / per-interval norms
  int where;                    // offending subinterval, -1 if n/a
};

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

constexpr double pi = 3.141592653589793238462643383279502884;

}  // namespace kdl
