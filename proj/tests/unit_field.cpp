#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>

#include "kdl/cutoff.hpp"
#include "kdl/field.hpp"
#include "kdl/rng.hpp"

using namespace kdl;

namespace {

Grid small_grid(int nx = 16, int nv = 16, double Lx = 1.0, double Lv = 1.0) {
  Grid g;
  g.d = 2;
  g.nx = nx;
  g.nv = nv;
  g.Lx = Lx;
  g.Lv = Lv;
  return g;
}

DenseField random_field(const Grid& g, std::uint64_t seed) {
  DenseField f(g);
  Rng rng(seed, 0);
  for (double& v : f.a) v = rng.uniform(-1.0, 1.0);
  return f;
}

// brute-force DFT of one x-mode, independent of the FFT path
cplx brute_x_mode(const DenseField& f, int k0, int k1, long long fv) {
  const Grid& g = f.grid;
  cplx acc = 0.0;
  for (int i0 = 0; i0 < g.nx; ++i0)
    for (int i1 = 0; i1 < g.nx; ++i1) {
      const double ph = -2.0 * pi * (double(k0) * i0 + double(k1) * i1) / g.nx;
      acc += f.at(static_cast<long long>(i0) * g.nx + i1, fv) *
             cplx(std::cos(ph), std::sin(ph));
    }
  return acc;
}

}  // namespace

TEST_CASE("smooth cutoff values and monotonicity") {
  Vec origin{0, 0, 0};
  CHECK(smooth_cutoff(origin) == 1.0);
  CHECK(smooth_cutoff(vec2(3.0, 0.0)) == 0.0);
  // midpoint of the transition: g(0.5)/(g(0.5)+g(0.5)) = 1/2
  CHECK(smooth_cutoff(vec2(1.5, 0.0)) == doctest::Approx(0.5).epsilon(1e-14));
  const double direct = bump_g(0.5) / (bump_g(0.5) + bump_g(0.5));
  CHECK(smooth_cutoff_radial(1.5) == doctest::Approx(direct).epsilon(1e-15));

  double prev = 2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double t = 3.0 * i / 1000.0;
    const double v = smooth_cutoff_radial(t);
    CHECK(v <= prev + 1e-15);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
}

TEST_CASE("cutoff gradient matches finite differences") {
  for (double t : {1.2, 1.5, 1.9}) {
    const double h = 1e-6;
    const double fd =
        (smooth_cutoff_radial(t + h) - smooth_cutoff_radial(t - h)) / (2 * h);
    CHECK(smooth_cutoff_radial_deriv(t) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("transform: constant field has only the zero mode") {
  Grid g = small_grid();
  DenseField f(g);
  for (double& v : f.a) v = 3.25;
  SpectralField s = transform_forward(PhaseField(f), AXIS_X | AXIS_V);
  for (size_t i = 1; i < s.a.size(); ++i) CHECK(std::abs(s.a[i]) < 1e-9);
  CHECK(std::abs(s.a[0]) == doctest::Approx(3.25 * g.total()).epsilon(1e-12));
}

TEST_CASE("transform: forward-inverse round trip") {
  Grid g = small_grid();
  DenseField f = random_field(g, 7);
  PhaseField back = transform_inverse(transform_forward(PhaseField(f), AXIS_X | AXIS_V));
  double num = 0, den = 0;
  for (size_t i = 0; i < f.a.size(); ++i) {
    num += std::pow(back.dense().a[i] - f.a[i], 2);
    den += f.a[i] * f.a[i];
  }
  CHECK(std::sqrt(num / den) < 1e-12);
}

TEST_CASE("transform: pure cosine hits two x-modes") {
  Grid g = small_grid();
  DenseField f(g);
  const long long sv = g.size_v();
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const double val = std::cos(pi * g.x_point(fx)[0] / g.Lx);
    for (long long fv = 0; fv < sv; ++fv) f.at(fx, fv) = val;
  }
  SpectralField s = transform_forward(PhaseField(f), AXIS_X);
  // modes (+-1, 0) in the first x-axis; frequency pi/Lx
  CHECK(s.kx(1) == doctest::Approx(pi / g.Lx));
  // nodes start at -Lx, so the sampled signal is -cos(2 pi i / n): the
  // +-1 coefficients are -n/2, times the flat second axis
  const double expect = g.nx / 2.0 * g.nx;
  for (long long fv = 0; fv < sv; ++fv) {
    const cplx mplus = brute_x_mode(f, 1, 0, fv);
    CHECK(std::abs(mplus - cplx(-expect, 0.0)) < 1e-8);
  }
  long long nonzero = 0;
  const long long sx = g.size_x();
  for (long long fx = 0; fx < sx; ++fx)
    if (std::abs(s.a[fx * sv]) > 1e-8) ++nonzero;
  CHECK(nonzero == 2);
  const long long fx_p = 1 * static_cast<long long>(g.nx) + 0;   // k = (+1, 0)
  const long long fx_m = (g.nx - 1) * static_cast<long long>(g.nx) + 0;
  CHECK(std::abs(s.a[fx_p * sv]) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(s.a[fx_m * sv]) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("transform error paths") {
  Grid g = small_grid();
  DenseField f(g);
  CHECK_THROWS_AS(transform_forward(PhaseField(f), AXIS_T), validation_error);
  class Dummy : public AnalyticCore {
   public:
    int dim() const override { return 2; }
    SupportBox support() const override { return {}; }
    double eval_raw(const Vec&, const Vec&) const override { return 0; }
  };
  PhaseField a(std::make_shared<Dummy>());
  CHECK_THROWS_AS(transform_forward(a, AXIS_X), validation_error);
}

TEST_CASE("Parseval on random fields") {
  Grid g = small_grid();
  DenseField f = random_field(g, 11);
  SpectralField s = transform_forward(PhaseField(f), AXIS_X | AXIS_V);
  double phys = 0;
  for (double v : f.a) phys += v * v;
  phys *= g.cell_x() * g.cell_v();
  double spec = 0;
  for (const cplx& c : s.a) spec += std::norm(c);
  spec *= g.cell_x() * g.cell_v() / static_cast<double>(g.total());
  CHECK(phys == doctest::Approx(spec).epsilon(1e-10));
}

TEST_CASE("fourier multiplier identity and Bessel weight") {
  Grid g = small_grid();
  DenseField f = random_field(g, 3);
  auto check_same = [&](const PhaseField& out) {
    for (size_t i = 0; i < f.a.size(); ++i)
      CHECK(out.dense().a[i] == doctest::Approx(f.a[i]).epsilon(1e-11));
  };
  check_same(fourier_multiplier(PhaseField(f), AXIS_X,
                                [](const Vec&, const Vec&) { return 1.0; }));
  check_same(fourier_multiplier(PhaseField(f), AXIS_X, [](const Vec& kx, const Vec&) {
    return std::pow(1.0 + norm2(kx), 0.0);
  }));
}

TEST_CASE("fourier multiplier: single mode is an eigenfunction") {
  Grid g = small_grid();
  DenseField f(g);
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const double val = std::cos(pi * g.x_point(fx)[0] / g.Lx);
    for (long long fv = 0; fv < g.size_v(); ++fv) f.at(fx, fv) = val;
  }
  PhaseField out = fourier_multiplier(PhaseField(f), AXIS_X, [](const Vec& kx, const Vec&) {
    return std::sqrt(1.0 + norm2(kx));
  });
  const double lam = std::sqrt(1.0 + std::pow(pi / g.Lx, 2));
  for (size_t i = 0; i < f.a.size(); ++i)
    CHECK(out.dense().a[i] == doctest::Approx(lam * f.a[i]).epsilon(1e-10));
}

TEST_CASE("fourier multiplier rejects non-finite symbols") {
  Grid g = small_grid();
  DenseField f = random_field(g, 5);
  CHECK_THROWS_AS(fourier_multiplier(PhaseField(f), AXIS_X,
                                     [](const Vec& kx, const Vec&) {
                                       return norm2(kx) > 10.0 ? std::nan("") : 1.0;
                                     }),
                  validation_error);
}

TEST_CASE("interpolation: nodal exactness and affine reproduction") {
  Grid g = small_grid();
  DenseField f(g);
  for (long long fx = 0; fx < g.size_x(); ++fx) {
    const Vec x = g.x_point(fx);
    for (long long fv = 0; fv < g.size_v(); ++fv) {
      const Vec v = g.v_point(fv);
      f.at(fx, fv) = 0.3 + 0.7 * x[0] - 0.2 * x[1] + 1.1 * v[0] + 0.4 * v[1];
    }
  }
  PhaseField pf(f);
  // nodes
  CHECK(interpolate(pf, g.x_point(5), g.v_point(9)) ==
        doctest::Approx(f.at(5, 9)).epsilon(1e-14));
  // affine at cell centers (multilinear is exact on affine functions)
  Rng rng(2, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x = vec2(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    Vec v = vec2(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    const double expect = 0.3 + 0.7 * x[0] - 0.2 * x[1] + 1.1 * v[0] + 0.4 * v[1];
    CHECK(interpolate(pf, x, v) == doctest::Approx(expect).epsilon(1e-12));
  }
  // outside the box
  CHECK(interpolate(pf, vec2(5.0, 0.0), vec2(0, 0)) == 0.0);
}

TEST_CASE("interpolation: second-order on a gaussian bump") {
  auto sample_err = [&](int nv) {
    Grid g = small_grid(8, nv, 1.0, 1.0);
    DenseField f(g);
    for (long long fx = 0; fx < g.size_x(); ++fx)
      for (long long fv = 0; fv < g.size_v(); ++fv)
        f.at(fx, fv) = std::exp(-4.0 * norm2(g.v_point(fv)));
    PhaseField pf(f);
    Rng rng(4, 0);
    double emax = 0;
    for (int i = 0; i < 100; ++i) {
      Vec v = vec2(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
      const double exact = std::exp(-4.0 * norm2(v));
      emax = std::max(emax, std::abs(interpolate(pf, vec2(0, 0), v) - exact));
    }
    return emax;
  };
  const double e64 = sample_err(64), e128 = sample_err(128);
  const double gain = e64 / e128;
  CHECK(gain > 2.5);  // second order: ~4x per refinement
  CHECK(gain < 8.0);
}

TEST_CASE("kdf1 serialization round trip") {
  Grid g = small_grid(8, 8, 1.5, 2.5);
  DenseField f = random_field(g, 13);
  const std::string path = "/tmp/kdl_test_field.kdf";
  save_kdf1(path, f);
  // magic bytes
  FILE* fp = std::fopen(path.c_str(), "rb");
  char magic[4];
  REQUIRE(std::fread(magic, 1, 4, fp) == 4);
  std::fclose(fp);
  CHECK(std::string(magic, 4) == "KDF1");
  DenseField back = load_kdf1(path);
  CHECK(back.grid.same_as(g));
  for (size_t i = 0; i < f.a.size(); ++i) CHECK(back.a[i] == f.a[i]);
}

TEST_CASE("analytic fields vanish outside their support box") {
  class Bump : public AnalyticCore {
   public:
    int dim() const override { return 2; }
    SupportBox support() const override {
      SupportBox sb;
      for (int k = 0; k < 2; ++k) {
        sb.xlo[k] = -1;
        sb.xhi[k] = 1;
        sb.vlo[k] = -1;
        sb.vhi[k] = 1;
      }
      return sb;
    }
    double eval_raw(const Vec& x, const Vec& v) const override {
      return 1.0 + 0.0 * (x[0] + v[0]);  // deliberately nonzero everywhere
    }
  };
  PhaseField f(std::make_shared<Bump>());
  CHECK(f.eval(vec2(0.5, 0), vec2(0, 0)) == 1.0);
  CHECK(f.eval(vec2(1.5, 0), vec2(0, 0)) == 0.0);
  CHECK(f.eval(vec2(0.5, 0), vec2(0, 2.0)) == 0.0);
}
