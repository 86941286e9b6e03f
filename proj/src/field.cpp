#include "kdl/field.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "kdl/par.hpp"

namespace kdl {

namespace {

bool inside_box(const Vec& p, const Vec& lo, const Vec& hi, int d) {
  for (int k = 0; k < d; ++k)
    if (p[k] < lo[k] || p[k] > hi[k]) return false;
  return true;
}

}  // namespace

double PhaseField::eval(const Vec& x, const Vec& v) const {
  if (dense_) return interpolate(*this, x, v);
  const SupportBox sb = core_->support();
  if (!inside_box(x, sb.xlo, sb.xhi, core_->dim()) ||
      !inside_box(v, sb.vlo, sb.vhi, core_->dim()))
    return 0.0;
  return core_->eval_raw(x, v);
}

// --------------------------------------------------------------------------

SpectralField transform_forward(const PhaseField& f, unsigned axes) {
  if (!f.is_dense())
    throw validation_error("transform: non-dense input has no grid representation");
  if (axes & AXIS_T)
    throw validation_error("transform: axis t requested on a single field");
  if (!(axes & (AXIS_X | AXIS_V)))
    throw validation_error("transform: empty axis set");
  const DenseField& df = f.dense();
  SpectralField s;
  s.grid = df.grid;
  s.axes = axes;
  s.a.assign(df.a.begin(), df.a.end());
  const std::vector<int> dims = df.grid.dims();
  std::vector<int> ax;
  if (axes & AXIS_X)
    for (int k = 0; k < df.grid.d; ++k) ax.push_back(k);
  if (axes & AXIS_V)
    for (int k = 0; k < df.grid.d; ++k) ax.push_back(df.grid.d + k);
  dft_axes(s.a.data(), dims, ax, false);
  return s;
}

PhaseField transform_inverse(const SpectralField& s) {
  std::vector<cplx> work(s.a);
  const std::vector<int> dims = s.grid.dims();
  std::vector<int> ax;
  if (s.axes & AXIS_X)
    for (int k = 0; k < s.grid.d; ++k) ax.push_back(k);
  if (s.axes & AXIS_V)
    for (int k = 0; k < s.grid.d; ++k) ax.push_back(s.grid.d + k);
  dft_axes(work.data(), dims, ax, true);
  DenseField out(s.grid);
  for (size_t i = 0; i < work.size(); ++i) out.a[i] = work[i].real();
  return PhaseField(std::move(out));
}

PhaseField fourier_multiplier(const PhaseField& f, unsigned axes,
                              const std::function<double(const Vec&, const Vec&)>& symbol) {
  SpectralField s = transform_forward(f, axes);
  const Grid& g = s.grid;
  const long long sx = g.size_x(), sv = g.size_v();
  const bool tx = (axes & AXIS_X) != 0, tv = (axes & AXIS_V) != 0;

  auto kvec_x = [&](long long fx) {
    Vec k{0, 0, 0};
    if (tx) {
      int idx[3] = {0, 0, 0};
      g.unflat(fx, g.nx, idx);
      for (int a = 0; a < g.d; ++a) k[a] = s.kx(idx[a]);
    }
    return k;
  };
  auto kvec_v = [&](long long fv) {
    Vec k{0, 0, 0};
    if (tv) {
      int idx[3] = {0, 0, 0};
      g.unflat(fv, g.nv, idx);
      for (int a = 0; a < g.d; ++a) k[a] = s.kv(idx[a]);
    }
    return k;
  };

  auto check = [](double m) {
    if (!std::isfinite(m))
      throw validation_error("fourier_multiplier: symbol not finite on a grid frequency");
    return m;
  };

  if (tx && !tv) {
    for (long long fx = 0; fx < sx; ++fx) {
      const double m = check(symbol(kvec_x(fx), Vec{0, 0, 0}));
      cplx* row = s.a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) row[fv] *= m;
    }
  } else if (tv && !tx) {
    std::vector<double> mv(sv);
    for (long long fv = 0; fv < sv; ++fv)
      mv[fv] = check(symbol(Vec{0, 0, 0}, kvec_v(fv)));
    for (long long fx = 0; fx < sx; ++fx) {
      cplx* row = s.a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) row[fv] *= mv[fv];
    }
  } else {
    for (long long fx = 0; fx < sx; ++fx) {
      const Vec kx = kvec_x(fx);
      cplx* row = s.a.data() + fx * sv;
      for (long long fv = 0; fv < sv; ++fv) row[fv] *= check(symbol(kx, kvec_v(fv)));
    }
  }
  return transform_inverse(s);
}

// --------------------------------------------------------------------------

double interp_v_slice(const double* slice, const Grid& g, const Vec& v) {
  const int d = g.d, n = g.nv;
  const double h = g.hv();
  double fi[3];
  int base[3];
  for (int k = 0; k < d; ++k) {
    fi[k] = (v[k] + g.Lv) / h;
    base[k] = static_cast<int>(std::floor(fi[k]));
    fi[k] -= base[k];
  }
  double acc = 0.0;
  const int corners = 1 << d;
  for (int c = 0; c < corners; ++c) {
    double w = 1.0;
    long long idx = 0;
    bool ok = true;
    for (int k = 0; k < d; ++k) {
      const int bit = (c >> k) & 1;
      const int i = base[k] + bit;
      if (i < 0 || i >= n) {
        ok = false;
        break;
      }
      w *= bit ? fi[k] : 1.0 - fi[k];
      idx = idx * n + i;
    }
    if (ok && w != 0.0) acc += w * slice[idx];
  }
  return acc;
}

double interpolate(const PhaseField& f, const Vec& x, const Vec& v) {
  if (f.is_analytic()) return f.eval(x, v);
  const DenseField& df = f.dense();
  const Grid& g = df.grid;
  const int d = g.d;

  double fi[6];
  int base[6];
  const int ns[2] = {g.nx, g.nv};
  const double hs[2] = {g.hx(), g.hv()};
  const double Ls[2] = {g.Lx, g.Lv};
  for (int k = 0; k < d; ++k) {
    fi[k] = (x[k] + Ls[0]) / hs[0];
    base[k] = static_cast<int>(std::floor(fi[k]));
    fi[k] -= base[k];
  }
  for (int k = 0; k < d; ++k) {
    fi[d + k] = (v[k] + Ls[1]) / hs[1];
    base[d + k] = static_cast<int>(std::floor(fi[d + k]));
    fi[d + k] -= base[d + k];
  }
  const int m = 2 * d;
  const int corners = 1 << m;
  double acc = 0.0;
  for (int c = 0; c < corners; ++c) {
    double w = 1.0;
    long long fx = 0, fv = 0;
    bool ok = true;
    for (int k = 0; k < m; ++k) {
      const int bit = (c >> k) & 1;
      const int i = base[k] + bit;
      const int n = k < d ? ns[0] : ns[1];
      if (i < 0 || i >= n) {
        ok = false;
        break;
      }
      w *= bit ? fi[k] : 1.0 - fi[k];
      if (k < d)
        fx = fx * ns[0] + i;
      else
        fv = fv * ns[1] + i;
    }
    if (ok && w != 0.0) acc += w * df.at(fx, fv);
  }
  return acc;
}

// --------------------------------------------------------------------------

namespace {

void put_u64(std::ofstream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}
std::uint64_t get_u64(std::ifstream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
std::uint64_t dbl_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}
double bits_dbl(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

}  // namespace

void save_kdf1(const std::string& path, const DenseField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw validation_error("save_kdf1: cannot open " + path);
  os.write("KDF1", 4);
  put_u64(os, static_cast<std::uint64_t>(f.grid.d));
  put_u64(os, static_cast<std::uint64_t>(f.grid.nx));
  put_u64(os, static_cast<std::uint64_t>(f.grid.nv));
  put_u64(os, dbl_bits(f.grid.Lx));
  put_u64(os, dbl_bits(f.grid.Lv));
  for (double v : f.a) put_u64(os, dbl_bits(v));
  if (!os) throw validation_error("save_kdf1: write failed for " + path);
}

DenseField load_kdf1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw validation_error("load_kdf1: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::strncmp(magic, "KDF1", 4) != 0)
    throw validation_error("load_kdf1: bad magic in " + path);
  Grid g;
  g.d = static_cast<int>(get_u64(is));
  g.nx = static_cast<int>(get_u64(is));
  g.nv = static_cast<int>(get_u64(is));
  g.Lx = bits_dbl(get_u64(is));
  g.Lv = bits_dbl(get_u64(is));
  g.validate();
  DenseField f(g);
  for (double& v : f.a) v = bits_dbl(get_u64(is));
  if (!is) throw validation_error("load_kdf1: truncated file " + path);
  return f;
}

DenseField sample_to_grid(const PhaseField& f, const Grid& g) {
  g.validate();
  DenseField out(g);
  const long long sx = g.size_x(), sv = g.size_v();
  par::parallel_for(0, sx, [&](long long fx) {
    const Vec x = g.x_point(fx);
    for (long long fv = 0; fv < sv; ++fv)
      out.at(fx, fv) = f.eval(x, g.v_point(fv));
  });
  return out;
}

}  // namespace kdl
