#include "kdl/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <stdexcept>

namespace kdl {

namespace {
// FFTW plan creation is not thread-safe; execution with new-array API is.
std::mutex g_plan_mutex;
}

void dft_axis(cplx* data, const std::vector<int>& dims, int axis, bool inverse) {
  const int ndim = static_cast<int>(dims.size());
  if (axis < 0 || axis >= ndim) throw std::invalid_argument("dft_axis: bad axis");
  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= dims[i];
  for (int i = axis + 1; i < ndim; ++i) inner *= dims[i];
  const int len = dims[axis];

  auto* f = reinterpret_cast<fftw_complex*>(data);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    int n[1] = {len};
    plan = fftw_plan_many_dft(
        1, n, static_cast<int>(inner), f, nullptr, static_cast<int>(inner), 1,
        f, nullptr, static_cast<int>(inner), 1,
        inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  if (!plan) throw std::runtime_error("dft_axis: fftw plan failed");
  const long long block = static_cast<long long>(len) * inner;
  for (long long o = 0; o < outer; ++o)
    fftw_execute_dft(plan, f + o * block, f + o * block);
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    fftw_destroy_plan(plan);
  }
  if (inverse) {
    long long total = outer * block;
    const double scale = 1.0 / len;
    for (long long i = 0; i < total; ++i) data[i] *= scale;
  }
}

void dft_axes(cplx* data, const std::vector<int>& dims,
              const std::vector<int>& axes, bool inverse) {
  for (int a : axes) dft_axis(data, dims, a, inverse);
}

}  // namespace kdl
