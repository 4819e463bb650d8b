#include "spectral.hpp"

#include <cmath>
#include <mutex>
#include <numbers>

namespace gns::datagen::spectral {

namespace {
// FFTW planning is not thread-safe.
std::mutex g_plan_mutex;
}  // namespace

RealFft2d::RealFft2d(int nx, int ny) : nx_(nx), ny_(ny) {
  std::lock_guard lock(g_plan_mutex);
  real_ = fftw_alloc_real(static_cast<std::size_t>(nx) * ny);
  spec_ = fftw_alloc_complex(spectral_size());
  // FFTW_ESTIMATE picks plans without timing, so results are reproducible.
  r2c_ = fftw_plan_dft_r2c_2d(ny, nx, real_, spec_, FFTW_ESTIMATE);
  c2r_ = fftw_plan_dft_c2r_2d(ny, nx, spec_, real_, FFTW_ESTIMATE);
}

RealFft2d::~RealFft2d() {
  std::lock_guard lock(g_plan_mutex);
  fftw_destroy_plan(r2c_);
  fftw_destroy_plan(c2r_);
  fftw_free(real_);
  fftw_free(spec_);
}

void RealFft2d::forward(std::span<const double> in, std::span<cplx> out) {
  std::copy(in.begin(), in.end(), real_);
  fftw_execute(r2c_);
  const auto* s = reinterpret_cast<const cplx*>(spec_);
  std::copy(s, s + spectral_size(), out.begin());
}

void RealFft2d::inverse(std::span<const cplx> in, std::span<double> out) {
  auto* s = reinterpret_cast<cplx*>(spec_);
  std::copy(in.begin(), in.end(), s);
  fftw_execute(c2r_);
  const double norm = 1.0 / (static_cast<double>(nx_) * ny_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = real_[i] * norm;
}

void complex_inverse_2d(int nx, int ny, std::span<const cplx> in, std::span<cplx> out) {
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  fftw_complex* buf = nullptr;
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(g_plan_mutex);
    buf = fftw_alloc_complex(n);
    plan = fftw_plan_dft_2d(ny, nx, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  auto* b = reinterpret_cast<cplx*>(buf);
  std::copy(in.begin(), in.end(), b);
  fftw_execute(plan);
  std::copy(b, b + n, out.begin());
  std::lock_guard lock(g_plan_mutex);
  fftw_destroy_plan(plan);
  fftw_free(buf);
}

Lattice::Lattice(int nx_, int ny_) : nx(nx_), ny(ny_), nxh(nx_ / 2 + 1) {
  const double two_pi = 2.0 * std::numbers::pi;
  kx.resize(nxh);
  ky.resize(ny);
  for (int j = 0; j < nxh; ++j) kx[j] = (j == nx / 2) ? 0.0 : two_pi * j;
  for (int i = 0; i < ny; ++i) {
    const int m = signed_mode(i, ny);
    ky[i] = (i == ny / 2) ? 0.0 : two_pi * m;
  }
  k2.resize(static_cast<std::size_t>(ny) * nxh);
  dealias.resize(k2.size());
  for (int i = 0; i < ny; ++i) {
    const int my = signed_mode(i, ny);
    for (int j = 0; j < nxh; ++j) {
      const double fx = two_pi * j, fy = two_pi * my;
      k2[index(i, j)] = fx * fx + fy * fy;
      const bool keep = 3 * j <= nx && 3 * std::abs(my) <= ny;
      dealias[index(i, j)] = keep ? 1.0 : 0.0;
    }
  }
}

}  // namespace gns::datagen::spectral
