#pragma once

// FFTW-backed 2-D transforms on the periodic unit square, plus the wavenumber
// lattice shared by the spectral solvers and the GRF sampler.

#include <fftw3.h>

#include <complex>
#include <span>
#include <vector>

namespace gns::datagen::spectral {

using cplx = std::complex<double>;

/// Real <-> half-complex transforms of an ny-by-nx field (x fastest).
class RealFft2d {
 public:
  RealFft2d(int nx, int ny);
  ~RealFft2d();
  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  /// Number of half-complex coefficients, ny * (nx/2 + 1).
  std::size_t spectral_size() const { return static_cast<std::size_t>(ny_) * (nx_ / 2 + 1); }

  void forward(std::span<const double> in, std::span<cplx> out);
  /// Normalized inverse: inverse(forward(f)) == f.
  void inverse(std::span<const cplx> in, std::span<double> out);

 private:
  int nx_, ny_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan r2c_ = nullptr;
  fftw_plan c2r_ = nullptr;
};

/// Full complex inverse transform (sum over all modes with e^{+ikx}), unnormalized.
void complex_inverse_2d(int nx, int ny, std::span<const cplx> in, std::span<cplx> out);

/// Signed integer mode for FFT index i of an n-point axis.
inline int signed_mode(int i, int n) { return i <= n / 2 ? i : i - n; }

/// Wavenumbers (2π·mode) on the half-complex lattice.
struct Lattice {
  int nx, ny, nxh;
  std::vector<double> kx;      // per half-complex x index, first-derivative (Nyquist zeroed)
  std::vector<double> ky;      // per y index, first-derivative (Nyquist zeroed)
  std::vector<double> k2;      // |k|^2 per coefficient, Nyquist kept
  std::vector<double> dealias; // 2/3-rule mask per coefficient

  Lattice(int nx, int ny);
  std::size_t index(int iy, int jx) const { return static_cast<std::size_t>(iy) * nxh + jx; }
};

}  // namespace gns::datagen::spectral
