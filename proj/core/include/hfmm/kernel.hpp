#ifndef HFMM_KERNEL_HPP
#define HFMM_KERNEL_HPP

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/geometry.hpp"

namespace hfmm::kernel {

// free-space Helmholtz kernel e^{jkR}/(4 pi R); complex k decays as e^{-wave_i R}.
// inline so every caller (direct sums, tree near field) runs the same bits
template <typename Real>
inline std::complex<Real> green_t(const Vec3& r, const Vec3& r_src, WaveNumber k) {
  Real dx = Real(r.x - r_src.x), dy = Real(r.y - r_src.y), dz = Real(r.z - r_src.z);
  Real R = std::sqrt(dx * dx + dy * dy + dz * dz);
  Real amp = std::exp(Real(-k.wave_i) * R) / (Real(4.0 * PI) * R);
  Real ph = Real(k.wave_r) * R;
  return {amp * std::cos(ph), amp * std::sin(ph)};
}

cplx green(const Vec3& r, const Vec3& r_src, WaveNumber k);  // throws singular_error at R=0

// one quadrature sample of the surface density.
// strength drives the far-field regime (density coefficient times the basis
// function's reference integral); density is the bare coefficient, needed when
// a near target re-integrates this sample's basis function over the patch.
// the two coincide in the far limit.  patch may be null for plain point clouds.
struct SourceSample {
  Vec3 position;
  cplx strength = 0.0;
  std::int32_t patch_id = -1;
  const geom::CurvilinearPatch* patch = nullptr;
  double zeta = 0, eta = 0;       // reference coordinates on the owning patch
  std::int32_t basis_index = -1;  // which interpolation function this sample carries
  std::int32_t basis_order = 2;
  cplx density = 0.0;
};

enum class Precision { f64, f32 };

struct KernelConfig {
  // < 0 means per-source automatic threshold: twice the owning patch's
  // circumscribed diameter.  0 disables the near regime entirely.
  double near_patch_distance = -1.0;
  int near_rule = 25;  // gauss points for near re-integration
  int self_rule = 8;   // duffy points per dimension for the self term
  // pairs on one patch are normally relayed to the self-treatment; the fast
  // multipole operator path runs with this off so plain kernel sums stay
  // consistent across tree granularities (corrections are applied separately)
  bool skip_same_patch = true;
  Precision precision = Precision::f64;
  int threads = 1;  // distinct target ranges only; per-target sums stay ordered
};

// direct particle interaction, three regimes per (target, source) pair:
//   (a) same patch or zero distance: skipped here, self-treatment owns it
//   (b) within the near threshold: re-integrate the source's basis function
//       against the kernel over its owning patch
//   (c) otherwise: strength * green
// accumulation order over sources is fixed; never reassociated
std::vector<cplx> p2p(std::span<const SourceSample> targets,
                      std::span<const SourceSample> sources, WaveNumber k,
                      const KernelConfig& cfg);

// integral of the kernel against the patch density over the reference
// triangle (the surface measure cancels the inverse-Jacobian in the density);
// density has 3, 6 or 12 coefficients fixing the interpolation order
cplx near_patch_integral(const Vec3& obs, const geom::CurvilinearPatch& patch,
                         std::span<const cplx> density, WaveNumber k, int rule_size);

// same integral for one basis function only
cplx near_basis_integral(const Vec3& obs, const geom::CurvilinearPatch& patch, int order,
                         int basis_index, WaveNumber k, int rule_size);

// singular variant: the observation point is the patch's own interpolation
// point at reference coordinates (zeta0, eta0); duffy quadrature absorbs the
// 1/R blowup.  throws std::domain_error if the point is off the triangle.
cplx self_patch_integral(double zeta0, double eta0, const geom::CurvilinearPatch& patch,
                         std::span<const cplx> density, WaveNumber k, int duffy_n = 8);

}  // namespace hfmm::kernel

#endif
