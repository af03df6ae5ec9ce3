#ifndef HFMM_SPECIAL_HPP
#define HFMM_SPECIAL_HPP

#include <vector>

#include "hfmm/common.hpp"

namespace hfmm::sf {

// spherical Bessel j_0..j_nmax at complex argument (downward recurrence,
// series fallback near zero)
void sph_jn(int nmax, cplx z, cplx* out);

// spherical Hankel of the first kind h_0..h_nmax; z = 0 is singular
void sph_hn(int nmax, cplx z, cplx* out);

// Legendre polynomial P_n(x)
double legendre_pn(int n, double x);

// orthonormal spherical harmonics Y_n^m(theta,phi) for n <= nmax,
// flat layout idx = n*(n+1)+m, size (nmax+1)^2.
// Condon-Shortley phase, Y_n^{-m} = (-1)^m conj(Y_n^m).
void ynm(int nmax, double theta, double phi, cplx* out);
void ynm(int nmax, const Vec3& dir, cplx* out);

// Wigner 3j symbol; zero when selection rules fail
double wigner3j(int j1, int j2, int j3, int m1, int m2, int m3);

inline int nm_index(int n, int m) { return n * (n + 1) + m; }
inline int nm_total(int p) { return (p + 1) * (p + 1); }

}  // namespace hfmm::sf

#endif
