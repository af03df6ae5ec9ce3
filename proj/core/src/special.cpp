#include "hfmm/special.hpp"

#include <algorithm>
#include <cmath>

namespace hfmm::sf {

static cplx sph_j0(cplx z) {
  if (std::abs(z) < 1e-6) {
    cplx z2 = z * z;
    return 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
  }
  return std::sin(z) / z;
}

void sph_jn(int nmax, cplx z, cplx* out) {
  double az = std::abs(z);
  if (az < 0.5) {
    // ascending series j_n = z^n/(2n+1)!! sum_k (-z^2/2)^k / (k! (2n+3)...(2n+2k+1))
    cplx z2h = 0.5 * z * z;
    cplx zn = 1.0;           // z^n
    double dfact = 1.0;      // (2n+1)!!
    for (int n = 0; n <= nmax; ++n) {
      cplx term = 1.0, s = 1.0;
      for (int k = 1; k < 40; ++k) {
        term *= -z2h / double(k * (2 * n + 2 * k + 1));
        s += term;
        if (std::abs(term) < 1e-18 * std::abs(s)) break;
      }
      out[n] = zn / dfact * s;
      zn *= z;
      dfact *= double(2 * n + 3);
    }
    return;
  }
  // Miller downward recurrence normalized by j_0
  int nstart = nmax + 16 + int(az);
  cplx fp = 0.0, f = 1e-30;
  std::vector<cplx> tmp(nmax + 1);
  for (int n = nstart; n >= 0; --n) {
    cplx fm = (2.0 * n + 3.0) / z * f - fp;
    fp = f;
    f = fm;
    if (n <= nmax) tmp[n] = f;
    if (std::abs(f) > 1e250) {  // rescale to avoid overflow
      double s = 1e-250;
      f *= s;
      fp *= s;
      for (int i = std::min(n, nmax); i <= nmax; ++i) tmp[i] *= s;
    }
  }
  cplx scale = sph_j0(z) / f;
  for (int n = 0; n <= nmax; ++n) out[n] = tmp[n] * scale;
}

void sph_hn(int nmax, cplx z, cplx* out) {
  if (std::abs(z) == 0.0) throw singular_error("sph_hn: argument is zero");
  const cplx I(0.0, 1.0);
  cplx eiz = std::exp(I * z);
  out[0] = -I * eiz / z;
  if (nmax == 0) return;
  out[1] = -eiz * (z + I) / (z * z);
  for (int n = 1; n < nmax; ++n)
    out[n + 1] = (2.0 * n + 1.0) / z * out[n] - out[n - 1];
}

double legendre_pn(int n, double x) {
  if (n == 0) return 1.0;
  double pm = 1.0, p = x;
  for (int k = 1; k < n; ++k) {
    double pn = ((2.0 * k + 1.0) * x * p - k * pm) / (k + 1.0);
    pm = p;
    p = pn;
  }
  return p;
}

// fully-normalized associated Legendre with Condon-Shortley phase folded in:
// Pbar_n^m(x) such that Y_n^m = Pbar_n^m(cos theta) e^{im phi}
static void pbar_all(int nmax, double x, double s, std::vector<double>& pb) {
  // pb indexed by n*(n+1)/2 + m for 0 <= m <= n
  auto at = [&pb](int n, int m) -> double& { return pb[n * (n + 1) / 2 + m]; };
  at(0, 0) = std::sqrt(1.0 / (4.0 * PI));
  for (int m = 1; m <= nmax; ++m)
    at(m, m) = -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * at(m - 1, m - 1);
  for (int m = 0; m < nmax; ++m)
    at(m + 1, m) = std::sqrt(2.0 * m + 3.0) * x * at(m, m);
  for (int m = 0; m <= nmax; ++m)
    for (int n = m + 2; n <= nmax; ++n) {
      double a = std::sqrt((4.0 * n * n - 1.0) / (double(n) * n - double(m) * m));
      double b = std::sqrt(((2.0 * n + 1.0) * (n - 1.0 + m) * (n - 1.0 - m)) /
                           ((2.0 * n - 3.0) * (double(n) * n - double(m) * m)));
      at(n, m) = a * x * at(n - 1, m) - b * at(n - 2, m);
    }
}

void ynm(int nmax, double theta, double phi, cplx* out) {
  double x = std::cos(theta), s = std::sin(theta);
  std::vector<double> pb((nmax + 1) * (nmax + 2) / 2);
  pbar_all(nmax, x, s, pb);
  auto at = [&pb](int n, int m) { return pb[n * (n + 1) / 2 + m]; };
  for (int n = 0; n <= nmax; ++n) {
    out[nm_index(n, 0)] = at(n, 0);
    for (int m = 1; m <= n; ++m) {
      cplx e(std::cos(m * phi), std::sin(m * phi));
      cplx v = at(n, m) * e;
      out[nm_index(n, m)] = v;
      double sg = (m % 2) ? -1.0 : 1.0;
      out[nm_index(n, -m)] = sg * std::conj(v);
    }
  }
}

void ynm(int nmax, const Vec3& dir, cplx* out) {
  double r = dir.norm();
  if (r == 0.0) {  // direction degenerate: only the monopole term is defined
    for (int i = 0; i < nm_total(nmax); ++i) out[i] = 0.0;
    out[0] = std::sqrt(1.0 / (4.0 * PI));
    return;
  }
  double theta = std::acos(std::clamp(dir.z / r, -1.0, 1.0));
  double phi = std::atan2(dir.y, dir.x);
  ynm(nmax, theta, phi, out);
}

static long double lfact(int n) {  // log(n!)
  static std::vector<long double> table = [] {
    std::vector<long double> t(512);
    t[0] = 0.0L;
    for (size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] + std::log((long double)i);
    return t;
  }();
  return table[n];
}

double wigner3j(int j1, int j2, int j3, int m1, int m2, int m3) {
  if (m1 + m2 + m3 != 0) return 0.0;
  if (j3 < std::abs(j1 - j2) || j3 > j1 + j2) return 0.0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(m3) > j3) return 0.0;
  long double pre = 0.5L * (lfact(j1 + j2 - j3) + lfact(j1 - j2 + j3) + lfact(-j1 + j2 + j3) -
                            lfact(j1 + j2 + j3 + 1) + lfact(j1 + m1) + lfact(j1 - m1) +
                            lfact(j2 + m2) + lfact(j2 - m2) + lfact(j3 + m3) + lfact(j3 - m3));
  int kmin = std::max({0, j2 - j3 - m1, j1 - j3 + m2});
  int kmax = std::min({j1 + j2 - j3, j1 - m1, j2 + m2});
  long double sum = 0.0L;
  for (int k = kmin; k <= kmax; ++k) {
    long double lt = lfact(k) + lfact(j1 + j2 - j3 - k) + lfact(j1 - m1 - k) +
                     lfact(j2 + m2 - k) + lfact(j3 - j2 + m1 + k) + lfact(j3 - j1 - m2 + k);
    long double term = std::exp(pre - lt);
    sum += (k % 2) ? -term : term;
  }
  int ph = j1 - j2 - m3;
  double sign = (((ph % 2) + 2) % 2) ? -1.0 : 1.0;
  return double(sign * sum);
}

}  // namespace hfmm::sf
