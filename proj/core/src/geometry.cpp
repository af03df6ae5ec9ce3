#include "hfmm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace hfmm::geom {

Vec3 CurvilinearPatch::centroid() const {
  Vec3 c;
  for (const auto& n : node) c += n;
  return c / 6.0;
}

double CurvilinearPatch::diameter() const {
  Vec3 c = centroid();
  double r = 0;
  for (const auto& n : node) r = std::max(r, (n - c).norm());
  return 2.0 * r;
}

std::array<double, 6> shape6(double z, double e) {
  double l1 = 1.0 - z - e, l2 = z, l3 = e;
  return {l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
          4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1};
}

std::array<std::array<double, 2>, 6> dshape6(double z, double e) {
  double l1 = 1.0 - z - e;
  // d l1 = (-1,-1), d l2 = (1,0), d l3 = (0,1)
  return {{{-(4 * l1 - 1), -(4 * l1 - 1)},
           {4 * z - 1, 0},
           {0, 4 * e - 1},
           {4 * (l1 - z), -4 * z},
           {4 * e, 4 * z},
           {-4 * e, 4 * (l1 - e)}}};
}

Vec3 map_to_physical(const CurvilinearPatch& p, double z, double e) {
  auto n = shape6(z, e);
  Vec3 r;
  for (int k = 0; k < 6; ++k) r += n[k] * p.node[k];
  return r;
}

JacobianData jacobian(const CurvilinearPatch& p, double z, double e) {
  auto dn = dshape6(z, e);
  Vec3 tz, te;
  for (int k = 0; k < 6; ++k) {
    tz += dn[k][0] * p.node[k];
    te += dn[k][1] * p.node[k];
  }
  Vec3 cr = tz.cross(te);
  double mag = cr.norm();
  if (mag <= 1e-14 * std::max(1.0, tz.norm() * te.norm()))
    throw geometry_error("jacobian: degenerate patch mapping");
  return {mag, cr / mag, tz, te};
}

// exact monomial moment over the reference triangle
static double tri_moment(int p, int q) {
  // p! q! / (p+q+2)!
  double v = 1.0;
  for (int i = 1; i <= p; ++i) v *= i;
  for (int i = 1; i <= q; ++i) v *= i;
  for (int i = 1; i <= p + q + 2; ++i) v /= i;
  return v;
}

// dunavant degree-6 twelve-point layout (barycentric orbits)
static std::vector<std::array<double, 2>> dunavant12_nodes() {
  const double a1 = 0.873821971016996, b1 = 0.063089014491502;
  const double a2 = 0.501426509658179, b2 = 0.249286745170910;
  const double a3 = 0.636502499121399, b3 = 0.310352451033785, c3 = 0.053145049844816;
  auto pt = [](double l2, double l3) { return std::array<double, 2>{l2, l3}; };
  std::vector<std::array<double, 2>> n;
  // 3-orbits: permutations of (a,b,b)
  for (auto [a, b] : {std::pair{a1, b1}, std::pair{a2, b2}}) {
    n.push_back(pt(b, b));  // l1 = a
    n.push_back(pt(a, b));
    n.push_back(pt(b, a));
  }
  // 6-orbit: permutations of (a3,b3,c3)
  n.push_back(pt(b3, c3));
  n.push_back(pt(c3, b3));
  n.push_back(pt(a3, c3));
  n.push_back(pt(c3, a3));
  n.push_back(pt(a3, b3));
  n.push_back(pt(b3, a3));
  return n;
}

static const std::vector<double> kDunavant12W = [] {
  const double w1 = 0.050844906370207, w2 = 0.116786275726379, w3 = 0.082851075618374;
  std::vector<double> w = {w1, w1, w1, w2, w2, w2, w3, w3, w3, w3, w3, w3};
  double s = 0;
  for (double x : w) s += x;
  for (double& x : w) x *= 1.0 / s;  // pin the sum exactly to 1 (ref area applied later)
  return w;
}();

// monomial exponents spanning the order-3 interpolation space
static const std::array<std::array<int, 2>, 12> kCubicMono = {{{0, 0},
                                                               {1, 0},
                                                               {0, 1},
                                                               {2, 0},
                                                               {1, 1},
                                                               {0, 2},
                                                               {3, 0},
                                                               {2, 1},
                                                               {1, 2},
                                                               {0, 3},
                                                               {3, 1},
                                                               {1, 3}}};

static std::vector<std::vector<double>> invert(std::vector<std::vector<double>> a) {
  int n = int(a.size());
  std::vector<std::vector<double>> inv(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    if (std::fabs(a[piv][c]) < 1e-12) throw geometry_error("lagrange_basis: singular node layout");
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    double d = a[c][c];
    for (int j = 0; j < n; ++j) {
      a[c][j] /= d;
      inv[c][j] /= d;
    }
    for (int r = 0; r < n; ++r) {
      if (r == c) continue;
      double f = a[r][c];
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        a[r][j] -= f * a[c][j];
        inv[r][j] -= f * inv[c][j];
      }
    }
  }
  return inv;
}

LagrangeBasis::LagrangeBasis(int order) : order_(order) {
  if (order == 1) {
    nodes_ = {{0, 0}, {1, 0}, {0, 1}};
    weights_.assign(3, tri_moment(0, 0) / 3.0);
  } else if (order == 2) {
    nodes_ = {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}, {0, 0.5}};
    // corner functions integrate to zero; midsides carry the area
    weights_ = {0, 0, 0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
  } else if (order == 3) {
    nodes_ = dunavant12_nodes();
    std::vector<std::vector<double>> v(12, std::vector<double>(12));
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j)
        v[i][j] = std::pow(nodes_[i][0], kCubicMono[j][0]) *
                  std::pow(nodes_[i][1], kCubicMono[j][1]);
    auto vinv = invert(v);  // coef of basis i = column i of V^-1
    coef_.assign(12, std::vector<double>(12));
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j) coef_[i][j] = vinv[j][i];
    weights_.assign(12, 0.0);
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j)
        weights_[i] += coef_[i][j] * tri_moment(kCubicMono[j][0], kCubicMono[j][1]);
  } else {
    throw config_error("lagrange_basis: unsupported order " + std::to_string(order));
  }
}

std::vector<double> LagrangeBasis::eval(double z, double e) const {
  if (order_ == 1) return {1.0 - z - e, z, e};
  if (order_ == 2) {
    auto s = shape6(z, e);
    return std::vector<double>(s.begin(), s.end());
  }
  std::vector<double> mono(12), out(12, 0.0);
  for (int j = 0; j < 12; ++j)
    mono[j] = std::pow(z, kCubicMono[j][0]) * std::pow(e, kCubicMono[j][1]);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) out[i] += coef_[i][j] * mono[j];
  return out;
}

const LagrangeBasis& lagrange_basis(int order) {
  static std::mutex mu;
  static std::array<const LagrangeBasis*, 4> cache = {};
  if (order < 1 || order > 3)
    throw config_error("lagrange_basis: unsupported order " + std::to_string(order));
  std::lock_guard<std::mutex> lk(mu);
  if (!cache[order]) cache[order] = new LagrangeBasis(order);
  return *cache[order];
}

// Gauss-Legendre nodes/weights on [0,1]
static void gauss_legendre01(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(PI * (i + 0.75) / (n + 0.5));  // initial guess on [-1,1]
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 1; k < n; ++k) {
        double p2 = ((2.0 * k + 1.0) * t * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::fabs(dt) < 1e-15) break;
    }
    double p0 = 1.0, p1 = t;
    for (int k = 1; k < n; ++k) {
      double p2 = ((2.0 * k + 1.0) * t * p1 - k * p0) / (k + 1.0);
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (t * p1 - p0) / (t * t - 1.0);
    x[i] = 0.5 * (t + 1.0);
    w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
  }
}

// collapsed-square rule: n x n tensor Gauss mapped onto the triangle,
// exact through total degree 2n-2, all weights positive
static TriangleRule collapsed_rule(int n) {
  std::vector<double> x, w;
  gauss_legendre01(n, x, w);
  TriangleRule r;
  r.degree = 2 * n - 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double u = x[i], v = x[j];
      r.pts.push_back({u, v * (1.0 - u), w[i] * w[j] * (1.0 - u)});
    }
  return r;
}

static TriangleRule make_rule(int npoints) {
  TriangleRule r;
  auto push_orbit3 = [&r](double a, double b, double w) {
    r.pts.push_back({b, b, w});
    r.pts.push_back({a, b, w});
    r.pts.push_back({b, a, w});
  };
  switch (npoints) {
    case 1:
      r.pts.push_back({1.0 / 3.0, 1.0 / 3.0, 0.5});
      r.degree = 1;
      return r;
    case 3:
      push_orbit3(2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0);
      r.degree = 2;
      return r;
    case 6: {
      push_orbit3(0.816847572980459, 0.091576213509771, 0.109951743655322 * 0.5);
      push_orbit3(0.108103018168070, 0.445948490915965, 0.223381589678011 * 0.5);
      r.degree = 4;
      return r;
    }
    case 7: {
      r.pts.push_back({1.0 / 3.0, 1.0 / 3.0, 0.225 * 0.5});
      push_orbit3(0.797426985353087, 0.101286507323456, 0.125939180544827 * 0.5);
      push_orbit3(0.059715871789770, 0.470142064105115, 0.132394152788506 * 0.5);
      r.degree = 5;
      return r;
    }
    case 12: {
      auto nodes = dunavant12_nodes();
      for (int i = 0; i < 12; ++i)
        r.pts.push_back({nodes[i][0], nodes[i][1], kDunavant12W[i] * 0.5});
      r.degree = 6;
      return r;
    }
    case 16:
      return collapsed_rule(4);
    case 25:
      return collapsed_rule(5);
    default:
      throw config_error("gauss_rule: unsupported point count " + std::to_string(npoints));
  }
}

const TriangleRule& gauss_rule(int npoints) {
  static std::mutex mu;
  static std::vector<std::pair<int, TriangleRule>> cache;
  std::lock_guard<std::mutex> lk(mu);
  for (auto& [n, r] : cache)
    if (n == npoints) return r;
  cache.emplace_back(npoints, make_rule(npoints));
  return cache.back().second;
}

namespace {

// one wedge (z0,e0)-p1-p2 of the duffy decomposition; the radial direction is
// collapsed so a 1/R singularity at the apex is integrated exactly in u.
// wide wedges make the angular integrand stiff, so bisect the far edge until
// the subtended angle is moderate
void emit_wedge(double z0, double e0, const std::array<double, 2>& p1,
                const std::array<double, 2>& p2, const std::vector<double>& x,
                const std::vector<double>& w, int depth,
                std::vector<QuadraturePoint>& out) {
  double a2 = (p1[0] - z0) * (p2[1] - e0) - (p1[1] - e0) * (p2[0] - z0);  // signed 2*area
  if (std::fabs(a2) < 1e-14) return;  // singular point on this edge: wedge degenerates
  double r1 = std::hypot(p1[0] - z0, p1[1] - e0);
  double r2 = std::hypot(p2[0] - z0, p2[1] - e0);
  double dot = (p1[0] - z0) * (p2[0] - z0) + (p1[1] - e0) * (p2[1] - e0);
  double ang = std::atan2(std::fabs(a2), dot);
  if (depth < 6 && (ang > 0.55 || std::max(r1, r2) > 3.0 * std::min(r1, r2))) {
    std::array<double, 2> mid = {0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])};
    emit_wedge(z0, e0, p1, mid, x, w, depth + 1, out);
    emit_wedge(z0, e0, mid, p2, x, w, depth + 1, out);
    return;
  }
  int n = int(x.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double u = x[i], t = x[j];
      double z = z0 + u * ((p1[0] - z0) + t * (p2[0] - p1[0]));
      double e = e0 + u * ((p1[1] - e0) + t * (p2[1] - p1[1]));
      out.push_back({z, e, w[i] * w[j] * u * std::fabs(a2)});
    }
}

}  // namespace

std::vector<QuadraturePoint> duffy_rule(double z0, double e0, int n) {
  const double tol = 1e-12;
  if (z0 < -tol || e0 < -tol || z0 + e0 > 1.0 + tol)
    throw std::domain_error("duffy_rule: singular point outside reference triangle");
  if (n < 1) throw config_error("duffy_rule: need at least one point per dimension");
  std::vector<double> x, w;
  gauss_legendre01(n, x, w);
  const std::array<std::array<double, 2>, 3> v = {{{0, 0}, {1, 0}, {0, 1}}};
  std::vector<QuadraturePoint> out;
  for (int s = 0; s < 3; ++s) emit_wedge(z0, e0, v[s], v[(s + 1) % 3], x, w, 0, out);
  return out;
}

}  // namespace hfmm::geom
