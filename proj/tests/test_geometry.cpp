#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <hfmm/geometry.hpp>

#include <cmath>
#include <random>

#include "support/test_oracles.hpp"

using namespace hfmm;
using namespace hfmm::geom;

namespace {

// uniform sample of the reference triangle by reflection
std::array<double, 2> sample_ref(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng);
  if (a + b > 1.0) {
    a = 1.0 - a;
    b = 1.0 - b;
  }
  return {a, b};
}

CurvilinearPatch flat_right_triangle() {
  CurvilinearPatch p;
  p.node = {Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0},
            Vec3{0.5, 0, 0}, Vec3{0.5, 0.5, 0}, Vec3{0, 0.5, 0}};
  return p;
}

CurvilinearPatch bumped_patch() {
  CurvilinearPatch p = flat_right_triangle();
  p.node[3] = Vec3{0.5, -0.05, 0.22};
  p.node[4] = Vec3{0.55, 0.5, -0.13};
  p.node[5] = Vec3{-0.02, 0.45, 0.3};
  return p;
}

}  // namespace

TEST_CASE("geometric shape functions: kronecker and partition of unity") {
  const std::array<std::array<double, 2>, 6> ref = {
      {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}, {0, 0.5}}};
  for (int i = 0; i < 6; ++i) {
    auto n = shape6(ref[i][0], ref[i][1]);
    for (int k = 0; k < 6; ++k) CHECK(n[k] == doctest::Approx(i == k ? 1.0 : 0.0).epsilon(1e-14));
  }
  std::mt19937_64 rng(21);
  for (int t = 0; t < 1000; ++t) {
    auto [z, e] = sample_ref(rng);
    auto n = shape6(z, e);
    double s = 0;
    for (double v : n) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
    // gradients of a partition of unity sum to zero
    auto d = dshape6(z, e);
    double gz = 0, ge = 0;
    for (auto& g : d) {
      gz += g[0];
      ge += g[1];
    }
    CHECK(std::fabs(gz) < 1e-12);
    CHECK(std::fabs(ge) < 1e-12);
  }
}

TEST_CASE("shape function derivatives match finite differences") {
  std::mt19937_64 rng(22);
  const double h = 1e-6;
  for (int t = 0; t < 300; ++t) {
    auto [z, e] = sample_ref(rng);
    z = 0.02 + 0.9 * z;  // keep the stencil inside
    e = 0.02 + 0.9 * e;
    if (z + e > 0.97) continue;
    auto d = dshape6(z, e);
    auto fz1 = shape6(z + h, e), fz0 = shape6(z - h, e);
    auto fe1 = shape6(z, e + h), fe0 = shape6(z, e - h);
    for (int k = 0; k < 6; ++k) {
      CHECK(d[k][0] == doctest::Approx((fz1[k] - fz0[k]) / (2 * h)).epsilon(1e-6).scale(1.0));
      CHECK(d[k][1] == doctest::Approx((fe1[k] - fe0[k]) / (2 * h)).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("mapping reproduces nodes and the flat-patch center") {
  auto flat = flat_right_triangle();
  Vec3 c = map_to_physical(flat, 0.5, 0.5);
  CHECK(c.x == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.y == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.z == doctest::Approx(0.0).epsilon(1e-15));

  auto curved = bumped_patch();
  const std::array<std::array<double, 2>, 6> ref = {
      {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}, {0, 0.5}}};
  for (int i = 0; i < 6; ++i) {
    Vec3 r = map_to_physical(curved, ref[i][0], ref[i][1]);
    CHECK((r - curved.node[i]).norm() < 1e-14);
  }
}

TEST_CASE("jacobian of the flat unit right triangle") {
  auto flat = flat_right_triangle();
  std::mt19937_64 rng(23);
  for (int t = 0; t < 200; ++t) {
    auto [z, e] = sample_ref(rng);
    auto J = jacobian(flat, z, e);
    CHECK(J.mag == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(J.normal.x == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(J.normal.y == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(std::fabs(J.normal.z) == doctest::Approx(1.0).epsilon(1e-13));
  }
}

TEST_CASE("jacobian tangents match finite differences on a curved patch") {
  auto p = bumped_patch();
  std::mt19937_64 rng(24);
  const double h = 1e-6;
  for (int t = 0; t < 300; ++t) {
    auto [z, e] = sample_ref(rng);
    z = 0.02 + 0.9 * z;
    e = 0.02 + 0.9 * e;
    if (z + e > 0.97) continue;
    auto J = jacobian(p, z, e);
    Vec3 tz = (map_to_physical(p, z + h, e) - map_to_physical(p, z - h, e)) * (0.5 / h);
    Vec3 te = (map_to_physical(p, z, e + h) - map_to_physical(p, z, e - h)) * (0.5 / h);
    CHECK((J.t_zeta - tz).norm() < 1e-5);
    CHECK((J.t_eta - te).norm() < 1e-5);
    Vec3 n = tz.cross(te);
    CHECK(J.mag == doctest::Approx(n.norm()).epsilon(1e-5));
    CHECK((J.normal - n * (1.0 / n.norm())).norm() < 1e-5);
    CHECK(J.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("jacobian scales quadratically under uniform scaling") {
  auto p = bumped_patch();
  auto q = p;
  for (auto& n : q.node) n = n * 2.0;
  std::mt19937_64 rng(29);
  for (int t = 0; t < 100; ++t) {
    auto [z, e] = sample_ref(rng);
    auto Jp = jacobian(p, z, e), Jq = jacobian(q, z, e);
    CHECK(Jq.mag == doctest::Approx(4.0 * Jp.mag).epsilon(1e-12));
    CHECK((Jq.normal - Jp.normal).norm() < 1e-12);
  }
}

TEST_CASE("duffy error falls monotonically as points double") {
  const std::array<std::array<double, 2>, 3> tri = {{{0, 0}, {1, 0}, {0, 1}}};
  const double x0 = 1.0 / 3.0, y0 = 1.0 / 3.0;
  double exact = oracles::tri_inv_r_analytic(tri, x0, y0);
  double prev = 1e300;
  for (int n : {2, 4, 8, 16}) {
    auto pts = duffy_rule(x0, y0, n);
    double acc = 0;
    for (auto& q : pts) acc += q.weight / std::hypot(q.zeta - x0, q.eta - y0);
    double err = std::fabs(acc - exact);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("collapsed patch raises a geometry error") {
  CurvilinearPatch p;
  // all nodes on one line
  for (int i = 0; i < 6; ++i) p.node[i] = Vec3{double(i), 2.0 * i, 0.0};
  CHECK_THROWS_AS(jacobian(p, 0.25, 0.25), geometry_error);
}

TEST_CASE("patch centroid and diameter") {
  auto flat = flat_right_triangle();
  Vec3 c = flat.centroid();
  Vec3 m = map_to_physical(flat, 1.0 / 3.0, 1.0 / 3.0);
  CHECK((c - m).norm() < 1e-14);
  // circumscribing ball around the node centroid: farthest node is a corner
  // at distance sqrt(5)/3 from (1/3, 1/3)
  CHECK(flat.diameter() == doctest::Approx(2.0 * std::sqrt(5.0) / 3.0).epsilon(1e-14));
}

TEST_CASE("density basis: kronecker property and node counts") {
  for (int order : {1, 2, 3}) {
    const auto& b = lagrange_basis(order);
    CHECK(b.order() == order);
    CHECK(b.count() == (order == 1 ? 3 : order == 2 ? 6 : 12));
    CHECK(int(b.nodes().size()) == b.count());
    CHECK(int(b.weights().size()) == b.count());
    for (int i = 0; i < b.count(); ++i) {
      auto v = b.eval(b.nodes()[i][0], b.nodes()[i][1]);
      for (int k = 0; k < b.count(); ++k)
        CHECK(v[k] == doctest::Approx(i == k ? 1.0 : 0.0).epsilon(5e-12).scale(1.0));
    }
  }
}

TEST_CASE("density basis: partition of unity") {
  std::mt19937_64 rng(25);
  for (int order : {1, 2, 3}) {
    const auto& b = lagrange_basis(order);
    for (int t = 0; t < 1000; ++t) {
      auto [z, e] = sample_ref(rng);
      auto v = b.eval(z, e);
      double s = 0;
      for (double x : v) s += x;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-11));
    }
  }
}

TEST_CASE("density basis reproduces polynomials up to its order") {
  std::mt19937_64 rng(26);
  for (int order : {1, 2, 3}) {
    const auto& b = lagrange_basis(order);
    auto poly = [&](double z, double e) {
      double acc = 0;
      int idx = 0;
      for (int d = 0; d <= order; ++d)
        for (int q = 0; q <= d; ++q) acc += (1.0 + 0.37 * ++idx) * std::pow(z, d - q) * std::pow(e, q);
      return acc;
    };
    std::vector<double> nodal(b.count());
    for (int i = 0; i < b.count(); ++i) nodal[i] = poly(b.nodes()[i][0], b.nodes()[i][1]);
    for (int t = 0; t < 500; ++t) {
      auto [z, e] = sample_ref(rng);
      auto v = b.eval(z, e);
      double acc = 0;
      for (int i = 0; i < b.count(); ++i) acc += v[i] * nodal[i];
      CHECK(acc == doctest::Approx(poly(z, e)).epsilon(1e-9));
    }
  }
}

TEST_CASE("density basis weights are the basis integrals") {
  // order 1: each linear hat integrates to 1/6; order 2: the corner functions
  // integrate to exactly zero and the midside ones to 1/6
  const auto& b1 = lagrange_basis(1);
  for (double w : b1.weights()) CHECK(w == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  const auto& b2 = lagrange_basis(2);
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(b2.weights()[i]) < 1e-15);
  for (int i = 3; i < 6; ++i) CHECK(b2.weights()[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  // any order: weights match an adaptive quadrature of each basis function
  for (int order : {1, 2, 3}) {
    const auto& b = lagrange_basis(order);
    double total = 0;
    for (int i = 0; i < b.count(); ++i) {
      double ref = oracles::tri_adaptive_smooth(
          [&](double z, double e) { return b.eval(z, e)[i]; }, 1e-12);
      CHECK(b.weights()[i] == doctest::Approx(ref).epsilon(1e-9).scale(1.0));
      total += b.weights()[i];
    }
    CHECK(total == doctest::Approx(0.5).epsilon(1e-13));
  }
}

TEST_CASE("triangle rules: weight sum and degree exactness") {
  for (int np : {1, 3, 6, 7, 12, 16, 25}) {
    const auto& rule = gauss_rule(np);
    CHECK(int(rule.pts.size()) == np);
    double s = 0;
    for (auto& q : rule.pts) {
      s += q.weight;
      CHECK(q.weight > 0.0);
      CHECK(q.zeta >= -1e-14);
      CHECK(q.eta >= -1e-14);
      CHECK(q.zeta + q.eta <= 1.0 + 1e-14);
    }
    CHECK(s == doctest::Approx(0.5).epsilon(1e-14));
    for (int d = 0; d <= rule.degree; ++d)
      for (int q = 0; q <= d; ++q) {
        int p = d - q;
        double acc = 0;
        for (auto& pt : rule.pts) acc += pt.weight * std::pow(pt.zeta, p) * std::pow(pt.eta, q);
        double ref = oracles::tri_moment(p, q);
        CHECK(acc == doctest::Approx(ref).epsilon(1e-11).scale(std::max(ref, 1e-6)));
      }
  }
  CHECK_THROWS_AS(gauss_rule(4), config_error);
  CHECK_THROWS_AS(gauss_rule(0), config_error);
}

TEST_CASE("rule degrees are as advertised, not higher-order flukes") {
  // one degree past the stated exactness must visibly fail for at least
  // one monomial (guards against mislabeled tables)
  for (int np : {1, 3, 6, 7, 12, 16, 25}) {
    const auto& rule = gauss_rule(np);
    int d = rule.degree + 1;
    double worst = 0;
    for (int q = 0; q <= d; ++q) {
      int p = d - q;
      double acc = 0;
      for (auto& pt : rule.pts) acc += pt.weight * std::pow(pt.zeta, p) * std::pow(pt.eta, q);
      worst = std::max(worst, std::fabs(acc - oracles::tri_moment(p, q)));
    }
    CHECK(worst > 1e-9);
  }
}

TEST_CASE("duffy rule integrates constants exactly for interior points") {
  std::mt19937_64 rng(27);
  for (int t = 0; t < 200; ++t) {
    auto [z, e] = sample_ref(rng);
    auto pts = duffy_rule(z, e, 6);
    double s = 0;
    for (auto& q : pts) {
      CHECK(std::isfinite(q.weight));
      CHECK(q.weight >= 0.0);
      CHECK(q.zeta >= -1e-12);
      CHECK(q.eta >= -1e-12);
      CHECK(q.zeta + q.eta <= 1.0 + 1e-12);
      s += q.weight;
    }
    CHECK(s == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("duffy rule handles vertex and edge singular points") {
  for (auto [z, e] : std::array<std::array<double, 2>, 5>{
           {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}}}) {
    auto pts = duffy_rule(z, e, 8);
    double s = 0;
    for (auto& q : pts) s += q.weight;
    CHECK(s == doctest::Approx(0.5).epsilon(1e-12));
  }
  CHECK_THROWS_AS(duffy_rule(0.8, 0.8, 4), std::domain_error);
  CHECK_THROWS_AS(duffy_rule(-0.1, 0.2, 4), std::domain_error);
}

TEST_CASE("duffy rule against the singular reference integral") {
  // integral of 1/|x - x0| over the reference triangle, singular point at the
  // centroid; analytic wedge formula and adaptive subdivision agree first,
  // then the duffy rule must match
  const std::array<std::array<double, 2>, 3> tri = {{{0, 0}, {1, 0}, {0, 1}}};
  const double x0 = 1.0 / 3.0, y0 = 1.0 / 3.0;
  double exact = oracles::tri_inv_r_analytic(tri, x0, y0);
  double adaptive = oracles::tri_inv_r_adaptive(tri, x0, y0);
  CHECK(exact == doctest::Approx(2.407229923164009).epsilon(1e-12));
  CHECK(adaptive == doctest::Approx(exact).epsilon(2e-5));

  for (int n : {8, 12, 16}) {
    auto pts = duffy_rule(x0, y0, n);
    double acc = 0;
    for (auto& q : pts) acc += q.weight / std::hypot(q.zeta - x0, q.eta - y0);
    double tol = (n >= 12) ? 1e-8 : 1e-6;
    CHECK(acc == doctest::Approx(exact).epsilon(tol));
  }

  // off-center singular points
  std::mt19937_64 rng(28);
  for (int t = 0; t < 40; ++t) {
    auto [z, e] = sample_ref(rng);
    z = 0.05 + 0.8 * z;
    e = 0.05 + 0.8 * e;
    if (z + e > 0.9) continue;
    double ref = oracles::tri_inv_r_analytic(tri, z, e);
    auto pts = duffy_rule(z, e, 12);
    double acc = 0;
    for (auto& q : pts) acc += q.weight / std::hypot(q.zeta - z, q.eta - e);
    CHECK(acc == doctest::Approx(ref).epsilon(1e-7));
  }
}

TEST_CASE("duffy rule integrates smooth functions like a plain rule") {
  auto f = [](double z, double e) { return std::cos(3 * z) * std::exp(e) + z * z * e; };
  double ref = oracles::tri_adaptive_smooth(f, 1e-13);
  auto pts = duffy_rule(0.3, 0.25, 14);
  double acc = 0;
  for (auto& q : pts) acc += q.weight * f(q.zeta, q.eta);
  CHECK(acc == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("property: random polynomials within rule degree integrate exactly") {
  const int sizes[] = {1, 3, 6, 7, 12, 16, 25};
  std::mt19937_64 rng(915);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 6);
  for (int t = 0; t < 1000; ++t) {
    const auto& rule = gauss_rule(sizes[pick(rng)]);
    // random coefficients over every monomial the rule claims to handle
    std::vector<std::array<double, 3>> terms;  // {c, p, q}
    double scale = 1e-3;
    for (int d = 0; d <= rule.degree; ++d)
      for (int q = 0; q <= d; ++q) {
        const double c = coeff(rng);
        terms.push_back({c, double(d - q), double(q)});
        scale += std::fabs(c) * oracles::tri_moment(d - q, q);
      }
    double got = 0;
    for (const auto& pt : rule.pts) {
      double f = 0;
      for (const auto& [c, p, q] : terms)
        f += c * std::pow(pt.zeta, p) * std::pow(pt.eta, q);
      got += pt.weight * f;
    }
    double want = 0;
    for (const auto& [c, p, q] : terms)
      want += c * oracles::tri_moment(int(p), int(q));
    CHECK(std::fabs(got - want) <= 1e-11 * scale);
  }
}

TEST_CASE("property: duffy refinement converges on random singular points") {
  const std::array<std::array<double, 2>, 3> tri = {{{0, 0}, {1, 0}, {0, 1}}};
  std::mt19937_64 rng(916);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    double z, e;
    do {
      z = u(rng);
      e = u(rng);
    } while (z < 0.03 || e < 0.03 || z + e > 0.95);
    const double exact = oracles::tri_inv_r_analytic(tri, z, e);
    auto quad = [&](int n) {
      double acc = 0;
      for (const auto& q : duffy_rule(z, e, n))
        acc += q.weight / std::hypot(q.zeta - z, q.eta - e);
      return std::fabs(acc - exact) / exact;
    };
    const double coarse = quad(4), fine = quad(12);
    // measured tails: coarse stays under ~5e-6, fine reaches rounding level
    CHECK(fine <= 1e-11);
    CHECK(fine <= 0.1 * coarse + 1e-13);
  }
}
