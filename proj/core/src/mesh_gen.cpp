#include "hfmm/mesh_gen.hpp"

#include <cmath>
#include <vector>

namespace hfmm::meshio {

namespace {

Vec3 project(const Vec3& p, double r) {
  double n = p.norm();
  return p * (r / n);
}

Vec3 midside(const Vec3& a, const Vec3& b, double r) { return project((a + b) * 0.5, r); }

}  // namespace

SurfaceMesh sphere_mesh(double radius, int segments, int rings) {
  if (radius <= 0 || segments < 3 || rings < 2)
    throw config_error("sphere_mesh: need radius > 0, segments >= 3, rings >= 2");
  // shared lattice points are computed once so coincident corners and
  // midsides agree to the last bit across neighboring elements
  std::vector<std::vector<Vec3>> latt(rings + 1, std::vector<Vec3>(segments));
  for (int i = 0; i <= rings; ++i) {
    double theta = PI * double(i) / rings;
    double st = std::sin(theta), ct = std::cos(theta);
    for (int j = 0; j < segments; ++j) {
      double phi = 2.0 * PI * double(j) / segments;
      latt[i][j] = Vec3{radius * st * std::cos(phi), radius * st * std::sin(phi), radius * ct};
    }
  }
  // poles: a single point each, not segment copies
  Vec3 north{0, 0, radius}, south{0, 0, -radius};

  SurfaceMesh mesh;
  mesh.elements.reserve(std::size_t(2) * segments * (rings - 1));
  auto emit = [&](const Vec3& a, const Vec3& b, const Vec3& c) {
    ElementRecord el;
    el.node = {a, b, c, midside(a, b, radius), midside(b, c, radius), midside(c, a, radius)};
    mesh.elements.push_back(el);
  };
  for (int j = 0; j < segments; ++j) {
    int jn = (j + 1) % segments;
    emit(north, latt[1][j], latt[1][jn]);
    emit(south, latt[rings - 1][jn], latt[rings - 1][j]);
  }
  for (int i = 1; i + 1 < rings; ++i)
    for (int j = 0; j < segments; ++j) {
      int jn = (j + 1) % segments;
      emit(latt[i][j], latt[i + 1][j], latt[i][jn]);
      emit(latt[i + 1][j], latt[i + 1][jn], latt[i][jn]);
    }
  return mesh;
}

SurfaceMesh sphere_mesh_with_elements(double radius, std::size_t target) {
  if (target < 6) throw config_error("sphere_mesh_with_elements: target too small");
  int best_ns = 3, best_nl = 2;
  double best_score = 1e300;
  for (int nl = 2; nl <= 400; ++nl) {
    long long ns = std::llround(double(target) / (2.0 * (nl - 1)));
    if (ns < 3) ns = 3;
    long long count = 2 * ns * (nl - 1);
    // exact count first, near-square angular cells as the tiebreak
    double score = 1000.0 * std::llabs(count - (long long)target) +
                   std::fabs(double(ns) - 2.0 * nl);
    if (score < best_score) {
      best_score = score;
      best_ns = int(ns);
      best_nl = nl;
    }
  }
  return sphere_mesh(radius, best_ns, best_nl);
}

}  // namespace hfmm::meshio
