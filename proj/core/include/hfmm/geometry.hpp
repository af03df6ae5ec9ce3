#ifndef HFMM_GEOMETRY_HPP
#define HFMM_GEOMETRY_HPP

#include <array>
#include <vector>

#include "hfmm/common.hpp"

namespace hfmm::geom {

// curvilinear second-order triangle: 3 corner nodes then 3 edge midside nodes
// (midside k sits between corners k and (k+1)%3)
struct CurvilinearPatch {
  std::array<Vec3, 6> node;
  std::int32_t id = -1;

  Vec3 centroid() const;
  double diameter() const;  // circumscribed diameter of the node set
};

struct QuadraturePoint {
  double zeta, eta, weight;
};

struct JacobianData {
  double mag;   // surface Jacobian magnitude
  Vec3 normal;  // unit normal
  Vec3 t_zeta, t_eta;
};

// quadratic geometric shape functions on the reference triangle
// (0,0)-(1,0)-(0,1); N sums to 1, Kronecker at the 6 nodes
std::array<double, 6> shape6(double zeta, double eta);
std::array<std::array<double, 2>, 6> dshape6(double zeta, double eta);

Vec3 map_to_physical(const CurvilinearPatch& p, double zeta, double eta);
JacobianData jacobian(const CurvilinearPatch& p, double zeta, double eta);

// density interpolation basis of a given order: 1 -> 3 nodes, 2 -> 6 nodes,
// 3 -> 12 nodes.  Kronecker at its nodes, partition of unity on the triangle.
class LagrangeBasis {
 public:
  explicit LagrangeBasis(int order);
  int order() const { return order_; }
  int count() const { return int(nodes_.size()); }
  const std::vector<std::array<double, 2>>& nodes() const { return nodes_; }
  // integral of each basis function over the reference triangle
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double> eval(double zeta, double eta) const;

 private:
  int order_;
  std::vector<std::array<double, 2>> nodes_;
  std::vector<double> weights_;
  std::vector<std::vector<double>> coef_;  // monomial coefficients per basis fn (order 3)
};

const LagrangeBasis& lagrange_basis(int order);

// symmetric triangle rules; supported point counts {1,3,6,7,12,16,25}
struct TriangleRule {
  std::vector<QuadraturePoint> pts;
  int degree;  // highest total polynomial degree integrated exactly
};
const TriangleRule& gauss_rule(int npoints);

// composite tensor-Gauss rule concentrating points toward a singular point
// inside (or on the boundary of) the reference triangle; the transform's
// Jacobian cancels a 1/R singularity at (zeta0, eta0)
std::vector<QuadraturePoint> duffy_rule(double zeta0, double eta0, int n_per_dim);

}  // namespace hfmm::geom

#endif
