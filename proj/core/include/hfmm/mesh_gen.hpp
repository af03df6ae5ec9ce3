#ifndef HFMM_MESH_GEN_HPP
#define HFMM_MESH_GEN_HPP

#include <cstddef>

#include "hfmm/mesh_io.hpp"

namespace hfmm::meshio {

// curved triangulation of a sphere: latitude bands x longitude segments,
// pole caps as fans; midside nodes projected onto the sphere.
// element count = 2 * segments * (rings - 1)
SurfaceMesh sphere_mesh(double radius, int segments, int rings);

// picks (segments, rings) with an element count as close as possible to the
// target, preferring near-isotropic angular spacing
SurfaceMesh sphere_mesh_with_elements(double radius, std::size_t target_elements);

}  // namespace hfmm::meshio

#endif
