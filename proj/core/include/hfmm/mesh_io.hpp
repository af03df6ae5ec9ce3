#ifndef HFMM_MESH_IO_HPP
#define HFMM_MESH_IO_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/geometry.hpp"

namespace hfmm::meshio {

// one second-order triangle: 3 corners then 3 edge midsides
// (midside k between corners k and (k+1)%3)
struct ElementRecord {
  std::array<Vec3, 6> node;
};

struct SurfaceMesh {
  std::vector<ElementRecord> elements;
  std::size_t skipped = 0;  // elements the parser dropped (wrong type)

  std::size_t element_count() const { return elements.size(); }
  // order-2 discretization bookkeeping for a closed triangulation
  std::size_t unknown_count() const { return 6 * elements.size(); }
  std::size_t node_estimate() const { return 2 * elements.size(); }
  std::size_t edge_estimate() const { return 3 * elements.size(); }

  std::vector<geom::CurvilinearPatch> as_patches() const;
};

// GMSH MSH 2.2 ASCII; 6-node curved triangles (element type 9), everything
// else skipped and counted
SurfaceMesh parse_gmsh(std::istream& in);
void write_gmsh(const SurfaceMesh& mesh, std::ostream& out);

// big-endian block-readable format: 32-byte header (8-byte magic, u64
// version, u64 element count, u64 points per element) then 144-byte records
// of 18 f64 coordinates per element
inline constexpr char kBinaryMagic[9] = "HFMMMESH";
inline constexpr std::uint64_t kBinaryVersion = 1;

std::size_t write_binary(const SurfaceMesh& mesh, std::ostream& out);

// elements [floor(rank*E/nranks), floor((rank+1)*E/nranks)) of the stored
// mesh; the blocks of all ranks are a disjoint cover
SurfaceMesh read_block(std::istream& in, std::size_t rank, std::size_t nranks);

}  // namespace hfmm::meshio

#endif
