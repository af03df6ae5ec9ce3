#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfmm/common.hpp"

namespace hfmm::fmm {

// Cubified axis-aligned domain. All Morton arithmetic happens in this box;
// bodies on the upper faces are owned by the boundary octants (inclusive).
struct DomainBox {
  Vec3 lo{};
  double width = 0;

  Vec3 center() const { return lo + Vec3{width / 2, width / 2, width / 2}; }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= lo.x + width && p.y >= lo.y &&
           p.y <= lo.y + width && p.z >= lo.z && p.z <= lo.z + width;
  }
};

// 3 bits per level, 21 levels in a 64-bit key.
inline constexpr int kMaxLevel = 21;

// Path key of the octant containing p, root-first digits (4x+2y+z per level).
// Level 0 is the whole box (key 0). Throws std::domain_error if p is outside.
std::uint64_t morton_key(const Vec3& p, const DomainBox& box, int level);

struct Body {
  Vec3 position{};
  cplx src{};
  cplx trg{};
  std::int32_t patch_id = -1;
  double weight = 1.0;
  std::uint64_t key = 0;   // Morton key at kMaxLevel, set by build_tree
  std::uint32_t index = 0; // position in the caller's original ordering
};

struct Expansion {
  int order = -1; // -1: not allocated
  std::vector<cplx> coeff;

  void resize(int p);
  void clear() { coeff.assign(coeff.size(), cplx{}); }
  bool allocated() const { return order >= 0; }
  cplx& at(int n, int m);
  cplx at(int n, int m) const;
};

struct Cell {
  std::uint64_t key = 0; // path digits up to `level`
  int level = 0;
  std::uint32_t ix = 0, iy = 0, iz = 0; // integer coords at `level`
  Vec3 center{};
  double radius = 0; // half diagonal of the octant cube
  std::uint32_t body_first = 0, body_count = 0;
  std::uint32_t child_first = 0, child_count = 0; // children are contiguous
  // grafted from another tree: the upward pass must keep its shipped
  // expansion instead of recomputing over (possibly pruned) children
  bool frozen = false;
  Expansion multipole;
  Expansion local;

  bool leaf() const { return child_count == 0; }
  double diameter() const { return 2 * radius; }
};

struct Octree {
  DomainBox box;
  std::vector<Body> bodies; // Morton order
  std::vector<Cell> cells;  // cells[0] is the root; parents precede children
  std::vector<std::uint32_t> leaves;
  int max_level_used = 0;
  std::size_t degenerate_leaves = 0; // over-capacity leaves at kMaxLevel

  double side(int level) const;
};

// cubified bounding box of the bodies, the lattice build_tree derives itself
DomainBox enclosing_box(std::span<const Body> bodies);

// Sorts bodies into Morton order and splits top-down while a cell holds more
// than `capacity` bodies. If max_leaf_diameter > 0, cells are also split until
// their diameter drops below it (wavelength sizing for the translation pass);
// coincident points can stop early at kMaxLevel and are tallied as degenerate.
Octree build_tree(std::vector<Body> bodies, int capacity,
                  double max_leaf_diameter = 0);

// same split rules on a caller-fixed box, so several trees can share one
// lattice. Every body must lie inside the box.
Octree build_tree(std::vector<Body> bodies, int capacity,
                  double max_leaf_diameter, const DomainBox& box);

} // namespace hfmm::fmm
