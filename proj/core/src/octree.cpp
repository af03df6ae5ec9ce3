#include "hfmm/octree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hfmm/special.hpp"

namespace hfmm::fmm {

void Expansion::resize(int p) {
  if (p < 0) throw config_error("expansion order must be non-negative");
  order = p;
  coeff.assign(sf::nm_total(p), cplx{});
}

cplx& Expansion::at(int n, int m) { return coeff[sf::nm_index(n, m)]; }
cplx Expansion::at(int n, int m) const { return coeff[sf::nm_index(n, m)]; }

double Octree::side(int level) const {
  return box.width / double(std::uint64_t(1) << level);
}

std::uint64_t morton_key(const Vec3& p, const DomainBox& box, int level) {
  if (level < 0 || level > kMaxLevel)
    throw config_error("morton level out of range");
  if (!(box.width > 0)) throw config_error("domain box has no extent");
  if (!box.contains(p))
    throw std::domain_error("point outside the octree domain box");

  const std::uint64_t n = std::uint64_t(1) << level;
  const double scale = double(n) / box.width;
  auto digitize = [&](double x, double lo) {
    auto i = std::int64_t((x - lo) * scale);
    if (i < 0) i = 0;
    if (i >= std::int64_t(n)) i = std::int64_t(n) - 1; // upper face inclusive
    return std::uint64_t(i);
  };
  const std::uint64_t ix = digitize(p.x, box.lo.x);
  const std::uint64_t iy = digitize(p.y, box.lo.y);
  const std::uint64_t iz = digitize(p.z, box.lo.z);

  std::uint64_t key = 0;
  for (int b = level - 1; b >= 0; --b) {
    const std::uint64_t digit =
        ((ix >> b & 1) << 2) | ((iy >> b & 1) << 1) | (iz >> b & 1);
    key = key << 3 | digit;
  }
  return key;
}

DomainBox enclosing_box(std::span<const Body> bodies) {
  if (bodies.empty()) throw config_error("no bodies to enclose");
  Vec3 lo = bodies.front().position;
  Vec3 hi = lo;
  for (const Body& b : bodies) {
    lo.x = std::min(lo.x, b.position.x);
    lo.y = std::min(lo.y, b.position.y);
    lo.z = std::min(lo.z, b.position.z);
    hi.x = std::max(hi.x, b.position.x);
    hi.y = std::max(hi.y, b.position.y);
    hi.z = std::max(hi.z, b.position.z);
  }
  double w = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  if (w <= 0) w = 1; // all bodies coincide
  w *= 1 + 1e-12;    // keep the hi faces strictly interior to the last octant
  const Vec3 c = (lo + hi) / 2.0;
  return DomainBox{c - Vec3{w / 2, w / 2, w / 2}, w};
}

namespace {

struct Builder {
  Octree& tree;
  int capacity;
  double max_diam;

  // digit of body i at tree level `level+1` given its full-depth key
  std::uint32_t digit_below(std::uint32_t i, int level) const {
    const int shift = 3 * (kMaxLevel - 1 - level);
    return std::uint32_t(tree.bodies[i].key >> shift & 7);
  }

  void build(std::uint32_t ci) {
    Cell& cell = tree.cells[ci]; // note: invalidated by appends below
    tree.max_level_used = std::max(tree.max_level_used, cell.level);
    const bool over_capacity = int(cell.body_count) > capacity;
    const bool over_diameter = max_diam > 0 && cell.diameter() > max_diam &&
                               cell.body_count > 0;
    if (!over_capacity && !over_diameter) {
      tree.leaves.push_back(ci);
      return;
    }
    if (cell.level == kMaxLevel) {
      if (over_capacity) ++tree.degenerate_leaves;
      tree.leaves.push_back(ci);
      return;
    }

    const std::uint32_t first = cell.body_first;
    const std::uint32_t count = cell.body_count;
    const int level = cell.level;

    std::uint32_t bucket_first[9];
    bucket_first[0] = first;
    std::uint32_t pos = first;
    for (std::uint32_t d = 0; d < 8; ++d) {
      while (pos < first + count && digit_below(pos, level) == d) ++pos;
      bucket_first[d + 1] = pos;
    }

    const std::uint32_t child_first = std::uint32_t(tree.cells.size());
    std::uint32_t nchildren = 0;
    for (std::uint32_t d = 0; d < 8; ++d) {
      if (bucket_first[d] == bucket_first[d + 1]) continue;
      const Cell& parent = tree.cells[ci];
      Cell child;
      child.level = level + 1;
      child.key = parent.key << 3 | d;
      child.ix = parent.ix << 1 | (d >> 2 & 1);
      child.iy = parent.iy << 1 | (d >> 1 & 1);
      child.iz = parent.iz << 1 | (d & 1);
      const double s = tree.side(child.level);
      child.center = tree.box.lo + Vec3{(child.ix + 0.5) * s,
                                        (child.iy + 0.5) * s,
                                        (child.iz + 0.5) * s};
      child.radius = s * std::sqrt(3.0) / 2;
      child.body_first = bucket_first[d];
      child.body_count = bucket_first[d + 1] - bucket_first[d];
      tree.cells.push_back(child);
      ++nchildren;
    }
    tree.cells[ci].child_first = child_first;
    tree.cells[ci].child_count = nchildren;
    for (std::uint32_t j = 0; j < nchildren; ++j) build(child_first + j);
  }
};

} // namespace

Octree build_tree(std::vector<Body> bodies, int capacity,
                  double max_leaf_diameter) {
  const DomainBox box = bodies.empty() ? DomainBox{{0, 0, 0}, 1}
                                       : enclosing_box(bodies);
  return build_tree(std::move(bodies), capacity, max_leaf_diameter, box);
}

Octree build_tree(std::vector<Body> bodies, int capacity,
                  double max_leaf_diameter, const DomainBox& box) {
  if (capacity < 1) throw config_error("leaf capacity must be at least 1");
  if (!(box.width > 0)) throw config_error("domain box has no extent");

  Octree tree;
  tree.box = box;
  if (bodies.empty()) {
    Cell root;
    root.center = tree.box.center();
    root.radius = tree.box.width * std::sqrt(3.0) / 2;
    tree.cells.push_back(root);
    tree.leaves.push_back(0);
    return tree;
  }
  for (std::uint32_t i = 0; i < bodies.size(); ++i) {
    bodies[i].index = i;
    bodies[i].key = morton_key(bodies[i].position, tree.box, kMaxLevel);
  }
  std::sort(bodies.begin(), bodies.end(), [](const Body& a, const Body& b) {
    return a.key != b.key ? a.key < b.key : a.index < b.index;
  });
  tree.bodies = std::move(bodies);

  Cell root;
  root.center = tree.box.center();
  root.radius = tree.box.width * std::sqrt(3.0) / 2;
  root.body_count = std::uint32_t(tree.bodies.size());
  tree.cells.push_back(root);

  Builder b{tree, capacity, max_leaf_diameter};
  b.build(0);
  return tree;
}

} // namespace hfmm::fmm
