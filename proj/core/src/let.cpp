#include "hfmm/let.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "hfmm/expansion.hpp"

namespace hfmm::part {

using fmm::Body;
using fmm::Cell;
using fmm::DomainBox;
using fmm::Octree;

fmm::Cell make_super_root(const DomainBox& box, std::size_t total_bodies) {
  Cell c;
  c.key = 0;
  c.level = 0;
  c.center = box.center();
  c.radius = box.width * std::sqrt(3.0) / 2;
  c.body_first = 0;
  c.body_count = std::uint32_t(total_bodies);
  c.child_first = 1;
  c.child_count = 0; // assembly fills in the branch count
  c.frozen = true;
  return c;
}

namespace {

struct BranchSlice {
  std::span<const Cell> cells; // cells[0] is the branch root
  std::span<const Body> bodies;
};

// one tree out of several branches: the super root first, then every branch
// root (so the root's children are contiguous), then the branch interiors in
// branch order. relative order inside a branch is preserved, which keeps
// parents ahead of children and sibling blocks contiguous
Octree assemble_forest(const DomainBox& box, const Cell& super,
                       std::span<const BranchSlice> branches) {
  Octree tree;
  tree.box = box;

  const std::size_t nb = branches.size();
  std::size_t ncells = 1, nbodies = 0;
  for (const BranchSlice& b : branches) {
    ncells += b.cells.size();
    nbodies += b.bodies.size();
  }
  tree.cells.reserve(ncells);
  tree.bodies.reserve(nbodies);

  tree.cells.push_back(super);
  tree.cells[0].child_first = 1;
  tree.cells[0].child_count = std::uint32_t(nb);
  tree.cells[0].body_first = 0;
  tree.cells[0].body_count = std::uint32_t(nbodies);

  std::vector<std::uint32_t> cell_base(nb), body_base(nb);
  std::uint32_t cbase = std::uint32_t(1 + nb), bbase = 0;
  for (std::size_t r = 0; r < nb; ++r) {
    cell_base[r] = cbase;
    cbase += std::uint32_t(branches[r].cells.size() - 1);
    body_base[r] = bbase;
    bbase += std::uint32_t(branches[r].bodies.size());
  }

  auto place = [&](std::size_t r, Cell cell) {
    if (cell.child_count > 0)
      cell.child_first = cell_base[r] + (cell.child_first - 1);
    cell.body_first += body_base[r];
    tree.max_level_used = std::max(tree.max_level_used, cell.level);
    tree.cells.push_back(std::move(cell));
  };
  for (std::size_t r = 0; r < nb; ++r) place(r, branches[r].cells[0]);
  for (std::size_t r = 0; r < nb; ++r) {
    // the root's children start at branch index 1, landing on cell_base[r]
    for (std::size_t j = 1; j < branches[r].cells.size(); ++j)
      place(r, branches[r].cells[j]);
    Cell& root = tree.cells[1 + r];
    if (root.child_count > 0) root.child_first = cell_base[r];
  }
  for (const BranchSlice& b : branches)
    tree.bodies.insert(tree.bodies.end(), b.bodies.begin(), b.bodies.end());
  for (std::uint32_t i = 0; i < tree.cells.size(); ++i)
    if (tree.cells[i].child_count == 0) tree.leaves.push_back(i);
  return tree;
}

BranchSlice slice_of(const Octree& tree) {
  return {std::span<const Cell>(tree.cells), std::span<const Body>(tree.bodies)};
}

} // namespace

ForestStructure build_forest(std::span<const Body> bodies,
                             const PartitionPlan& plan, int capacity,
                             double max_leaf_diameter) {
  if (plan.nranks < 1) throw config_error("plan has no ranks");
  if (plan.assignment.size() != bodies.size())
    throw config_error("plan assignment does not match the body list");

  ForestStructure forest;
  forest.box = fmm::enclosing_box(bodies);
  forest.super_root = make_super_root(forest.box, bodies.size());
  forest.owner.assign(plan.nranks, {});

  std::vector<std::vector<Body>> parts(plan.nranks);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const std::uint32_t r = plan.assignment[i];
    if (r >= std::uint32_t(plan.nranks))
      throw config_error("assignment names an unknown rank");
    parts[r].push_back(bodies[i]);
    forest.owner[r].push_back(std::uint32_t(i));
  }
  forest.local.reserve(plan.nranks);
  for (int r = 0; r < plan.nranks; ++r)
    forest.local.push_back(fmm::build_tree(std::move(parts[r]), capacity,
                                           max_leaf_diameter, forest.box));
  return forest;
}

Octree merge_forest(const ForestStructure& structure) {
  std::vector<BranchSlice> slices;
  slices.reserve(structure.local.size());
  for (const Octree& t : structure.local) slices.push_back(slice_of(t));
  return assemble_forest(structure.box, structure.super_root, slices);
}

Octree rank_target_tree(const ForestStructure& structure, int rank) {
  if (rank < 0 || std::size_t(rank) >= structure.local.size())
    throw config_error("rank out of range");
  const BranchSlice own = slice_of(structure.local[rank]);
  return assemble_forest(structure.box, structure.super_root, {&own, 1});
}

std::uint64_t branch_payload_bytes(const RemoteBranch& branch) {
  // wire model: fixed 72-byte cell records, 48-byte bodies, 16 bytes per
  // expansion coefficient, one small header
  std::uint64_t bytes = 8;
  bytes += 72 * std::uint64_t(branch.cells.size());
  bytes += 48 * std::uint64_t(branch.bodies.size());
  for (const RemoteCell& rc : branch.cells)
    if (rc.has_multipole) bytes += 16 * std::uint64_t(rc.multipole.coeff.size());
  return bytes;
}

std::vector<RemoteBranch> extract_let(const PartitionPlan& plan, int rank,
                                      const Octree& local_tree,
                                      const ForestStructure& structure,
                                      WaveNumber k,
                                      const fmm::TraversalConfig& cfg) {
  const int nranks = int(structure.local.size());
  if (plan.nranks != nranks)
    throw config_error("plan and forest disagree on the rank count");
  if (rank < 0 || rank >= nranks) throw config_error("rank out of range");

  std::vector<std::uint32_t> parent(local_tree.cells.size(), 0);
  for (std::uint32_t i = 0; i < local_tree.cells.size(); ++i) {
    const Cell& c = local_tree.cells[i];
    for (std::uint32_t j = 0; j < c.child_count; ++j)
      parent[c.child_first + j] = i;
  }

  const BranchSlice own = slice_of(local_tree);
  const Octree src_view =
      assemble_forest(structure.box, structure.super_root, {&own, 1});

  std::vector<RemoteBranch> out(nranks);
  std::vector<char> need_mul, need_bod, kept;
  for (int d = 0; d < nranks; ++d) {
    out[d].src_rank = rank;
    if (d == rank) continue;

    // replay the cascade rank d's own run walks against this branch; the
    // branch view keeps the super root's geometry so every split decision
    // falls the same way it does over the full forest
    const BranchSlice dst = slice_of(structure.local[d]);
    const Octree tgt_view =
        assemble_forest(structure.box, structure.super_root, {&dst, 1});
    const fmm::TraversalPlan pairs =
        fmm::dual_tree_traversal(tgt_view, src_view, k, cfg);

    // single-branch views put branch cell j at view index j + 1. the super
    // root (index 0) encloses every target, so it can never be a source
    const std::size_t n = local_tree.cells.size();
    need_mul.assign(n, 0);
    need_bod.assign(n, 0);
    for (const fmm::TargetGroup& g : pairs.m2l)
      for (std::uint32_t s : g.sources)
        if (s > 0) need_mul[s - 1] = 1;
    for (const fmm::TargetGroup& g : pairs.p2p)
      for (std::uint32_t s : g.sources)
        if (s > 0) need_bod[s - 1] = 1;

    kept.assign(n, 0);
    for (std::uint32_t j = 0; j < n; ++j) {
      if (!need_mul[j] && !need_bod[j]) continue;
      for (std::uint32_t a = j; !kept[a]; a = parent[a]) {
        kept[a] = 1;
        if (a == 0) break;
      }
    }

    std::vector<std::uint32_t> new_index(n, 0);
    std::uint32_t count = 0;
    for (std::uint32_t j = 0; j < n; ++j)
      if (kept[j]) new_index[j] = count++;

    RemoteBranch& branch = out[d];
    branch.cells.reserve(count);
    for (std::uint32_t j = 0; j < n; ++j) {
      if (!kept[j]) continue;
      const Cell& c = local_tree.cells[j];
      RemoteCell rc;
      rc.key = c.key;
      rc.level = c.level;
      rc.ix = c.ix;
      rc.iy = c.iy;
      rc.iz = c.iz;
      rc.center = c.center;
      rc.radius = c.radius;
      // a visited cell keeps all of its children or none: the walk opens a
      // source cell for every child at once, and an unopened cell's subtree
      // is never visited
      if (c.child_count > 0 && kept[c.child_first]) {
        for (std::uint32_t cc = 1; cc < c.child_count; ++cc)
          if (!kept[c.child_first + cc])
            throw structural_error("pruning split a sibling block");
        rc.child_first = new_index[c.child_first];
        rc.child_count = c.child_count;
      }
      if (need_bod[j]) {
        rc.body_first = std::uint32_t(branch.bodies.size());
        rc.body_count = c.body_count;
        branch.bodies.insert(branch.bodies.end(),
                             local_tree.bodies.begin() + c.body_first,
                             local_tree.bodies.begin() + c.body_first +
                                 c.body_count);
      }
      if (need_mul[j]) {
        if (!c.multipole.allocated())
          throw config_error("local tree carries no multipoles");
        rc.has_multipole = true;
        rc.multipole = c.multipole;
      }
      branch.cells.push_back(std::move(rc));
    }
  }
  return out;
}

Octree graft_let(const ForestStructure& structure, int rank,
                 std::span<const RemoteBranch> received) {
  const int nranks = int(structure.local.size());
  if (rank < 0 || rank >= nranks) throw config_error("rank out of range");

  std::vector<const RemoteBranch*> slot(nranks, nullptr);
  for (const RemoteBranch& br : received) {
    if (br.src_rank < 0 || br.src_rank >= nranks)
      throw structural_error("received branch names an unknown rank");
    if (br.src_rank == rank)
      throw structural_error("received branch collides with the local tree");
    if (slot[br.src_rank])
      throw structural_error("received the same branch twice");
    if (br.cells.empty())
      throw structural_error("received branch has no cells");
    for (std::size_t j = 0; j < br.cells.size(); ++j) {
      const RemoteCell& rc = br.cells[j];
      if (rc.child_count > 0 &&
          (rc.child_first <= j ||
           std::size_t(rc.child_first) + rc.child_count > br.cells.size()))
        throw structural_error("received branch has inconsistent children");
      if (rc.body_count > 0 &&
          std::size_t(rc.body_first) + rc.body_count > br.bodies.size())
        throw structural_error("received branch has inconsistent bodies");
    }
    slot[br.src_rank] = &br;
  }

  // materialized pruned branches, frozen so the upward pass keeps shipped
  // expansions and leaves connector cells at zero
  std::vector<std::vector<Cell>> pruned(nranks);
  std::vector<BranchSlice> slices;
  slices.reserve(nranks);
  for (int r = 0; r < nranks; ++r) {
    if (r == rank) {
      slices.push_back(slice_of(structure.local[r]));
      continue;
    }
    if (!slot[r]) continue;
    const RemoteBranch& br = *slot[r];
    std::vector<Cell>& cells = pruned[r];
    cells.reserve(br.cells.size());
    for (const RemoteCell& rc : br.cells) {
      Cell c;
      c.key = rc.key;
      c.level = rc.level;
      c.ix = rc.ix;
      c.iy = rc.iy;
      c.iz = rc.iz;
      c.center = rc.center;
      c.radius = rc.radius;
      c.child_first = rc.child_first;
      c.child_count = rc.child_count;
      c.body_first = rc.body_first;
      c.body_count = rc.body_count;
      c.frozen = true;
      if (rc.has_multipole) c.multipole = rc.multipole;
      cells.push_back(std::move(c));
    }
    slices.push_back(
        {std::span<const Cell>(cells), std::span<const Body>(br.bodies)});
  }
  return assemble_forest(structure.box, structure.super_root, slices);
}

DistributedRun distributed_matvec(std::span<const Body> bodies,
                                  const PartitionPlan& plan, WaveNumber k,
                                  const DistributedRunConfig& cfg) {
  ForestStructure forest =
      build_forest(bodies, plan, cfg.capacity, cfg.max_leaf_diameter);
  const int nranks = plan.nranks;

  for (Octree& local : forest.local)
    fmm::compute_multipoles(local, k, cfg.order);

  DistributedRun run;
  run.let_bytes.assign(nranks, 0);
  run.let_bytes_to.assign(nranks, std::vector<std::uint64_t>(nranks, 0));

  std::vector<std::vector<RemoteBranch>> outgoing(nranks);
  for (int r = 0; r < nranks; ++r) {
    outgoing[r] = extract_let(plan, r, forest.local[r], forest, k,
                              cfg.traversal);
    for (int d = 0; d < nranks; ++d) {
      if (d == r) continue;
      const std::uint64_t bytes = branch_payload_bytes(outgoing[r][d]);
      run.let_bytes_to[r][d] = bytes;
      run.let_bytes[r] += bytes;
    }
  }

  run.potential.assign(bodies.size(), cplx{});
  for (int r = 0; r < nranks; ++r) {
    std::vector<RemoteBranch> received;
    received.reserve(nranks - 1);
    for (int s = 0; s < nranks; ++s)
      if (s != r) received.push_back(std::move(outgoing[s][r]));
    Octree merged = graft_let(forest, r, received);
    Octree target = rank_target_tree(forest, r);
    const fmm::TraversalPlan tplan =
        fmm::dual_tree_traversal(target, merged, k, cfg.traversal);
    fmm::execute_plan(target, merged, tplan, k, cfg.order, cfg.traversal,
                      cfg.kernel);
    for (const Body& b : target.bodies)
      run.potential[forest.owner[r][b.index]] = b.trg;
  }
  return run;
}

} // namespace hfmm::part
