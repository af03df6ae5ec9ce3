#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfmm/kernel.hpp"
#include "hfmm/octree.hpp"
#include "hfmm/partition.hpp"
#include "hfmm/traversal.hpp"

// locally essential trees over a rank forest. every rank's tree lives on the
// one shared lattice box, so cells of different ranks agree on levels, sides
// and translation shifts; branches then graft under a synthetic root without
// disturbing any geometry. a rank run over its grafted tree walks exactly the
// pair cascade the merged forest walks for that rank's targets, which makes
// the union of rank results match the single-domain evaluation bit for bit.
namespace hfmm::part {

// synthetic root covering the shared box. frozen: it aggregates nothing, the
// upward pass skips it, and no pair involving it is ever admissible because
// it contains every branch
fmm::Cell make_super_root(const fmm::DomainBox& box, std::size_t total_bodies);

struct ForestStructure {
  fmm::DomainBox box;              // shared lattice
  fmm::Cell super_root;
  std::vector<fmm::Octree> local;  // per rank, that rank's bodies only
  // caller index of each local body slot, per rank, in the order the local
  // tree was built from (fmm::Body::index points into this)
  std::vector<std::vector<std::uint32_t>> owner;
};

// one tree per rank on the lattice of all bodies together
ForestStructure build_forest(std::span<const fmm::Body> bodies,
                             const PartitionPlan& plan, int capacity,
                             double max_leaf_diameter = 0);

// the single-domain reference: all branches assembled under the super root
fmm::Octree merge_forest(const ForestStructure& structure);

// target-side view for one rank: super root plus that branch alone
fmm::Octree rank_target_tree(const ForestStructure& structure, int rank);

// one shipped cell of a pruned branch. child and body ranges index the
// pruned branch's own arrays; a dropped subtree leaves child_count 0
struct RemoteCell {
  std::uint64_t key = 0;
  int level = 0;
  std::uint32_t ix = 0, iy = 0, iz = 0;
  Vec3 center{};
  double radius = 0;
  std::uint32_t child_first = 0, child_count = 0;
  std::uint32_t body_first = 0, body_count = 0;
  bool has_multipole = false;
  fmm::Expansion multipole;
};

struct RemoteBranch {
  int src_rank = -1;
  std::vector<RemoteCell> cells; // cells[0] is the branch root, parents first
  std::vector<fmm::Body> bodies; // only ranges direct pairs actually read
};

// wire-size accounting for exchange simulations
std::uint64_t branch_payload_bytes(const RemoteBranch& branch);

// sender side: for every destination, the cells of this rank's branch that
// the destination's traversal cascade visits. translation sources carry
// multipoles, direct-sum leaves carry bodies, enclosing ancestors ship as
// bare connectors. the local tree must already hold its multipoles
std::vector<RemoteBranch> extract_let(const PartitionPlan& plan, int rank,
                                      const fmm::Octree& local_tree,
                                      const ForestStructure& structure,
                                      WaveNumber k,
                                      const fmm::TraversalConfig& cfg);

// receiver side: own full branch plus the received pruned branches under the
// super root. received cells arrive frozen so the upward pass keeps their
// shipped expansions. a branch claiming this rank, a duplicated source rank,
// or inconsistent cell ranges is a structural_error
fmm::Octree graft_let(const ForestStructure& structure, int rank,
                      std::span<const RemoteBranch> received);

struct DistributedRunConfig {
  int capacity = 64;
  double max_leaf_diameter = 0;
  int order = 8;
  fmm::TraversalConfig traversal;
  kernel::KernelConfig kernel;

  DistributedRunConfig() { kernel.skip_same_patch = false; }
};

struct DistributedRun {
  std::vector<cplx> potential;           // per body, caller order
  std::vector<std::uint64_t> let_bytes;  // per source rank, all destinations
  std::vector<std::vector<std::uint64_t>> let_bytes_to; // [src][dst]
};

// the whole pipeline at matvec granularity: per-rank trees and multipoles,
// extraction, grafting, one evaluation per rank, results scattered back to
// caller order
DistributedRun distributed_matvec(std::span<const fmm::Body> bodies,
                                  const PartitionPlan& plan, WaveNumber k,
                                  const DistributedRunConfig& cfg = {});

} // namespace hfmm::part
