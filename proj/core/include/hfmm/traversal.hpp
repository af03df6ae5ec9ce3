#pragma once

#include <cstdint>
#include <vector>

#include "hfmm/kernel.hpp"
#include "hfmm/octree.hpp"

namespace hfmm::fmm {

struct TraversalConfig {
  int s = 128;         // task grain: a pair becomes a task at <= s bodies
  int c = 128;         // leaf capacity the trees were built with
  double theta = 0.5;  // opening angle for center-distance admissibility
  double kd_max = 1.0; // cells wider than this many 1/k are never admissible
  bool deterministic = true; // single-threaded execution in recorded order
  int threads = 0;           // 0: hardware concurrency (parallel mode only)
};

// Interaction schedule, grouped by target so replays and parallel execution
// write disjoint ranges. Source order within a target follows the recorded
// traversal, which pins the accumulation order.
struct TargetGroup {
  std::uint32_t target;               // cell index in the target tree
  std::vector<std::uint32_t> sources; // cell indices in the source tree
};

struct TraversalPlan {
  std::vector<TargetGroup> m2l; // admissible cell pairs
  std::vector<TargetGroup> p2p; // leaf pairs needing direct sums
  std::size_t tasks = 0;        // grain-boundary count under config.s
  std::size_t m2l_pairs = 0;
  std::size_t p2p_pairs = 0;
};

// Simultaneous descent of target and source trees: admissible pairs become
// multipole-to-local entries, leaf-leaf remainders become direct pairs, and
// the larger cell is split otherwise (source on ties). Throws config_error
// on a malformed config (needs s >= c >= 1, 0 < theta <= 1).
TraversalPlan dual_tree_traversal(const Octree& target_tree,
                                  const Octree& source_tree, WaveNumber k,
                                  const TraversalConfig& cfg);

struct FmmStats {
  std::size_t m2l_pairs = 0;
  std::size_t p2p_pairs = 0;
  std::size_t tasks = 0;
  std::size_t starved_cells = 0; // truncation-waste warnings from upward pass
  double upward_seconds = 0;
  double interaction_seconds = 0;
  double downward_seconds = 0;
};

// Full pipeline over a recorded plan: upward moments on the source tree,
// multipole-to-local plus direct sums into the target tree, downward pass,
// body trg overwritten. Trees may be the same object (classic self-matvec).
// Deterministic mode and the grouped parallel mode produce identical bits:
// every target's sources accumulate in plan order either way.
FmmStats execute_plan(Octree& target_tree, Octree& source_tree,
                      const TraversalPlan& plan, WaveNumber k, int order,
                      const TraversalConfig& cfg,
                      const kernel::KernelConfig& kcfg);

// Convenience: traversal + execution in one call.
FmmStats fmm_evaluate(Octree& target_tree, Octree& source_tree, WaveNumber k,
                      int order, const TraversalConfig& cfg,
                      const kernel::KernelConfig& kcfg);

} // namespace hfmm::fmm
