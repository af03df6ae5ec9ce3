#pragma once

#include <span>

#include "hfmm/common.hpp"

namespace hfmm::fmm {

// Cache-occupancy model for picking the traversal grain (s, c). A spawned
// task touches 2c cell records; each record costs one block plus one line
// per tree level between the grain sizes, and hyperthreads contend for the
// same last-level cache.
struct CachePlan {
  double line_bytes = 256;   // per-level streaming cost of one cell record
  double block_bytes = 128;  // fixed cost of one cell record
  int threads_per_core = 2;
  double llc_bytes = 38e6;
};

// measured footprint of one task descriptor (paired cell handles, spans,
// scratch pointers); the model scales linearly in it
inline constexpr double kTaskDescriptorBytes = 544;

// f(s, c) = 2 c T t (line log2(s/c) + block) - llc; negative values fit in
// cache, the magnitude is the head room (or the overflow when positive)
double cache_fit(double s, double c, const CachePlan& plan);

struct GrainChoice {
  int s = 0;
  int c = 0;
  double fit = 0;
  bool feasible = false; // false: nothing fit, fit is the least-bad overflow
};

// argmin of |cache_fit| over the grid subject to fit <= 0 and s >= c; ties
// prefer larger s, then larger c. With no feasible cell, returns the global
// |f| minimum flagged infeasible.
GrainChoice select_grain(const CachePlan& plan, std::span<const int> s_grid,
                         std::span<const int> c_grid);

std::span<const int> default_grain_grid(); // {16, 32, ..., 1024}

CachePlan skylake_plan(); // 38 MB shared L3
CachePlan knl_plan();     // 36 MB (MCDRAM-backed) last level

} // namespace hfmm::fmm
