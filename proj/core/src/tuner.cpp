#include "hfmm/tuner.hpp"

#include <array>
#include <cmath>

namespace hfmm::fmm {

double cache_fit(double s, double c, const CachePlan& plan) {
  if (!(s > 0) || !(c > 0))
    throw config_error("cache_fit needs positive grain sizes");
  const double levels = std::log2(s / c);
  return 2 * c * kTaskDescriptorBytes * plan.threads_per_core *
             (plan.line_bytes * levels + plan.block_bytes) -
         plan.llc_bytes;
}

GrainChoice select_grain(const CachePlan& plan, std::span<const int> s_grid,
                         std::span<const int> c_grid) {
  if (s_grid.empty() || c_grid.empty())
    throw config_error("select_grain needs non-empty grids");

  GrainChoice best;        // best feasible
  GrainChoice fallback;    // global |f| minimum
  bool any = false, any_feasible = false;
  for (int c : c_grid)
    for (int s : s_grid) {
      if (s < c) continue; // tasks cannot be finer than leaves
      const double f = cache_fit(s, c, plan);
      const bool feasible = f <= 0;
      auto better = [&](const GrainChoice& cur) {
        if (std::abs(f) != std::abs(cur.fit))
          return std::abs(f) < std::abs(cur.fit);
        if (s != cur.s) return s > cur.s;
        return c > cur.c;
      };
      if (!any || better(fallback)) {
        fallback = {s, c, f, feasible};
        any = true;
      }
      if (feasible && (!any_feasible || better(best))) {
        best = {s, c, f, true};
        any_feasible = true;
      }
    }
  if (!any) throw config_error("select_grain: grid has no cell with s >= c");
  return any_feasible ? best : fallback;
}

std::span<const int> default_grain_grid() {
  static constexpr std::array<int, 7> grid = {16, 32, 64, 128, 256, 512, 1024};
  return grid;
}

CachePlan skylake_plan() { return CachePlan{256, 128, 2, 38e6}; }

CachePlan knl_plan() { return CachePlan{256, 128, 2, 36e6}; }

} // namespace hfmm::fmm
