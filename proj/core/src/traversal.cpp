#include "hfmm/traversal.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <thread>
#include <unordered_map>

#include "hfmm/expansion.hpp"

namespace hfmm::fmm {

namespace {

void validate(const TraversalConfig& cfg) {
  if (cfg.c < 1 || cfg.s < cfg.c)
    throw config_error("traversal grain needs s >= c >= 1");
  if (!(cfg.theta > 0) || cfg.theta > 1)
    throw config_error("opening angle must satisfy 0 < theta <= 1");
}

struct PairSink {
  std::vector<TargetGroup> groups;
  std::unordered_map<std::uint32_t, std::size_t> slot;
  std::size_t pairs = 0;

  void add(std::uint32_t target, std::uint32_t source) {
    auto [it, fresh] = slot.try_emplace(target, groups.size());
    if (fresh) groups.push_back({target, {}});
    groups[it->second].sources.push_back(source);
    ++pairs;
  }
};

struct Walker {
  const Octree& tgt;
  const Octree& src;
  const TraversalConfig& cfg;
  double kmag;
  PairSink far;
  PairSink near;
  std::size_t tasks = 0;

  bool admissible(const Cell& a, const Cell& b) const {
    if (cfg.kd_max > 0 &&
        (kmag * a.diameter() > cfg.kd_max || kmag * b.diameter() > cfg.kd_max))
      return false;
    const double dist = (a.center - b.center).norm();
    return dist > (a.radius + b.radius) / cfg.theta;
  }

  void walk(std::uint32_t ti, std::uint32_t si, bool in_task) {
    const Cell& a = tgt.cells[ti];
    const Cell& b = src.cells[si];
    if (!in_task && a.body_count + b.body_count <= std::uint32_t(cfg.s)) {
      ++tasks;
      in_task = true;
    }
    if (admissible(a, b)) {
      far.add(ti, si);
      return;
    }
    if (a.leaf() && b.leaf()) {
      near.add(ti, si);
      return;
    }
    const bool split_target =
        !a.leaf() && (b.leaf() || a.radius > b.radius); // ties open the source
    if (split_target) {
      for (std::uint32_t c = 0; c < a.child_count; ++c)
        walk(a.child_first + c, si, in_task);
    } else {
      for (std::uint32_t c = 0; c < b.child_count; ++c)
        walk(ti, b.child_first + c, in_task);
    }
  }
};

} // namespace

TraversalPlan dual_tree_traversal(const Octree& target_tree,
                                  const Octree& source_tree, WaveNumber k,
                                  const TraversalConfig& cfg) {
  validate(cfg);
  Walker w{target_tree, source_tree, cfg, std::abs(k.value()), {}, {}, 0};
  if (!target_tree.cells.empty() && !source_tree.cells.empty())
    w.walk(0, 0, false);

  TraversalPlan plan;
  plan.m2l = std::move(w.far.groups);
  plan.p2p = std::move(w.near.groups);
  plan.tasks = w.tasks;
  plan.m2l_pairs = w.far.pairs;
  plan.p2p_pairs = w.near.pairs;
  return plan;
}

namespace {

int worker_count(const TraversalConfig& cfg) {
  if (cfg.deterministic) return 1;
  if (cfg.threads > 0) return cfg.threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

// chunked parallel loop; never reorders work inside a chunk
template <typename Fn>
void for_chunks(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t parts = std::min<std::size_t>(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t lo = n * p / parts;
    const std::size_t hi = n * (p + 1) / parts;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

struct ShiftKey {
  std::int64_t x, y, z;
  std::int32_t tag; // max level for lattice keys, -1 for raw-bits keys
  bool operator==(const ShiftKey&) const = default;
};

struct ShiftKeyHash {
  std::size_t operator()(const ShiftKey& k) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (std::uint64_t v : {std::uint64_t(k.x), std::uint64_t(k.y),
                            std::uint64_t(k.z), std::uint64_t(k.tag)}) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return h;
  }
};

bool same_lattice(const Octree& a, const Octree& b) {
  return a.box.lo.x == b.box.lo.x && a.box.lo.y == b.box.lo.y &&
         a.box.lo.z == b.box.lo.z && a.box.width == b.box.width;
}

// exact translation vector: cells of one lattice sit on odd half-side
// multiples, so center differences reduce to integer triples times a power
// of two of the box width and identical offsets collapse to one key
std::pair<ShiftKey, Vec3> lattice_shift(const Octree& tree, const Cell& to,
                                        const Cell& from) {
  const int lmax = std::max(to.level, from.level);
  auto coords = [lmax](const Cell& c) {
    const int up = lmax - c.level;
    return std::array<std::int64_t, 3>{
        std::int64_t(2 * std::uint64_t(c.ix) + 1) << up,
        std::int64_t(2 * std::uint64_t(c.iy) + 1) << up,
        std::int64_t(2 * std::uint64_t(c.iz) + 1) << up};
  };
  const auto ct = coords(to), cf = coords(from);
  const ShiftKey key{ct[0] - cf[0], ct[1] - cf[1], ct[2] - cf[2], lmax};
  const double unit = tree.side(lmax) / 2;
  return {key, Vec3{key.x * unit, key.y * unit, key.z * unit}};
}

std::pair<ShiftKey, Vec3> raw_shift(const Vec3& t) {
  return {ShiftKey{std::bit_cast<std::int64_t>(t.x),
                   std::bit_cast<std::int64_t>(t.y),
                   std::bit_cast<std::int64_t>(t.z), -1},
          t};
}

template <typename Real>
void direct_groups(Octree& tgt, const Octree& src,
                   const std::vector<TargetGroup>& groups, WaveNumber k,
                   const kernel::KernelConfig& kcfg, int workers) {
  for_chunks(groups.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t g = lo; g < hi; ++g) {
      const Cell& tcell = tgt.cells[groups[g].target];
      for (std::uint32_t bi = tcell.body_first;
           bi < tcell.body_first + tcell.body_count; ++bi) {
        Body& tb = tgt.bodies[bi];
        std::complex<Real> acc{};
        for (std::uint32_t sci : groups[g].sources) {
          const Cell& scell = src.cells[sci];
          for (std::uint32_t bj = scell.body_first;
               bj < scell.body_first + scell.body_count; ++bj) {
            const Body& sb = src.bodies[bj];
            const Vec3 d = tb.position - sb.position;
            if (d.norm2() == 0) continue;
            if (kcfg.skip_same_patch && tb.patch_id >= 0 &&
                tb.patch_id == sb.patch_id)
              continue;
            acc += kernel::green_t<Real>(tb.position, sb.position, k) *
                   std::complex<Real>(sb.src);
          }
        }
        tb.trg += cplx(acc);
      }
    }
  });
}

} // namespace

FmmStats execute_plan(Octree& target_tree, Octree& source_tree,
                      const TraversalPlan& plan, WaveNumber k, int order,
                      const TraversalConfig& cfg,
                      const kernel::KernelConfig& kcfg) {
  validate(cfg);
  if (order < 0) throw config_error("expansion order must be non-negative");
  using clock = std::chrono::steady_clock;
  const int workers = worker_count(cfg);

  FmmStats stats;
  stats.m2l_pairs = plan.m2l_pairs;
  stats.p2p_pairs = plan.p2p_pairs;
  stats.tasks = plan.tasks;

  for (Body& b : target_tree.bodies) b.trg = 0;

  auto t0 = clock::now();
  stats.starved_cells = compute_multipoles(source_tree, k, order);
  auto t1 = clock::now();
  stats.upward_seconds = std::chrono::duration<double>(t1 - t0).count();

  for (Cell& cell : target_tree.cells) cell.local.resize(order);

  // one matrix per distinct shift; the lattice key makes equal offsets hit
  // one entry when both trees share a box, the raw key still dedups repeats
  const bool lattice = same_lattice(target_tree, source_tree);
  std::unordered_map<ShiftKey, std::uint32_t, ShiftKeyHash> shift_index;
  std::vector<Vec3> shift_vec;
  std::vector<std::vector<std::uint32_t>> group_matrix(plan.m2l.size());
  for (std::size_t g = 0; g < plan.m2l.size(); ++g) {
    const Cell& tcell = target_tree.cells[plan.m2l[g].target];
    group_matrix[g].reserve(plan.m2l[g].sources.size());
    for (std::uint32_t sci : plan.m2l[g].sources) {
      const Cell& scell = source_tree.cells[sci];
      auto [key, t] = lattice
                          ? lattice_shift(target_tree, tcell, scell)
                          : raw_shift(tcell.center - scell.center);
      auto [it, fresh] = shift_index.try_emplace(
          key, std::uint32_t(shift_vec.size()));
      if (fresh) shift_vec.push_back(t);
      group_matrix[g].push_back(it->second);
    }
  }
  std::vector<std::vector<cplx>> matrices(shift_vec.size());
  for_chunks(shift_vec.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      matrices[i] =
          translation_matrix(k, shift_vec[i], order, Radial::singular);
  });

  for_chunks(plan.m2l.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t g = lo; g < hi; ++g) {
      Expansion& local = target_tree.cells[plan.m2l[g].target].local;
      for (std::size_t i = 0; i < plan.m2l[g].sources.size(); ++i)
        translate(source_tree.cells[plan.m2l[g].sources[i]].multipole, local,
                  matrices[group_matrix[g][i]]);
    }
  });

  if (kcfg.precision == kernel::Precision::f32)
    direct_groups<float>(target_tree, source_tree, plan.p2p, k, kcfg, workers);
  else
    direct_groups<double>(target_tree, source_tree, plan.p2p, k, kcfg,
                          workers);
  auto t2 = clock::now();
  stats.interaction_seconds = std::chrono::duration<double>(t2 - t1).count();

  compute_locals(target_tree, k);
  auto t3 = clock::now();
  stats.downward_seconds = std::chrono::duration<double>(t3 - t2).count();
  return stats;
}

FmmStats fmm_evaluate(Octree& target_tree, Octree& source_tree, WaveNumber k,
                      int order, const TraversalConfig& cfg,
                      const kernel::KernelConfig& kcfg) {
  const TraversalPlan plan =
      dual_tree_traversal(target_tree, source_tree, k, cfg);
  return execute_plan(target_tree, source_tree, plan, k, order, cfg, kcfg);
}

} // namespace hfmm::fmm
