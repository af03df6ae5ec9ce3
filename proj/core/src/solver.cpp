#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

#include "hfmm/expansion.hpp"
#include "hfmm/solver.hpp"

namespace hfmm::solver {

namespace {

std::uint64_t cell_key(long long cx, long long cy, long long cz) {
  const std::uint64_t mask = (1ull << 21) - 1;
  return ((std::uint64_t(cx) & mask) << 42) | ((std::uint64_t(cy) & mask) << 21) |
         (std::uint64_t(cz) & mask);
}

void parallel_over(std::size_t count, unsigned threads,
                   const std::function<void(std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || count < 2 * threads) {
    fn(0, count);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  for (auto& th : pool) th.join();
}

unsigned worker_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

double near_threshold(const DiscreteSystem& sys, std::size_t patch) {
  const double d = sys.kernel_cfg.near_patch_distance;
  return d < 0 ? 2.0 * sys.patches[patch].diameter() : d;
}

// in-place LU with partial pivoting for the basis_count-sized self blocks.
// a singular block means degenerate geometry, not a recoverable state
void lu_factor(cplx* a, int* piv, int n) {
  for (int c = 0; c < n; ++c) {
    int best = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[best * n + c])) best = r;
    piv[c] = best;
    if (best != c)
      for (int m = 0; m < n; ++m) std::swap(a[c * n + m], a[best * n + m]);
    if (a[c * n + c] == cplx(0))
      throw singular_error("patch self block is singular");
    for (int r = c + 1; r < n; ++r) {
      a[r * n + c] /= a[c * n + c];
      for (int m = c + 1; m < n; ++m)
        a[r * n + m] -= a[r * n + c] * a[c * n + m];
    }
  }
}

void lu_solve(const cplx* a, const int* piv, int n, cplx* x) {
  for (int c = 0; c < n; ++c) {
    if (piv[c] != c) std::swap(x[c], x[piv[c]]);
    for (int r = c + 1; r < n; ++r) x[r] -= a[r * n + c] * x[c];
  }
  for (int r = n - 1; r >= 0; --r) {
    for (int m = r + 1; m < n; ++m) x[r] -= a[r * n + m] * x[m];
    x[r] /= a[r * n + r];
  }
}

// same-patch correction blocks: remove what the plain point sum contributed
// and, when the mode asks for it, add the duffy-integrated self coupling.
// the raw self blocks double as a block-jacobi preconditioner; their LU
// factors are kept on the system
void build_patch_blocks(DiscreteSystem& sys) {
  const int ni = sys.basis_count();
  const bool self_terms = sys.mode != SingularityMode::none;
  sys.patch_block.assign(sys.patches.size() * ni * ni, cplx(0));
  sys.block_lu.assign(self_terms ? sys.patch_block.size() : 0, cplx(0));
  sys.block_piv.assign(self_terms ? sys.patches.size() * ni : 0, 0);

  // duffy points and basis values live on the reference triangle, so one
  // table per interpolation node serves every patch
  const auto& basis = geom::lagrange_basis(sys.basis_order);
  std::vector<std::vector<geom::QuadraturePoint>> node_pts(self_terms ? ni : 0);
  std::vector<std::vector<std::vector<double>>> node_l(node_pts.size());
  for (int j = 0; j < int(node_pts.size()); ++j) {
    node_pts[j] = geom::duffy_rule(basis.nodes()[j][0], basis.nodes()[j][1],
                                   sys.kernel_cfg.self_rule);
    node_l[j].reserve(node_pts[j].size());
    for (const auto& q : node_pts[j]) node_l[j].push_back(basis.eval(q.zeta, q.eta));
  }

  parallel_over(sys.patches.size(), worker_count(), [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      cplx* block = sys.patch_block.data() + p * ni * ni;
      const kernel::SourceSample* s = sys.samples.data() + p * ni;
      for (int j = 0; j < ni; ++j) {
        for (int n = 0; n < ni; ++n) {
          const double r2 = (s[j].position - s[n].position).norm2();
          if (r2 > 0.0)
            block[j * ni + n] -= kernel::green(s[j].position, s[n].position,
                                               sys.k) *
                                 sys.far_weight[p * ni + n];
        }
        if (!self_terms) continue;
        cplx* row = sys.block_lu.data() + (p * std::size_t(ni) + j) * ni;
        const Vec3 obs =
            geom::map_to_physical(sys.patches[p], s[j].zeta, s[j].eta);
        for (std::size_t qi = 0; qi < node_pts[j].size(); ++qi) {
          const auto& q = node_pts[j][qi];
          const Vec3 rp = geom::map_to_physical(sys.patches[p], q.zeta, q.eta);
          if ((obs - rp).norm2() == 0.0) continue;
          const cplx g = kernel::green(obs, rp, sys.k);
          const std::vector<double>& l = node_l[j][qi];
          for (int n = 0; n < ni; ++n) row[n] += q.weight * l[n] * g;
        }
        for (int n = 0; n < ni; ++n) block[j * ni + n] += row[n];
      }
      if (self_terms)
        lu_factor(sys.block_lu.data() + p * std::size_t(ni) * ni,
                  sys.block_piv.data() + p * ni, ni);
    }
  });
}

// cross-patch pairs inside the per-source near threshold get the difference
// between the re-integrated basis function and the plain point contribution
void build_near_corrections(DiscreteSystem& sys) {
  const std::size_t n = sys.size();
  sys.near_offset.assign(n + 1, 0);
  sys.near_source.clear();
  sys.near_delta.clear();
  if (sys.mode != SingularityMode::self_near) return;

  double h = 0;
  for (std::size_t p = 0; p < sys.patches.size(); ++p)
    h = std::max(h, near_threshold(sys, p));
  if (h <= 0.0) return;

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
  auto coords = [&](const Vec3& v) {
    return std::array<long long, 3>{(long long)std::floor(v.x / h),
                                    (long long)std::floor(v.y / h),
                                    (long long)std::floor(v.z / h)};
  };
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto c = coords(sys.samples[i].position);
    grid[cell_key(c[0], c[1], c[2])].push_back(i);
  }

  const int ni = sys.basis_count();
  std::vector<std::vector<std::uint32_t>> lists(n);
  parallel_over(n, worker_count(), [&](std::size_t b, std::size_t e) {
    for (std::size_t m = b; m < e; ++m) {
      const auto& t = sys.samples[m];
      const auto c = coords(t.position);
      auto& out = lists[m];
      for (long long dx = -1; dx <= 1; ++dx)
        for (long long dy = -1; dy <= 1; ++dy)
          for (long long dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find(cell_key(c[0] + dx, c[1] + dy, c[2] + dz));
            if (it == grid.end()) continue;
            for (std::uint32_t s : it->second) {
              const auto& src = sys.samples[s];
              if (src.patch_id == t.patch_id) continue;
              const double r2 = (t.position - src.position).norm2();
              if (r2 == 0.0) continue;
              const double thr = near_threshold(sys, std::size_t(s) / ni);
              if (thr > 0.0 && r2 <= thr * thr) out.push_back(s);
            }
          }
      std::sort(out.begin(), out.end());
    }
  });

  for (std::size_t m = 0; m < n; ++m)
    sys.near_offset[m + 1] = sys.near_offset[m] + std::uint32_t(lists[m].size());
  sys.near_source.resize(sys.near_offset.back());
  sys.near_delta.resize(sys.near_offset.back());
  for (std::size_t m = 0; m < n; ++m)
    std::copy(lists[m].begin(), lists[m].end(),
              sys.near_source.begin() + sys.near_offset[m]);

  // listed sources sort patch-contiguous, so one quadrature sweep per
  // (target, source patch) pair covers every listed basis function of it.
  // basis values depend only on the rule, not the patch: tabulate once
  const auto& basis = geom::lagrange_basis(sys.basis_order);
  const auto& rule = geom::gauss_rule(sys.kernel_cfg.near_rule);
  std::vector<std::vector<double>> rule_l;
  rule_l.reserve(rule.pts.size());
  for (const auto& q : rule.pts) rule_l.push_back(basis.eval(q.zeta, q.eta));

  parallel_over(n, worker_count(), [&](std::size_t b, std::size_t e) {
    std::vector<cplx> acc(ni);
    for (std::size_t m = b; m < e; ++m) {
      const auto& t = sys.samples[m];
      std::uint32_t idx = sys.near_offset[m];
      while (idx < sys.near_offset[m + 1]) {
        const std::uint32_t sp = sys.near_source[idx] / std::uint32_t(ni);
        std::uint32_t end = idx + 1;
        while (end < sys.near_offset[m + 1] &&
               sys.near_source[end] / std::uint32_t(ni) == sp)
          ++end;
        const auto& patch = sys.patches[sp];
        std::fill(acc.begin(), acc.end(), cplx(0));
        for (std::size_t qi = 0; qi < rule.pts.size(); ++qi) {
          const auto& q = rule.pts[qi];
          geom::jacobian(patch, q.zeta, q.eta);  // degeneracy must not pass silently
          const Vec3 rp = geom::map_to_physical(patch, q.zeta, q.eta);
          const cplx g = kernel::green_t<double>(t.position, rp, sys.k);
          const std::vector<double>& l = rule_l[qi];
          for (int nn = 0; nn < ni; ++nn) acc[nn] += q.weight * l[nn] * g;
        }
        for (; idx < end; ++idx) {
          const std::uint32_t s = sys.near_source[idx];
          const cplx plain =
              kernel::green(t.position, sys.samples[s].position, sys.k) *
              sys.far_weight[s];
          sys.near_delta[idx] = acc[s % std::uint32_t(ni)] - plain;
        }
      }
    }
  });
}

void build_tree_path(DiscreteSystem& sys) {
  const auto& tcfg = sys.op_cfg.traversal;
  std::vector<fmm::Body> bodies(sys.size());
  for (std::size_t i = 0; i < sys.size(); ++i) {
    bodies[i].position = sys.samples[i].position;
    bodies[i].patch_id = sys.samples[i].patch_id;
  }
  const double kmag = std::abs(sys.k.value());
  double cap = sys.op_cfg.leaf_diameter_cap;
  if (cap <= 0.0 && tcfg.kd_max > 0.0 && kmag > 0.0) cap = tcfg.kd_max / kmag;
  sys.tree = fmm::build_tree(std::move(bodies), tcfg.c, cap);

  if (sys.op_cfg.expansion_order >= 0) {
    sys.expansion_order = sys.op_cfg.expansion_order;
  } else {
    // truncation is governed by the largest cell the admissibility gate lets
    // into the far field
    double diam = 0;
    for (const auto& cell : sys.tree.cells) {
      const double d = cell.diameter();
      if (tcfg.kd_max > 0.0 && kmag * d > tcfg.kd_max) continue;
      diam = std::max(diam, d);
    }
    sys.expansion_order =
        diam > 0 ? fmm::calibrate_order(sys.k, diam, tcfg.theta, 1e-5) : 0;
  }
  sys.plan = fmm::dual_tree_traversal(sys.tree, sys.tree, sys.k, tcfg);
}

}  // namespace

int DiscreteSystem::basis_count() const {
  return geom::lagrange_basis(basis_order).count();
}

DiscreteSystem build_system(std::vector<geom::CurvilinearPatch> patches,
                            int basis_order, WaveNumber k, SingularityMode mode,
                            const kernel::KernelConfig& kernel_cfg,
                            const OperatorConfig& op_cfg) {
  const auto& basis = geom::lagrange_basis(basis_order);
  DiscreteSystem sys;
  sys.patches = std::move(patches);
  sys.basis_order = basis_order;
  sys.k = k;
  sys.mode = mode;
  sys.kernel_cfg = kernel_cfg;
  sys.op_cfg = op_cfg;

  const int ni = basis.count();
  sys.samples.resize(sys.patches.size() * ni);
  sys.far_weight.resize(sys.samples.size());
  for (std::size_t p = 0; p < sys.patches.size(); ++p)
    for (int j = 0; j < ni; ++j) {
      kernel::SourceSample& s = sys.samples[p * ni + j];
      s.zeta = basis.nodes()[j][0];
      s.eta = basis.nodes()[j][1];
      s.position = geom::map_to_physical(sys.patches[p], s.zeta, s.eta);
      s.patch_id = std::int32_t(p);
      s.patch = &sys.patches[p];
      s.basis_index = j;
      s.basis_order = basis_order;
      sys.far_weight[p * ni + j] = basis.weights()[j];
    }

  build_patch_blocks(sys);
  build_near_corrections(sys);
  if (sys.op_cfg.use_tree) build_tree_path(sys);
  return sys;
}

std::vector<cplx> assemble_rhs(const DiscreteSystem& sys,
                               const IncidentWave& wave) {
  if (std::abs(wave.direction.norm2() - 1.0) > 1e-9)
    throw config_error("incident direction must be unit length");
  std::vector<cplx> rhs(sys.size());
  const cplx jk = cplx(0, 1) * wave.k.value();
  for (std::size_t i = 0; i < sys.size(); ++i)
    rhs[i] = wave.amplitude *
             std::exp(jk * wave.direction.dot(sys.samples[i].position));
  return rhs;
}

std::vector<cplx> apply_operator(DiscreteSystem& sys, std::span<const cplx> x) {
  if (x.size() != sys.size())
    throw config_error("apply_operator: coefficient vector length mismatch");
  const std::size_t n = sys.size();
  std::vector<cplx> y(n, cplx(0));

  // the plain pass runs the single-point kernel over every distinct pair;
  // same-patch and near couplings are fixed up from the precomputed deltas
  kernel::KernelConfig plain = sys.kernel_cfg;
  plain.skip_same_patch = false;
  plain.near_patch_distance = 0;

  if (sys.op_cfg.use_tree) {
    for (fmm::Body& b : sys.tree.bodies)
      b.src = x[b.index] * sys.far_weight[b.index];
    fmm::execute_plan(sys.tree, sys.tree, sys.plan, sys.k, sys.expansion_order,
                      sys.op_cfg.traversal, plain);
    for (const fmm::Body& b : sys.tree.bodies) y[b.index] = b.trg;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      sys.samples[i].strength = x[i] * sys.far_weight[i];
      sys.samples[i].density = x[i];
    }
    y = kernel::p2p(sys.samples, sys.samples, sys.k, plain);
  }

  const int ni = sys.basis_count();
  for (std::size_t p = 0; p < sys.patches.size(); ++p) {
    const cplx* block = sys.patch_block.data() + p * ni * ni;
    for (int j = 0; j < ni; ++j) {
      cplx acc = 0;
      for (int m = 0; m < ni; ++m) acc += block[j * ni + m] * x[p * ni + m];
      y[p * ni + j] += acc;
    }
  }
  if (!sys.near_delta.empty()) {
    for (std::size_t m = 0; m < n; ++m) {
      cplx acc = 0;
      for (std::uint32_t idx = sys.near_offset[m]; idx < sys.near_offset[m + 1];
           ++idx)
        acc += sys.near_delta[idx] * x[sys.near_source[idx]];
      y[m] += acc;
    }
  }
  return y;
}

std::pair<std::vector<cplx>, SolveReport> gmres_solve(DiscreteSystem& sys,
                                                      std::span<const cplx> rhs,
                                                      const GmresConfig& cfg) {
  if (!cfg.precondition || sys.block_lu.empty()) {
    auto result = gmres(
        [&sys](std::span<const cplx> v) { return apply_operator(sys, v); }, rhs,
        cfg);
    sys.solution = result.first;
    return result;
  }

  // right preconditioning: gmres runs on Z M^-1, so every residual it sees
  // (and reports) is a residual of the original system, and the returned
  // iterate maps back through M^-1
  const int ni = sys.basis_count();
  auto precondition = [&sys, ni](std::span<const cplx> u) {
    std::vector<cplx> v(u.begin(), u.end());
    for (std::size_t p = 0; p < sys.patches.size(); ++p)
      lu_solve(sys.block_lu.data() + p * std::size_t(ni) * ni,
               sys.block_piv.data() + p * ni, ni, v.data() + p * ni);
    return v;
  };
  auto result = gmres(
      [&](std::span<const cplx> u) {
        return apply_operator(sys, precondition(u));
      },
      rhs, cfg);
  result.first = precondition(result.first);
  sys.solution = result.first;
  return result;
}

std::vector<cplx> evaluate_scattered_field(const DiscreteSystem& sys,
                                           std::span<const cplx> solution,
                                           std::span<const Vec3> observations,
                                           WaveNumber k) {
  if (solution.size() != sys.size())
    throw config_error("evaluate_scattered_field: solution length mismatch");
  const int ni = sys.basis_count();
  std::vector<double> touch2(sys.patches.size());
  for (std::size_t p = 0; p < sys.patches.size(); ++p) {
    const double t = 0.1 * sys.patches[p].diameter();
    touch2[p] = t * t;
  }
  std::vector<cplx> out(observations.size(), cplx(0));
  for (std::size_t o = 0; o < observations.size(); ++o) {
    cplx acc = 0;
    for (std::size_t i = 0; i < sys.size(); ++i) {
      const double r2 = (observations[o] - sys.samples[i].position).norm2();
      if (r2 <= touch2[std::size_t(i) / ni])
        throw singular_error(
            "evaluate_scattered_field: observation point touches the surface");
      acc += kernel::green(observations[o], sys.samples[i].position, k) *
             sys.far_weight[i] * solution[i];
    }
    out[o] = acc;
  }
  return out;
}

}  // namespace hfmm::solver
