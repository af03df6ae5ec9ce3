#include "hfmm/kernel.hpp"

#include <cmath>
#include <thread>

namespace hfmm::kernel {

cplx green(const Vec3& r, const Vec3& r_src, WaveNumber k) {
  if ((r - r_src).norm2() == 0.0) throw singular_error("green: coincident points");
  return green_t<double>(r, r_src, k);
}

cplx near_basis_integral(const Vec3& obs, const geom::CurvilinearPatch& patch, int order,
                         int basis_index, WaveNumber k, int rule_size) {
  const auto& rule = geom::gauss_rule(rule_size);
  const auto& basis = geom::lagrange_basis(order);
  cplx acc = 0;
  for (const auto& q : rule.pts) {
    geom::jacobian(patch, q.zeta, q.eta);  // degenerate geometry must not pass silently
    Vec3 rp = geom::map_to_physical(patch, q.zeta, q.eta);
    acc += q.weight * basis.eval(q.zeta, q.eta)[basis_index] * green_t<double>(obs, rp, k);
  }
  return acc;
}

cplx near_patch_integral(const Vec3& obs, const geom::CurvilinearPatch& patch,
                         std::span<const cplx> density, WaveNumber k, int rule_size) {
  const auto& rule = geom::gauss_rule(rule_size);
  int order = density.size() == 3 ? 1 : density.size() == 6 ? 2 : 3;
  if (density.size() != 3 && density.size() != 6 && density.size() != 12)
    throw config_error("near_patch_integral: density size must be 3, 6 or 12");
  const auto& basis = geom::lagrange_basis(order);
  cplx acc = 0;
  for (const auto& q : rule.pts) {
    geom::jacobian(patch, q.zeta, q.eta);
    Vec3 rp = geom::map_to_physical(patch, q.zeta, q.eta);
    auto L = basis.eval(q.zeta, q.eta);
    cplx dens = 0;
    for (size_t i = 0; i < density.size(); ++i) dens += density[i] * L[i];
    acc += q.weight * dens * green_t<double>(obs, rp, k);
  }
  return acc;
}

cplx self_patch_integral(double zeta0, double eta0, const geom::CurvilinearPatch& patch,
                         std::span<const cplx> density, WaveNumber k, int duffy_n) {
  if (density.size() != 3 && density.size() != 6 && density.size() != 12)
    throw config_error("self_patch_integral: density size must be 3, 6 or 12");
  int order = density.size() == 3 ? 1 : density.size() == 6 ? 2 : 3;
  const auto& basis = geom::lagrange_basis(order);
  Vec3 obs = geom::map_to_physical(patch, zeta0, eta0);
  auto pts = geom::duffy_rule(zeta0, eta0, duffy_n);
  cplx acc = 0;
  for (const auto& q : pts) {
    Vec3 rp = geom::map_to_physical(patch, q.zeta, q.eta);
    double R2 = (obs - rp).norm2();
    if (R2 == 0.0) continue;  // weight * 1/R stays integrable; a node landing
                              // exactly on the singularity carries zero measure
    auto L = basis.eval(q.zeta, q.eta);
    cplx dens = 0;
    for (size_t i = 0; i < density.size(); ++i) dens += density[i] * L[i];
    acc += q.weight * dens * green_t<double>(obs, rp, k);
  }
  return acc;
}

namespace {

template <typename Real>
void p2p_range(std::span<const SourceSample> targets, std::span<const SourceSample> sources,
               WaveNumber k, const KernelConfig& cfg, size_t begin, size_t end, cplx* out) {
  for (size_t ti = begin; ti < end; ++ti) {
    const auto& t = targets[ti];
    std::complex<Real> far = 0;
    cplx near = 0;
    for (const auto& s : sources) {
      double R2 = (t.position - s.position).norm2();
      if (R2 == 0.0) continue;
      if (cfg.skip_same_patch && s.patch_id >= 0 && s.patch_id == t.patch_id) continue;
      double thr = cfg.near_patch_distance;
      if (thr < 0.0) thr = s.patch ? 2.0 * s.patch->diameter() : 0.0;
      if (s.patch && thr > 0.0 && R2 <= thr * thr) {
        near += s.density *
                near_basis_integral(t.position, *s.patch, s.basis_order, s.basis_index, k,
                                    cfg.near_rule);
      } else {
        far += std::complex<Real>(s.strength) * green_t<Real>(t.position, s.position, k);
      }
    }
    out[ti] = near + cplx(far);
  }
}

}  // namespace

std::vector<cplx> p2p(std::span<const SourceSample> targets,
                      std::span<const SourceSample> sources, WaveNumber k,
                      const KernelConfig& cfg) {
  std::vector<cplx> out(targets.size(), cplx(0));
  auto run = [&](size_t b, size_t e) {
    if (cfg.precision == Precision::f32)
      p2p_range<float>(targets, sources, k, cfg, b, e, out.data());
    else
      p2p_range<double>(targets, sources, k, cfg, b, e, out.data());
  };
  int nt = std::max(1, cfg.threads);
  if (nt == 1 || targets.size() < 2 * size_t(nt)) {
    run(0, targets.size());
    return out;
  }
  std::vector<std::thread> pool;
  size_t chunk = (targets.size() + nt - 1) / nt;
  for (int i = 0; i < nt; ++i) {
    size_t b = i * chunk, e = std::min(targets.size(), b + chunk);
    if (b >= e) break;
    pool.emplace_back(run, b, e);
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace hfmm::kernel
