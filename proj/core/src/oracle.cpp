#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "hfmm/oracle.hpp"
#include "hfmm/special.hpp"

namespace hfmm::oracle {

std::vector<cplx> mie_soft_sphere(const MieConfig& cfg) {
  if (cfg.radius <= 0.0) throw config_error("mie: radius must be positive");
  if (cfg.k.wave_r <= 0.0)
    throw config_error("mie: propagating wavenumber must be positive");
  for (const auto& obs : cfg.observations)
    if (obs.r < cfg.radius)
      throw config_error("mie: observation point inside the sphere");
  if (cfg.observations.empty()) return {};

  const cplx kc = cfg.k.value();
  const double ka_mag = std::abs(kc) * cfg.radius;
  int nmax = cfg.n_terms;
  if (nmax <= 0) nmax = int(ka_mag + 8.0 * std::cbrt(ka_mag) + 16.0);

  // modal reflection coefficients at the surface
  std::vector<cplx> ja(nmax + 1), ha(nmax + 1), ratio(nmax + 1);
  sf::sph_jn(nmax, kc * cfg.radius, ja.data());
  sf::sph_hn(nmax, kc * cfg.radius, ha.data());
  for (int n = 0; n <= nmax; ++n) ratio[n] = ja[n] / ha[n];

  double r_min = cfg.observations[0].r;
  for (const auto& obs : cfg.observations) r_min = std::min(r_min, obs.r);

  std::vector<cplx> out(cfg.observations.size());
  std::vector<cplx> hr(nmax + 1);
  double scale = 0;
  for (std::size_t o = 0; o < cfg.observations.size(); ++o) {
    const auto& obs = cfg.observations[o];
    sf::sph_hn(nmax, kc * obs.r, hr.data());
    const double mu = std::cos(obs.theta);
    cplx sum = 0, in = 1;  // i^n, advanced each term
    for (int n = 0; n <= nmax; ++n) {
      sum -= double(2 * n + 1) * in * ratio[n] * hr[n] * sf::legendre_pn(n, mu);
      in *= cplx(0, 1);
      scale = std::max(scale, std::abs(sum));
    }
    out[o] = sum;
  }

  // |P_n| <= 1 and |h_n| decays with r, so the last term at the closest
  // observation bounds the tail for every point
  std::vector<cplx> htail(nmax + 1);
  sf::sph_hn(nmax, kc * r_min, htail.data());
  const double tail =
      std::abs(double(2 * nmax + 1) * ratio[nmax] * htail[nmax]);
  if (tail >= 1e-12 * scale)
    throw accuracy_error("mie: series truncated before convergence");
  return out;
}

void write_mie_csv(const std::filesystem::path& path, const MieConfig& cfg,
                   std::span<const cplx> values) {
  if (values.size() != cfg.observations.size())
    throw config_error("mie csv: value count does not match observations");
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path.string());
  out.precision(17);
  out << "theta_deg,real,imag,magnitude\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    out << cfg.observations[i].theta * 180.0 / PI << ',' << values[i].real()
        << ',' << values[i].imag() << ',' << std::abs(values[i]) << '\n';
  if (!out) throw io_error("failed writing " + path.string());
}

cplx dense_entry(const solver::DiscreteSystem& sys, std::size_t row,
                 std::size_t col) {
  const std::size_t ni = std::size_t(sys.basis_count());
  const std::size_t tp = row / ni, sp = col / ni;
  const auto& target = sys.samples[row];
  const auto& source = sys.samples[col];

  if (tp == sp) {
    if (sys.mode == solver::SingularityMode::none) return 0;
    std::vector<cplx> unit(ni, cplx(0));
    unit[col % ni] = 1;
    return kernel::self_patch_integral(target.zeta, target.eta,
                                       sys.patches[tp], unit, sys.k,
                                       sys.kernel_cfg.self_rule);
  }

  const double r2 = (target.position - source.position).norm2();
  if (r2 == 0.0) return 0;  // coincident nodes of adjacent patches

  if (sys.mode == solver::SingularityMode::self_near) {
    const double d = sys.kernel_cfg.near_patch_distance;
    const double thr = d < 0 ? 2.0 * sys.patches[sp].diameter() : d;
    if (thr > 0.0 && r2 <= thr * thr)
      return kernel::near_basis_integral(target.position, sys.patches[sp],
                                         source.basis_order,
                                         source.basis_index, sys.k,
                                         sys.kernel_cfg.near_rule);
  }

  return kernel::green(target.position, source.position, sys.k) *
         sys.far_weight[col];
}

std::vector<cplx> dense_matvec(const solver::DiscreteSystem& sys,
                               std::span<const cplx> x) {
  if (sys.size() > kDenseGuard)
    throw config_error("dense reference capped at 50000 unknowns");
  if (x.size() != sys.size())
    throw config_error("dense_matvec: coefficient vector length mismatch");

  const std::size_t n = sys.size();
  std::vector<cplx> y(n);
  unsigned workers = std::thread::hardware_concurrency();
  if (workers == 0) workers = 1;
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t row = begin; row < end; ++row) {
      cplx acc = 0;
      for (std::size_t col = 0; col < n; ++col)
        acc += dense_entry(sys, row, col) * x[col];
      y[row] = acc;
    }
  };
  if (workers <= 1 || n < 2 * workers) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned t = 0; t < workers; ++t) {
      const std::size_t b = t * chunk, e = std::min(n, b + chunk);
      if (b >= e) break;
      pool.emplace_back(run, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return y;
}

}  // namespace hfmm::oracle
