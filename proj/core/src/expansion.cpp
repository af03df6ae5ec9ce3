#include "hfmm/expansion.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "hfmm/kernel.hpp"
#include "hfmm/special.hpp"

namespace hfmm::fmm {

namespace {

const cplx kIPow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};

cplx ipow(int p) { return kIPow[((p % 4) + 4) % 4]; }

} // namespace

void basis_functions(WaveNumber k, const Vec3& r, int order, cplx* regular,
                     cplx* singular) {
  if (order < 0) throw config_error("basis order must be non-negative");
  const double rmag = r.norm();
  const cplx z = k.value() * rmag;
  std::vector<cplx> harm(sf::nm_total(order));
  sf::ynm(order, r, harm.data());
  std::vector<cplx> rad(order + 1);
  if (regular) {
    sf::sph_jn(order, z, rad.data());
    for (int n = 0; n <= order; ++n)
      for (int m = -n; m <= n; ++m) {
        const int i = sf::nm_index(n, m);
        regular[i] = rad[n] * harm[i];
      }
  }
  if (singular) {
    sf::sph_hn(order, z, rad.data());
    for (int n = 0; n <= order; ++n)
      for (int m = -n; m <= n; ++m) {
        const int i = sf::nm_index(n, m);
        singular[i] = rad[n] * harm[i];
      }
  }
}

GauntTable::GauntTable(int order) : order_(order) {
  if (order < 0) throw config_error("gaunt table order must be non-negative");
  const int dim = sf::nm_total(order);
  offset_.assign(std::size_t(dim) * dim + 1, 0);
  const double four_pi = 4 * PI;

  std::size_t slot = 0;
  for (int nu = 0; nu <= order; ++nu)
    for (int mu = -nu; mu <= nu; ++mu) {
      const int out = sf::nm_index(nu, mu);
      for (int n = 0; n <= order; ++n)
        for (int m = -n; m <= n; ++m) {
          const int in = sf::nm_index(n, m);
          slot = std::size_t(out) * dim + in;
          offset_[slot] = std::uint32_t(pool_.size());
          int lo = std::max(std::abs(n - nu), std::abs(m - mu));
          if ((lo ^ (n + nu)) & 1) ++lo; // parity of the 000 symbol
          for (int lam = lo; lam <= n + nu; lam += 2) {
            const double w3 =
                std::sqrt((2 * nu + 1) * (2 * lam + 1) * (2 * n + 1) /
                          four_pi) *
                sf::wigner3j(nu, lam, n, 0, 0, 0);
            const double proj = sf::wigner3j(nu, lam, n, -mu, mu - m, m);
            const double c = four_pi * (m % 2 ? -1.0 : 1.0) * w3 * proj;
            if (c != 0) pool_.push_back({lam, c});
          }
        }
    }
  offset_.back() = std::uint32_t(pool_.size());
}

std::span<const GauntTable::Term> GauntTable::terms(int nu, int mu, int n,
                                                    int m) const {
  const int dim = sf::nm_total(order_);
  const std::size_t slot =
      std::size_t(sf::nm_index(nu, mu)) * dim + sf::nm_index(n, m);
  return {pool_.data() + offset_[slot], pool_.data() + offset_[slot + 1]};
}

const GauntTable& gaunt_table(int order) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GauntTable>> cache;
  std::scoped_lock lock(mu);
  auto& entry = cache[order];
  if (!entry) entry = std::make_unique<GauntTable>(order);
  return *entry;
}

std::vector<cplx> translation_matrix(WaveNumber k, const Vec3& t, int order,
                                     Radial radial) {
  const GauntTable& table = gaunt_table(order);
  const int dim = sf::nm_total(order);
  const int lmax = 2 * order;
  const cplx z = k.value() * t.norm();

  std::vector<cplx> rad(lmax + 1);
  if (radial == Radial::regular)
    sf::sph_jn(lmax, z, rad.data());
  else
    sf::sph_hn(lmax, z, rad.data()); // throws on zero shift
  std::vector<cplx> harm(sf::nm_total(lmax));
  sf::ynm(lmax, t, harm.data());

  std::vector<cplx> matrix(std::size_t(dim) * dim);
  for (int nu = 0; nu <= order; ++nu)
    for (int mu = -nu; mu <= nu; ++mu) {
      const int out = sf::nm_index(nu, mu);
      for (int n = 0; n <= order; ++n)
        for (int m = -n; m <= n; ++m) {
          cplx sum = 0;
          for (const auto& term : table.terms(nu, mu, n, m))
            sum += ipow(nu + term.lambda - n) * term.coeff *
                   rad[term.lambda] * harm[sf::nm_index(term.lambda, m - mu)];
          matrix[std::size_t(out) * dim + sf::nm_index(n, m)] = sum;
        }
    }
  return matrix;
}

void translate(const Expansion& in, Expansion& out,
               std::span<const cplx> matrix) {
  if (in.order != out.order || in.order < 0)
    throw config_error("translation requires matching allocated orders");
  const std::size_t dim = in.coeff.size();
  if (matrix.size() != dim * dim)
    throw config_error("translation matrix size mismatch");
  for (std::size_t o = 0; o < dim; ++o) {
    cplx sum = 0;
    const cplx* row = matrix.data() + o * dim;
    for (std::size_t i = 0; i < dim; ++i) sum += row[i] * in.coeff[i];
    out.coeff[o] += sum;
  }
}

void translate_m2l(const Cell& source, Cell& target, WaveNumber k) {
  if (!source.multipole.allocated())
    throw config_error("source multipole not computed");
  const Vec3 t = target.center - source.center;
  if (t.norm() <= source.radius + target.radius)
    throw config_error(
        "multipole-to-local shift requires separated cells (series "
        "diverges inside the sum of radii)");
  if (!target.local.allocated()) target.local.resize(source.multipole.order);
  if (target.local.order != source.multipole.order)
    throw config_error("local order does not match source multipole order");
  const auto matrix =
      translation_matrix(k, t, source.multipole.order, Radial::singular);
  translate(source.multipole, target.local, matrix);
}

void p2m(const Body* bodies, std::size_t count, const Vec3& center,
         WaveNumber k, Expansion& m) {
  if (!m.allocated()) throw config_error("multipole not allocated");
  const int order = m.order;
  const cplx ik = cplx{0, 1} * k.value();
  std::vector<cplx> rad(order + 1);
  std::vector<cplx> harm(sf::nm_total(order));
  for (std::size_t b = 0; b < count; ++b) {
    const Vec3 rho = bodies[b].position - center;
    sf::sph_jn(order, k.value() * rho.norm(), rad.data());
    sf::ynm(order, rho, harm.data());
    const cplx q = ik * bodies[b].src;
    for (int n = 0; n <= order; ++n)
      for (int mm = -n; mm <= n; ++mm) {
        const int i = sf::nm_index(n, mm);
        m.coeff[i] += q * rad[n] * std::conj(harm[i]);
      }
  }
}

cplx eval_multipole(const Expansion& m, const Vec3& center, const Vec3& point,
                    WaveNumber k) {
  if (!m.allocated()) return 0;
  std::vector<cplx> basis(m.coeff.size());
  basis_functions(k, point - center, m.order, nullptr, basis.data());
  cplx p = 0;
  for (std::size_t i = 0; i < basis.size(); ++i) p += m.coeff[i] * basis[i];
  return p;
}

cplx eval_local(const Expansion& l, const Vec3& center, const Vec3& point,
                WaveNumber k) {
  if (!l.allocated()) return 0;
  std::vector<cplx> basis(l.coeff.size());
  basis_functions(k, point - center, l.order, basis.data(), nullptr);
  cplx p = 0;
  for (std::size_t i = 0; i < basis.size(); ++i) p += l.coeff[i] * basis[i];
  return p;
}

namespace {

// parent center minus child center, exact per axis from the octant bits
Vec3 shift_up(const Octree& tree, const Cell& child) {
  const double h = tree.side(child.level) / 2;
  return Vec3{child.ix & 1 ? -h : h, child.iy & 1 ? -h : h,
              child.iz & 1 ? -h : h};
}

using MatrixCache = std::map<std::pair<int, int>, std::vector<cplx>>;

const std::vector<cplx>& shift_matrix(MatrixCache& cache, WaveNumber k,
                                      int order, const Octree& tree,
                                      const Cell& child, bool upward) {
  const int signs = int(child.ix & 1) << 2 | int(child.iy & 1) << 1 |
                    int(child.iz & 1);
  auto key = std::make_pair(child.level, upward ? signs : signs + 8);
  auto it = cache.find(key);
  if (it == cache.end()) {
    Vec3 t = shift_up(tree, child);
    if (!upward) t = Vec3{0, 0, 0} - t;
    it = cache.emplace(key, translation_matrix(k, t, order, Radial::regular))
             .first;
  }
  return it->second;
}

} // namespace

std::size_t compute_multipoles(Octree& tree, WaveNumber k, int order) {
  if (order < 0) throw config_error("expansion order must be non-negative");
  for (Cell& cell : tree.cells) {
    if (cell.frozen && cell.multipole.allocated()) {
      if (cell.multipole.order != order)
        throw config_error("grafted expansion order differs from the run");
      continue;
    }
    cell.multipole.resize(order);
  }

  MatrixCache cache;
  for (std::size_t i = tree.cells.size(); i-- > 0;) {
    Cell& cell = tree.cells[i];
    if (cell.frozen) continue; // shipped or synthetic: values stay put
    if (cell.leaf()) {
      p2m(tree.bodies.data() + cell.body_first, cell.body_count, cell.center,
          k, cell.multipole);
    } else {
      for (std::uint32_t c = 0; c < cell.child_count; ++c) {
        const Cell& child = tree.cells[cell.child_first + c];
        translate(child.multipole, cell.multipole,
                  shift_matrix(cache, k, order, tree, child, true));
      }
    }
  }

  // truncation-waste scan: top radial factor vanishing at the cell scale
  // means the tail orders carry nothing at this wavenumber
  std::size_t starved = 0;
  std::vector<cplx> rad(order + 1);
  const double kmag = std::abs(k.value());
  for (const Cell& cell : tree.cells) {
    sf::sph_jn(order, kmag * cell.radius, rad.data());
    if (order > 0 && std::abs(rad[order]) == 0) ++starved;
  }
  return starved;
}

void compute_locals(Octree& tree, WaveNumber k) {
  MatrixCache cache;
  int order = -1;
  for (std::size_t i = 0; i < tree.cells.size(); ++i) {
    Cell& cell = tree.cells[i];
    if (!cell.local.allocated()) continue;
    order = cell.local.order;
    for (std::uint32_t c = 0; c < cell.child_count; ++c) {
      Cell& child = tree.cells[cell.child_first + c];
      if (!child.local.allocated()) child.local.resize(order);
      translate(cell.local, child.local,
                shift_matrix(cache, k, order, tree, child, false));
    }
  }
  if (order < 0) return; // nothing seeded anywhere

  std::vector<cplx> rad(order + 1);
  std::vector<cplx> harm(sf::nm_total(order));
  for (std::uint32_t li : tree.leaves) {
    Cell& leaf = tree.cells[li];
    if (!leaf.local.allocated()) continue;
    for (std::uint32_t b = leaf.body_first; b < leaf.body_first + leaf.body_count;
         ++b) {
      Body& body = tree.bodies[b];
      const Vec3 x = body.position - leaf.center;
      sf::sph_jn(order, k.value() * x.norm(), rad.data());
      sf::ynm(order, x, harm.data());
      cplx p = 0;
      for (int n = 0; n <= order; ++n)
        for (int m = -n; m <= n; ++m) {
          const int idx = sf::nm_index(n, m);
          p += leaf.local.coeff[idx] * rad[n] * harm[idx];
        }
      body.trg += p;
    }
  }
}

int calibrate_order(WaveNumber k, double diameter, double theta, double tol,
                    int max_order) {
  if (!(diameter > 0) || !(theta > 0) || theta > 1)
    throw config_error("calibration needs diameter > 0 and 0 < theta <= 1");
  const double a = diameter / std::sqrt(3.0); // cube side
  const double sep = diameter / theta * (1 + 1e-9);
  const Vec3 src_center{0, 0, 0};
  const Vec3 tgt_center{sep, 0, 0};

  // corner pairs bracketing the worst case: full-radius offsets toward and
  // away from the partner cell
  const Vec3 probes_src[] = {{a / 2, a / 2, a / 2},
                             {-a / 2, -a / 2, -a / 2},
                             {a / 2, -a / 2, a / 2}};
  const Vec3 probes_tgt[] = {{-a / 2, -a / 2, -a / 2},
                             {a / 2, a / 2, a / 2},
                             {-a / 2, a / 2, -a / 2}};

  for (int p = 1; p <= max_order; ++p) {
    const auto matrix =
        translation_matrix(k, tgt_center - src_center, p, Radial::singular);
    double worst = 0;
    for (const Vec3& ds : probes_src)
      for (const Vec3& dt : probes_tgt) {
        const Vec3 src = src_center + ds;
        const Vec3 tgt = tgt_center + dt;
        Body body;
        body.position = src;
        body.src = 1;
        Expansion m;
        m.resize(p);
        p2m(&body, 1, src_center, k, m);
        Expansion l;
        l.resize(p);
        translate(m, l, matrix);
        const cplx approx = eval_local(l, tgt_center, tgt, k);
        const cplx exact = kernel::green(tgt, src, k);
        worst = std::max(worst, std::abs(approx - exact) / std::abs(exact));
      }
    if (worst < tol) return p;
  }
  return max_order;
}

} // namespace hfmm::fmm
