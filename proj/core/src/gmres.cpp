#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include "hfmm/solver.hpp"
#include "json.hpp"

namespace hfmm::solver {

namespace {

double vec_norm(std::span<const cplx> v) {
  double s = 0;
  for (const cplx& z : v) s += std::norm(z);
  return std::sqrt(s);
}

cplx vec_dot(std::span<const cplx> a, std::span<const cplx> b) {
  cplx s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

void validate(const GmresConfig& cfg) {
  if (!(cfg.rtol > 0.0 && cfg.rtol < 1.0))
    throw config_error("gmres: rtol must lie in (0, 1)");
  if (cfg.restart < 1) throw config_error("gmres: restart must be >= 1");
  if (cfg.max_iterations < 1)
    throw config_error("gmres: max_iterations must be >= 1");
}

}  // namespace

std::pair<std::vector<cplx>, SolveReport> gmres(const MatVec& apply,
                                                std::span<const cplx> rhs,
                                                const GmresConfig& cfg) {
  validate(cfg);
  using clk = std::chrono::steady_clock;
  const auto start = clk::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(clk::now() - start).count();
  };

  const std::size_t n = rhs.size();
  SolveReport rep;
  rep.rhs_norm = vec_norm(rhs);
  std::vector<cplx> x(n, cplx(0));
  if (rep.rhs_norm == 0.0) {
    rep.converged = true;
    rep.final_residual = 0;
    return {std::move(x), std::move(rep)};
  }
  const double target = cfg.rtol * rep.rhs_norm;

  const int m = cfg.restart;
  // H column-major, leading dimension m+1, rotated in place by Givens
  std::vector<cplx> H(std::size_t(m + 1) * m);
  std::vector<cplx> cs(m), sn(m), g(m + 1);
  std::vector<std::vector<cplx>> V(m + 1);
  auto h = [&](int i, int j) -> cplx& {
    return H[std::size_t(j) * (m + 1) + i];
  };

  auto timed_apply = [&](std::span<const cplx> v) {
    const auto t0 = clk::now();
    auto out = apply(v);
    rep.matvec_seconds.push_back(
        std::chrono::duration<double>(clk::now() - t0).count());
    return out;
  };

  // fold `cols` Arnoldi columns into x, skipping trailing dead diagonals
  // (rank-deficient close-out leaves a zero pivot)
  auto finalize = [&](int cols) {
    while (cols > 0 && std::abs(h(cols - 1, cols - 1)) == 0.0) --cols;
    std::vector<cplx> y(cols);
    for (int i = cols - 1; i >= 0; --i) {
      cplx s = g[i];
      for (int l = i + 1; l < cols; ++l) s -= h(i, l) * y[l];
      y[i] = std::abs(h(i, i)) == 0.0 ? cplx(0) : s / h(i, i);
    }
    for (int i = 0; i < cols; ++i)
      for (std::size_t r = 0; r < n; ++r) x[r] += y[i] * V[i][r];
  };

  std::vector<cplx> residual(rhs.begin(), rhs.end());
  bool done = false;
  while (!done) {
    const double beta = vec_norm(residual);
    if (beta <= target || rep.iterations >= cfg.max_iterations) break;

    V[0] = residual;
    for (cplx& z : V[0]) z /= beta;
    std::fill(g.begin(), g.end(), cplx(0));
    g[0] = beta;

    int cols = 0;
    for (int j = 0; j < m; ++j) {
      if (rep.iterations >= cfg.max_iterations) break;
      std::vector<cplx> w = timed_apply(V[j]);
      const double w_scale = vec_norm(w);
      for (int i = 0; i <= j; ++i) {
        const cplx hij = vec_dot(V[i], w);
        h(i, j) = hij;
        for (std::size_t r = 0; r < n; ++r) w[r] -= hij * V[i][r];
      }
      // one unconditional reorthogonalization pass keeps the basis clean
      for (int i = 0; i <= j; ++i) {
        const cplx c = vec_dot(V[i], w);
        h(i, j) += c;
        for (std::size_t r = 0; r < n; ++r) w[r] -= c * V[i][r];
      }
      double hnext = vec_norm(w);
      const bool broke = hnext <= 1e-14 * std::max(w_scale, 1e-300);
      if (broke) hnext = 0;

      for (int i = 0; i < j; ++i) {
        const cplx a = h(i, j), b = h(i + 1, j);
        h(i, j) = cs[i] * a + sn[i] * b;
        h(i + 1, j) = -std::conj(sn[i]) * a + cs[i] * b;
      }
      const cplx a = h(j, j);
      const double b = hnext;
      const double r = std::hypot(std::abs(a), b);
      if (r == 0.0) {
        cs[j] = 1;
        sn[j] = 0;
      } else if (std::abs(a) == 0.0) {
        cs[j] = 0;
        sn[j] = 1;
      } else {
        cs[j] = std::abs(a) / r;
        sn[j] = (a / std::abs(a)) * (b / r);
      }
      h(j, j) = cs[j] * a + sn[j] * b;
      g[j + 1] = -std::conj(sn[j]) * g[j];
      g[j] = cs[j] * g[j];

      ++rep.iterations;
      cols = j + 1;
      const double est = std::abs(g[j + 1]);
      rep.residuals.push_back(est / rep.rhs_norm);
      rep.seconds.push_back(elapsed());

      if (broke) {
        rep.breakdown = true;
        done = true;
        break;
      }
      if (est <= target) {
        done = true;
        break;
      }
      V[j + 1] = std::move(w);
      for (cplx& z : V[j + 1]) z /= hnext;
    }
    finalize(cols);
    if (!done) {
      auto ax = apply(x);  // restart boundary, not an Arnoldi step
      for (std::size_t r = 0; r < n; ++r) residual[r] = rhs[r] - ax[r];
    }
  }

  {
    auto ax = apply(x);
    double s = 0;
    for (std::size_t r = 0; r < n; ++r) s += std::norm(rhs[r] - ax[r]);
    rep.final_residual = std::sqrt(s) / rep.rhs_norm;
  }
  rep.converged = rep.final_residual <= cfg.rtol ||
                  (!rep.residuals.empty() && rep.residuals.back() <= cfg.rtol);
  return {std::move(x), std::move(rep)};
}

std::string report_json(const SolveReport& rep) {
  nlohmann::json j;
  j["iterations"] = rep.iterations;
  j["converged"] = rep.converged;
  j["breakdown"] = rep.breakdown;
  j["rhs_norm"] = rep.rhs_norm;
  j["final_residual"] = rep.final_residual;
  if (rep.final_error >= 0) j["final_error"] = rep.final_error;
  j["residuals"] = rep.residuals;
  j["seconds"] = rep.seconds;
  j["matvec_seconds"] = rep.matvec_seconds;
  return j.dump(2);
}

void write_residual_csv(const SolveReport& rep, std::ostream& out) {
  out << "iteration,residual,seconds\n";
  for (std::size_t i = 0; i < rep.residuals.size(); ++i) {
    out << (i + 1) << ',' << rep.residuals[i] << ','
        << (i < rep.seconds.size() ? rep.seconds[i] : 0.0) << '\n';
  }
}

}  // namespace hfmm::solver
