#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/solver.hpp"

namespace hfmm::oracle {

// observation point in spherical coordinates about the scatterer center,
// theta measured from the incidence axis
struct SphericalPoint {
  double r = 0;
  double theta = 0;
  double phi = 0;
};

struct MieConfig {
  double radius = 1.0;
  WaveNumber k;
  int n_terms = 0;  // <= 0 picks the order from ka automatically
  std::vector<SphericalPoint> observations;
};

// scattered pressure of a unit plane wave hitting a sound-soft sphere,
// one value per observation point
std::vector<cplx> mie_soft_sphere(const MieConfig& cfg);

void write_mie_csv(const std::filesystem::path& path, const MieConfig& cfg,
                   std::span<const cplx> values);

// largest system the dense reference will touch; beyond this the quadratic
// cost stops being a debugging aid
inline constexpr std::size_t kDenseGuard = 50000;

// single entry of the fully assembled influence matrix, matching what
// apply_operator realizes matrix-free
cplx dense_entry(const solver::DiscreteSystem& sys, std::size_t row,
                 std::size_t col);

std::vector<cplx> dense_matvec(const solver::DiscreteSystem& sys,
                               std::span<const cplx> x);

}  // namespace hfmm::oracle
