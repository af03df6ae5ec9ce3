#ifndef HFMM_SOLVER_HPP
#define HFMM_SOLVER_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/kernel.hpp"
#include "hfmm/traversal.hpp"

namespace hfmm::solver {

struct IncidentWave {
  Vec3 direction{0, 0, 1};  // must be unit length
  cplx amplitude{1.0, 0.0};
  WaveNumber k;
  double sound_speed = 343.0;
};

// how the boundary operator treats the kernel singularity.  `none` keeps the
// single-point far approximation and drops same-patch coupling entirely,
// `self_only` adds duffy-integrated same-patch blocks, `self_near` also
// re-integrates cross-patch sources inside the near threshold
enum class SingularityMode { none, self_only, self_near };

// tree-path knobs; the dense path reads only `use_tree`
struct OperatorConfig {
  bool use_tree = false;
  int expansion_order = -1;      // < 0: calibrate to the leaf scale
  double leaf_diameter_cap = 0;  // 0: kd_max / |k| when the gate is active
  fmm::TraversalConfig traversal;
};

// one unknown per (patch, interpolation node), patch-major so each patch owns
// a contiguous block of the coefficient vector.  the plain point-kernel sum
// (dense or tree) is shared by every mode; singularity treatment lives in
// precomputed sparse corrections stacked on top
struct DiscreteSystem {
  std::vector<geom::CurvilinearPatch> patches;
  int basis_order = 2;
  WaveNumber k;
  SingularityMode mode = SingularityMode::self_near;
  kernel::KernelConfig kernel_cfg;
  OperatorConfig op_cfg;

  std::vector<kernel::SourceSample> samples;  // strength/density set per apply
  std::vector<double> far_weight;             // reference basis integrals
  std::vector<cplx> solution;                 // last accepted gmres result

  // same-patch correction blocks, basis_count^2 per patch, row-major
  std::vector<cplx> patch_block;
  // LU factors of the raw self blocks (before the point-term subtraction),
  // used as a block-Jacobi right preconditioner.  empty when mode == none
  std::vector<cplx> block_lu;
  std::vector<int> block_piv;
  // near re-integration deltas, CSR over targets (self_near only)
  std::vector<std::uint32_t> near_offset;
  std::vector<std::uint32_t> near_source;
  std::vector<cplx> near_delta;

  fmm::Octree tree;  // populated when op_cfg.use_tree
  fmm::TraversalPlan plan;
  int expansion_order = -1;

  std::size_t size() const { return samples.size(); }
  int basis_count() const;

  // samples hold pointers into `patches`; moving keeps them valid, copying
  // would not
  DiscreteSystem() = default;
  DiscreteSystem(const DiscreteSystem&) = delete;
  DiscreteSystem& operator=(const DiscreteSystem&) = delete;
  DiscreteSystem(DiscreteSystem&&) = default;
  DiscreteSystem& operator=(DiscreteSystem&&) = default;
};

DiscreteSystem build_system(std::vector<geom::CurvilinearPatch> patches,
                            int basis_order, WaveNumber k,
                            SingularityMode mode = SingularityMode::self_near,
                            const kernel::KernelConfig& kernel_cfg = {},
                            const OperatorConfig& op_cfg = {});

// incident plane-wave trace at the collocation points
std::vector<cplx> assemble_rhs(const DiscreteSystem& sys,
                               const IncidentWave& wave);

// boundary operator action; mutates scratch state (tree bodies, sample
// strengths), hence non-const.  one apply at a time per system
std::vector<cplx> apply_operator(DiscreteSystem& sys, std::span<const cplx> x);

struct GmresConfig {
  double rtol = 1e-4;  // relative 2-norm residual target
  int restart = 50;
  int max_iterations = 500;
  // gmres_solve only: block-jacobi right preconditioning when the system
  // carries factored self blocks.  off compares the raw operators
  bool precondition = true;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  bool breakdown = false;  // Arnoldi closure; solution still returned
  double rhs_norm = 0;
  double final_residual = -1;  // true residual recomputed at exit
  double final_error = -1;     // vs an external reference, caller-filled
  std::vector<double> residuals;       // per-iteration estimate
  std::vector<double> seconds;         // wall clock since solve start
  std::vector<double> matvec_seconds;  // operator time per iteration
};

using MatVec = std::function<std::vector<cplx>(std::span<const cplx>)>;

// restarted GMRES, modified Gram-Schmidt with one reorthogonalization pass.
// non-convergence and breakdown are reported, never thrown
std::pair<std::vector<cplx>, SolveReport> gmres(const MatVec& apply,
                                                std::span<const cplx> rhs,
                                                const GmresConfig& cfg);

// gmres over apply_operator; stores the solution in sys.solution too.
// when the system carries self-block LU factors the operator is right
// preconditioned by them, which leaves every reported residual a residual
// of the original system
std::pair<std::vector<cplx>, SolveReport> gmres_solve(DiscreteSystem& sys,
                                                      std::span<const cplx> rhs,
                                                      const GmresConfig& cfg);

// plain single-layer sum of the given coefficients at exterior points.  when
// the coefficients solve the boundary system the physical scattered field is
// the negative of this value (exterior representation flips the sign)
std::vector<cplx> evaluate_scattered_field(const DiscreteSystem& sys,
                                           std::span<const cplx> solution,
                                           std::span<const Vec3> observations,
                                           WaveNumber k);

std::string report_json(const SolveReport& report);
void write_residual_csv(const SolveReport& report, std::ostream& out);

}  // namespace hfmm::solver

#endif
