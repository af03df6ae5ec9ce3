#pragma once

#include <span>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/octree.hpp"

namespace hfmm::fmm {

// Outgoing (multipole) basis S_n^m(r) = h_n(k|r|) Y_n^m(r_hat) and incoming
// (local) basis R_n^m(r) = j_n(k|r|) Y_n^m(r_hat), laid out n(n+1)+m.
// Either output pointer may be null. r = 0 keeps only the n=0 regular term;
// the singular set has a pole there and throws.
void basis_functions(WaveNumber k, const Vec3& r, int order, cplx* regular,
                     cplx* singular);

// Radial factors carried by the lambda sum of a translation: j (regular,
// used by multipole-to-multipole and local-to-local shifts) or h (singular,
// used by multipole-to-local).
enum class Radial { regular, singular };

// Geometry-independent coupling factors of the translation operators at a
// fixed truncation order. Entry (out nu,mu | in n,m) is the list of
// (lambda, 4*pi*(-1)^m*W3(nu,lambda,n)*3j(nu,lambda,n;-mu,mu-m,m)) pairs,
// lambda stepping by 2 through the triangle window.
class GauntTable {
 public:
  struct Term {
    int lambda;
    double coeff;
  };

  explicit GauntTable(int order);
  int order() const { return order_; }
  std::span<const Term> terms(int nu, int mu, int n, int m) const;

 private:
  int order_;
  std::vector<Term> pool_;
  std::vector<std::uint32_t> offset_;
};

// Shared per-order table (built once, then read-only).
const GauntTable& gaunt_table(int order);

// Dense (order+1)^2 square operator taking coefficients about the old center
// to coefficients about the new one, t = new_center - old_center:
//   out[nu,mu] = sum_{n,m} T[(nu,mu),(n,m)] * in[n,m]
// Row-major with nm_index; Radial::singular requires |t| > 0.
std::vector<cplx> translation_matrix(WaveNumber k, const Vec3& t, int order,
                                     Radial radial);

// out += T * in (orders of out, in, and T must agree).
void translate(const Expansion& in, Expansion& out,
               std::span<const cplx> matrix);

// Multipole-to-local between tree cells; the separation must exceed the sum
// of cell radii or the shifted series diverges (config_error).
void translate_m2l(const Cell& source, Cell& target, WaveNumber k);

// Accumulates ik * src * j_n(k rho) * conj-spherical-harmonic moments of the
// bodies about `center` into M (allocated by the caller).
void p2m(const Body* bodies, std::size_t count, const Vec3& center,
         WaveNumber k, Expansion& m);

// Field of a multipole/local expansion at a point (diagnostics and tests).
cplx eval_multipole(const Expansion& m, const Vec3& center, const Vec3& point,
                    WaveNumber k);
cplx eval_local(const Expansion& l, const Vec3& center, const Vec3& point,
                WaveNumber k);

// Leaf moments plus upward shifts, children before parents. Returns the
// number of cells whose top order fell below the radial resolution floor
// (j_order underflow), a truncation-waste warning rather than an error.
std::size_t compute_multipoles(Octree& tree, WaveNumber k, int order);

// Downward local shifts then evaluation into body trg. Locals must have been
// allocated (and typically seeded by the traversal's M2L pass); cells with
// unallocated locals contribute nothing.
void compute_locals(Octree& tree, WaveNumber k);

// Smallest truncation order whose worst-case single-pair error (corner
// source and corner target of two cells of the given diameter, separated at
// the admissibility threshold for `theta`) is below tol. Returns max_order
// if the target is never met.
int calibrate_order(WaveNumber k, double diameter, double theta = 0.5,
                    double tol = 1e-5, int max_order = 24);

} // namespace hfmm::fmm
