#ifndef HFMM_COMMON_HPP
#define HFMM_COMMON_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hfmm {

using real_t = double;
using cplx = std::complex<double>;

inline constexpr double PI = 3.14159265358979323846264338327950288;

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// complex wavenumber k = wave_r + j*wave_i; wave_i >= 0 models attenuation
struct WaveNumber {
  double wave_r = 0, wave_i = 0;
  cplx value() const { return {wave_r, wave_i}; }
};

// error taxonomy: callers distinguish what went wrong, not where
struct parse_error : std::runtime_error {
  std::size_t line;
  parse_error(const std::string& msg, std::size_t ln)
      : std::runtime_error(msg + " (line " + std::to_string(ln) + ")"), line(ln) {}
};
struct format_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct io_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct config_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct geometry_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct singular_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct structural_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct accuracy_error : std::runtime_error { using std::runtime_error::runtime_error; };
struct topology_error : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace hfmm

#endif
