#pragma once

// Point-to-model residual kernels.
//
// Every kernel evaluates the same sequence of IEEE operations as the scalar
// reference (no FMA contraction), so the AVX2 variant returns bit-identical
// residuals and therefore identical inlier sets. The variant is chosen at
// runtime from CPU features; CONTACTSEG_SIMD=scalar forces the reference.

#include "contactseg/shape_kind.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace contactseg {
class ShapeModel;
}

namespace contactseg::simd {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

/// Flat parameter block consumed by the kernels.
///   Line:   c[0..2] point, c[3..5] unit direction
///   Plane:  c[0..2] unit normal, c[3] offset
///   Sphere: c[0..2] center, c[3] radius
///   Poly:   c[0..2] origin, c[3..5] u, c[6..8] v, c[9..11] w,
///           c[12..] coefficients (6 or 10)
struct ResidualProgram {
  ShapeKind kind = ShapeKind::Plane;
  std::array<double, 22> c{};
};

ResidualProgram compile(const ShapeModel& model);

/// True when the running CPU and the build both support `isa`.
bool isa_available(Isa isa);

/// Best available variant, honouring CONTACTSEG_SIMD=scalar.
Isa active_isa();

/// out[i] = residual of point i.
void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out, Isa isa);

/// Writes ascending indices with residual < tau to `out` (capacity n) and
/// returns their count.
std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out, Isa isa);

namespace scalar {
double residual(const ResidualProgram& prog, double x, double y, double z);
void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out);
std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out);
}  // namespace scalar

namespace avx2 {
bool compiled();
void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out);
std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out);
}  // namespace avx2

}  // namespace contactseg::simd
