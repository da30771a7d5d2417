#include "contactseg/simd/residual_kernels.hpp"

#include <cmath>

namespace contactseg::simd::scalar {

namespace {

inline double poly_residual(const double* c, int order, double x, double y,
                            double z) {
  const double dx = x - c[0];
  const double dy = y - c[1];
  const double dz = z - c[2];
  const double u = (c[3] * dx + c[4] * dy) + c[5] * dz;
  const double v = (c[6] * dx + c[7] * dy) + c[8] * dz;
  const double w = (c[9] * dx + c[10] * dy) + c[11] * dz;
  const double uu = u * u;
  const double uv = u * v;
  const double vv = v * v;
  const double* k = c + 12;
  double f = k[0] + k[1] * u;
  f = f + k[2] * v;
  f = f + k[3] * uu;
  f = f + k[4] * uv;
  f = f + k[5] * vv;
  if (order == 3) {
    f = f + k[6] * (uu * u);
    f = f + k[7] * (uu * v);
    f = f + k[8] * (u * vv);
    f = f + k[9] * (vv * v);
  }
  return std::fabs(w - f);
}

}  // namespace

double residual(const ResidualProgram& prog, double x, double y, double z) {
  const double* c = prog.c.data();
  switch (prog.kind) {
    case ShapeKind::Plane:
      return std::fabs(((c[0] * x + c[1] * y) + c[2] * z) + c[3]);
    case ShapeKind::Line: {
      const double dx = x - c[0];
      const double dy = y - c[1];
      const double dz = z - c[2];
      const double cx = dy * c[5] - dz * c[4];
      const double cy = dz * c[3] - dx * c[5];
      const double cz = dx * c[4] - dy * c[3];
      return std::sqrt((cx * cx + cy * cy) + cz * cz);
    }
    case ShapeKind::Sphere: {
      const double dx = x - c[0];
      const double dy = y - c[1];
      const double dz = z - c[2];
      return std::fabs(std::sqrt((dx * dx + dy * dy) + dz * dz) - c[3]);
    }
    case ShapeKind::Poly2:
      return poly_residual(c, 2, x, y, z);
    case ShapeKind::Poly3:
      return poly_residual(c, 3, x, y, z);
  }
  return 0.0;
}

void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = residual(prog, x[i], y[i], z[i]);
}

std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (residual(prog, x[i], y[i], z[i]) < tau) {
      out[count++] = static_cast<std::uint32_t>(i);
    }
  }
  return count;
}

}  // namespace contactseg::simd::scalar
