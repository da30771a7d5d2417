#include "contactseg/simd/residual_kernels.hpp"

#include "contactseg/primitives.hpp"

#include <cstdlib>
#include <cstring>

namespace contactseg::simd {

std::string_view to_string(Isa isa) {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

ResidualProgram compile(const ShapeModel& model) {
  ResidualProgram prog;
  prog.kind = model.kind();
  auto put = [&](int at, const Vec3& v) {
    prog.c[at] = v.x();
    prog.c[at + 1] = v.y();
    prog.c[at + 2] = v.z();
  };
  switch (model.kind()) {
    case ShapeKind::Line:
      put(0, model.line().point);
      put(3, model.line().direction);
      break;
    case ShapeKind::Plane:
      put(0, model.plane().normal);
      prog.c[3] = model.plane().offset;
      break;
    case ShapeKind::Sphere:
      put(0, model.sphere().center);
      prog.c[3] = model.sphere().radius;
      break;
    case ShapeKind::Poly2:
    case ShapeKind::Poly3: {
      const auto& p = model.poly();
      put(0, p.frame.origin);
      put(3, p.frame.u);
      put(6, p.frame.v);
      put(9, p.frame.w);
      for (std::size_t i = 0; i < p.coefficients.size(); ++i) {
        prog.c[12 + i] = p.coefficients[i];
      }
      break;
    }
  }
  return prog;
}

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
  return avx2::compiled() && __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa active_isa() {
  static const Isa chosen = [] {
    const char* env = std::getenv("CONTACTSEG_SIMD");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
    return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
  }();
  return chosen;
}

void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out, Isa isa) {
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) {
    avx2::residuals(prog, x, y, z, n, out);
  } else {
    scalar::residuals(prog, x, y, z, n, out);
  }
}

std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out, Isa isa) {
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) {
    return avx2::classify(prog, x, y, z, n, tau, out);
  }
  return scalar::classify(prog, x, y, z, n, tau, out);
}

}  // namespace contactseg::simd
