// Compiled with -mavx2 when the toolchain targets x86-64; only reached after
// a runtime CPU check. Mirrors residual_scalar.cpp operation for operation.

#include "contactseg/simd/residual_kernels.hpp"

#if defined(CONTACTSEG_HAVE_AVX2)
#include <immintrin.h>
#endif

namespace contactseg::simd::avx2 {

#if defined(CONTACTSEG_HAVE_AVX2)

namespace {

inline __m256d vabs(__m256d a) {
  return _mm256_andnot_pd(_mm256_set1_pd(-0.0), a);
}

struct Lanes {
  __m256d c[22];
  explicit Lanes(const ResidualProgram& prog) {
    for (int i = 0; i < 22; ++i) c[i] = _mm256_set1_pd(prog.c[i]);
  }
};

template <ShapeKind Kind>
inline __m256d residual4(const Lanes& L, __m256d x, __m256d y, __m256d z) {
  const __m256d* c = L.c;
  if constexpr (Kind == ShapeKind::Plane) {
    const __m256d s = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(c[0], x), _mm256_mul_pd(c[1], y)),
        _mm256_mul_pd(c[2], z));
    return vabs(_mm256_add_pd(s, c[3]));
  } else if constexpr (Kind == ShapeKind::Line) {
    const __m256d dx = _mm256_sub_pd(x, c[0]);
    const __m256d dy = _mm256_sub_pd(y, c[1]);
    const __m256d dz = _mm256_sub_pd(z, c[2]);
    const __m256d cx = _mm256_sub_pd(_mm256_mul_pd(dy, c[5]), _mm256_mul_pd(dz, c[4]));
    const __m256d cy = _mm256_sub_pd(_mm256_mul_pd(dz, c[3]), _mm256_mul_pd(dx, c[5]));
    const __m256d cz = _mm256_sub_pd(_mm256_mul_pd(dx, c[4]), _mm256_mul_pd(dy, c[3]));
    const __m256d s = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(cx, cx), _mm256_mul_pd(cy, cy)),
        _mm256_mul_pd(cz, cz));
    return _mm256_sqrt_pd(s);
  } else if constexpr (Kind == ShapeKind::Sphere) {
    const __m256d dx = _mm256_sub_pd(x, c[0]);
    const __m256d dy = _mm256_sub_pd(y, c[1]);
    const __m256d dz = _mm256_sub_pd(z, c[2]);
    const __m256d s = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
        _mm256_mul_pd(dz, dz));
    return vabs(_mm256_sub_pd(_mm256_sqrt_pd(s), c[3]));
  } else {
    const __m256d dx = _mm256_sub_pd(x, c[0]);
    const __m256d dy = _mm256_sub_pd(y, c[1]);
    const __m256d dz = _mm256_sub_pd(z, c[2]);
    auto dot = [&](int o) {
      return _mm256_add_pd(
          _mm256_add_pd(_mm256_mul_pd(c[o], dx), _mm256_mul_pd(c[o + 1], dy)),
          _mm256_mul_pd(c[o + 2], dz));
    };
    const __m256d u = dot(3);
    const __m256d v = dot(6);
    const __m256d w = dot(9);
    const __m256d uu = _mm256_mul_pd(u, u);
    const __m256d uv = _mm256_mul_pd(u, v);
    const __m256d vv = _mm256_mul_pd(v, v);
    const __m256d* k = c + 12;
    __m256d f = _mm256_add_pd(k[0], _mm256_mul_pd(k[1], u));
    f = _mm256_add_pd(f, _mm256_mul_pd(k[2], v));
    f = _mm256_add_pd(f, _mm256_mul_pd(k[3], uu));
    f = _mm256_add_pd(f, _mm256_mul_pd(k[4], uv));
    f = _mm256_add_pd(f, _mm256_mul_pd(k[5], vv));
    if constexpr (Kind == ShapeKind::Poly3) {
      f = _mm256_add_pd(f, _mm256_mul_pd(k[6], _mm256_mul_pd(uu, u)));
      f = _mm256_add_pd(f, _mm256_mul_pd(k[7], _mm256_mul_pd(uu, v)));
      f = _mm256_add_pd(f, _mm256_mul_pd(k[8], _mm256_mul_pd(u, vv)));
      f = _mm256_add_pd(f, _mm256_mul_pd(k[9], _mm256_mul_pd(vv, v)));
    }
    return vabs(_mm256_sub_pd(w, f));
  }
}

template <ShapeKind Kind>
void residuals_impl(const ResidualProgram& prog, const double* x,
                    const double* y, const double* z, std::size_t n,
                    double* out) {
  const Lanes lanes(prog);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = residual4<Kind>(lanes, _mm256_loadu_pd(x + i),
                                      _mm256_loadu_pd(y + i),
                                      _mm256_loadu_pd(z + i));
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] = scalar::residual(prog, x[i], y[i], z[i]);
}

template <ShapeKind Kind>
std::size_t classify_impl(const ResidualProgram& prog, const double* x,
                          const double* y, const double* z, std::size_t n,
                          double tau, std::uint32_t* out) {
  const Lanes lanes(prog);
  const __m256d vt = _mm256_set1_pd(tau);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = residual4<Kind>(lanes, _mm256_loadu_pd(x + i),
                                      _mm256_loadu_pd(y + i),
                                      _mm256_loadu_pd(z + i));
    int mask = _mm256_movemask_pd(_mm256_cmp_pd(r, vt, _CMP_LT_OQ));
    while (mask != 0) {
      const int lane = __builtin_ctz(static_cast<unsigned>(mask));
      out[count++] = static_cast<std::uint32_t>(i + static_cast<std::size_t>(lane));
      mask &= mask - 1;
    }
  }
  for (; i < n; ++i) {
    if (scalar::residual(prog, x[i], y[i], z[i]) < tau) {
      out[count++] = static_cast<std::uint32_t>(i);
    }
  }
  return count;
}

}  // namespace

bool compiled() { return true; }

void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out) {
  switch (prog.kind) {
    case ShapeKind::Line: return residuals_impl<ShapeKind::Line>(prog, x, y, z, n, out);
    case ShapeKind::Plane: return residuals_impl<ShapeKind::Plane>(prog, x, y, z, n, out);
    case ShapeKind::Sphere: return residuals_impl<ShapeKind::Sphere>(prog, x, y, z, n, out);
    case ShapeKind::Poly2: return residuals_impl<ShapeKind::Poly2>(prog, x, y, z, n, out);
    case ShapeKind::Poly3: return residuals_impl<ShapeKind::Poly3>(prog, x, y, z, n, out);
  }
}

std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out) {
  switch (prog.kind) {
    case ShapeKind::Line: return classify_impl<ShapeKind::Line>(prog, x, y, z, n, tau, out);
    case ShapeKind::Plane: return classify_impl<ShapeKind::Plane>(prog, x, y, z, n, tau, out);
    case ShapeKind::Sphere: return classify_impl<ShapeKind::Sphere>(prog, x, y, z, n, tau, out);
    case ShapeKind::Poly2: return classify_impl<ShapeKind::Poly2>(prog, x, y, z, n, tau, out);
    case ShapeKind::Poly3: return classify_impl<ShapeKind::Poly3>(prog, x, y, z, n, tau, out);
  }
  return 0;
}

#else

bool compiled() { return false; }

void residuals(const ResidualProgram& prog, const double* x, const double* y,
               const double* z, std::size_t n, double* out) {
  scalar::residuals(prog, x, y, z, n, out);
}

std::size_t classify(const ResidualProgram& prog, const double* x,
                     const double* y, const double* z, std::size_t n,
                     double tau, std::uint32_t* out) {
  return scalar::classify(prog, x, y, z, n, tau, out);
}

#endif

}  // namespace contactseg::simd::avx2
