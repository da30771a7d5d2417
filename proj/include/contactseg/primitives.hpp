#pragma once

// The shape-primitive family: lines, planes, spheres and bivariate
// polynomial surfaces of order 2 and 3 over a PCA frame.

#include "contactseg/geometry.hpp"
#include "contactseg/shape_kind.hpp"

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace contactseg {

/// Minimum point count for fit: Line 2, Plane 3, Sphere 4, Poly2 6, Poly3 10.
std::size_t min_sample_size(ShapeKind kind);

/// Default model-complexity divisor D_M.
double default_complexity(ShapeKind kind);

/// Number of coefficients of a bivariate polynomial: C(order + 2, 2).
constexpr std::size_t poly_coefficient_count(int order) {
  return static_cast<std::size_t>((order + 1) * (order + 2) / 2);
}

/// Local frame from principal component analysis. `w` is the least-variance
/// direction and u x v = w.
struct PcaFrame {
  Vec3 origin = Vec3::Zero();
  Vec3 u = Vec3::UnitX();
  Vec3 v = Vec3::UnitY();
  Vec3 w = Vec3::UnitZ();

  /// World point to (u, v, w) coordinates.
  Vec3 to_local(const Vec3& p) const {
    const Vec3 d = p - origin;
    return {u.dot(d), v.dot(d), w.dot(d)};
  }
  Vec3 to_world(const Vec3& local) const {
    return origin + local.x() * u + local.y() * v + local.z() * w;
  }
  Vec3 direction_to_world(const Vec3& local) const {
    return local.x() * u + local.y() * v + local.z() * w;
  }

  friend bool operator==(const PcaFrame&, const PcaFrame&) = default;
};

struct LineParams {
  Vec3 point;
  Vec3 direction;
  friend bool operator==(const LineParams&, const LineParams&) = default;
};

/// n . p + offset = 0. `frame` spans the in-plane parameter domain and
/// frame.w == normal.
struct PlaneParams {
  Vec3 normal;
  double offset = 0.0;
  PcaFrame frame;
  friend bool operator==(const PlaneParams&, const PlaneParams&) = default;
};

struct SphereParams {
  Vec3 center;
  double radius = 1.0;
  friend bool operator==(const SphereParams&, const SphereParams&) = default;
};

/// w = f(u, v) in `frame`. Coefficients follow the monomial order
/// 1, u, v, u^2, uv, v^2, u^3, u^2 v, u v^2, v^3.
struct PolyParams {
  int order = 2;
  PcaFrame frame;
  std::vector<double> coefficients;

  double eval(double u, double v) const;
  /// (df/du, df/dv)
  Vec2 gradient(double u, double v) const;
  friend bool operator==(const PolyParams&, const PolyParams&) = default;
};

class ShapeModel {
 public:
  using Params = std::variant<LineParams, PlaneParams, SphereParams, PolyParams>;

  ShapeModel(ShapeKind kind, Params params, double complexity);

  ShapeKind kind() const noexcept { return kind_; }
  double complexity() const noexcept { return complexity_; }
  const Params& params() const noexcept { return params_; }
  ShapeModel with_complexity(double d_m) const;

  const LineParams& line() const { return std::get<LineParams>(params_); }
  const PlaneParams& plane() const { return std::get<PlaneParams>(params_); }
  const SphereParams& sphere() const { return std::get<SphereParams>(params_); }
  const PolyParams& poly() const { return std::get<PolyParams>(params_); }

  /// Parameter-domain frame for planes and polynomials.
  const PcaFrame* frame() const;

  friend bool operator==(const ShapeModel&, const ShapeModel&) = default;

 private:
  ShapeKind kind_;
  Params params_;
  double complexity_;
};

/// Flips `axis` so its largest-magnitude component is positive; on ties the
/// earliest of x, y, z decides.
Vec3 canonical_sign(const Vec3& axis);

PcaFrame compute_pca_frame(std::span<const Vec3> points);

/// Fits `kind` to `points`. The result is independent of point order.
ShapeModel fit(ShapeKind kind, std::span<const Vec3> points,
               std::optional<double> complexity = std::nullopt);

/// Re-optimises the model over its inliers (frame recomputed for polynomials).
ShapeModel refit(const ShapeModel& model, std::span<const Vec3> inliers);

/// Point-to-model residual in meters: orthogonal distance for lines, planes
/// and spheres; in-frame vertical residual |w - f(u, v)| for polynomials.
double error(const ShapeModel& model, const Vec3& p);

/// Evaluates the surface of a plane or polynomial model at (u, v).
Vec3 surface_point(const ShapeModel& model, double u, double v);
/// Unit surface normal of a plane or polynomial model at (u, v), pointing to
/// the frame's +w side.
Vec3 surface_normal(const ShapeModel& model, double u, double v);
/// Projects p into the (u, v) parameter domain of a plane or polynomial.
Vec2 parameter_coords(const ShapeModel& model, const Vec3& p);

}  // namespace contactseg
