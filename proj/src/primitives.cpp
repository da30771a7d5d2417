#include "contactseg/primitives.hpp"

#include "contactseg/simd/residual_kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>

namespace contactseg {

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Line: return "line";
    case ShapeKind::Plane: return "plane";
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Poly2: return "poly2";
    case ShapeKind::Poly3: return "poly3";
  }
  return "?";
}

ShapeKind parse_kind(std::string_view name) {
  for (ShapeKind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown shape kind '" + std::string(name) + "'");
}

std::size_t min_sample_size(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Line: return 2;
    case ShapeKind::Plane: return 3;
    case ShapeKind::Sphere: return 4;
    case ShapeKind::Poly2: return poly_coefficient_count(2);
    case ShapeKind::Poly3: return poly_coefficient_count(3);
  }
  return 0;
}

double default_complexity(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Line: return 1.0;
    case ShapeKind::Plane: return 2.0;
    case ShapeKind::Sphere: return 2.0;
    case ShapeKind::Poly2: return 2.5;
    case ShapeKind::Poly3: return 3.0;
  }
  return 1.0;
}

double PolyParams::eval(double u, double v) const {
  const double* k = coefficients.data();
  const double uu = u * u;
  const double uv = u * v;
  const double vv = v * v;
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
  return f;
}

Vec2 PolyParams::gradient(double u, double v) const {
  const double* k = coefficients.data();
  double fu = k[1] + 2.0 * k[3] * u + k[4] * v;
  double fv = k[2] + k[4] * u + 2.0 * k[5] * v;
  if (order == 3) {
    fu += 3.0 * k[6] * u * u + 2.0 * k[7] * u * v + k[8] * v * v;
    fv += k[7] * u * u + 2.0 * k[8] * u * v + 3.0 * k[9] * v * v;
  }
  return {fu, fv};
}

ShapeModel::ShapeModel(ShapeKind kind, Params params, double complexity)
    : kind_(kind), params_(std::move(params)), complexity_(complexity) {
  if (!(complexity_ > 0.0)) throw InvalidArgument("D_M must be positive");
  auto unit = [](const Vec3& v) { return std::abs(v.norm() - 1.0) <= 1e-9; };
  switch (kind_) {
    case ShapeKind::Line:
      if (!unit(line().direction)) throw InvalidArgument("line direction not unit");
      break;
    case ShapeKind::Plane:
      if (!unit(plane().normal)) throw InvalidArgument("plane normal not unit");
      break;
    case ShapeKind::Sphere:
      if (!(sphere().radius > 0.0)) throw InvalidArgument("sphere radius <= 0");
      break;
    case ShapeKind::Poly2:
    case ShapeKind::Poly3: {
      const int order = kind_ == ShapeKind::Poly2 ? 2 : 3;
      if (poly().order != order ||
          poly().coefficients.size() != poly_coefficient_count(order)) {
        throw InvalidArgument("polynomial coefficient count does not match order");
      }
      break;
    }
  }
}

ShapeModel ShapeModel::with_complexity(double d_m) const {
  return ShapeModel(kind_, params_, d_m);
}

const PcaFrame* ShapeModel::frame() const {
  if (kind_ == ShapeKind::Plane) return &plane().frame;
  if (kind_ == ShapeKind::Poly2 || kind_ == ShapeKind::Poly3) return &poly().frame;
  return nullptr;
}

Vec3 canonical_sign(const Vec3& axis) {
  const double m = axis.cwiseAbs().maxCoeff();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(axis[a]) >= m * (1.0 - 1e-12)) {
      return axis[a] < 0.0 ? Vec3(-axis) : axis;
    }
  }
  return axis;
}

namespace {

std::vector<Vec3> sorted_copy(std::span<const Vec3> points) {
  std::vector<Vec3> s(points.begin(), points.end());
  std::sort(s.begin(), s.end(), [](const Vec3& a, const Vec3& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
  });
  return s;
}

struct Moments {
  Vec3 centroid;
  Eigen::Vector3d eigenvalues;   // ascending
  Eigen::Matrix3d eigenvectors;  // columns match eigenvalues
};

// Expects points in canonical (sorted) order so the result is order-free.
Moments principal_moments(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - c;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  if (es.info() != Eigen::Success) throw DegenerateError("PCA did not converge");
  return {c, es.eigenvalues(), es.eigenvectors()};
}

PcaFrame frame_from_moments(const Moments& m) {
  const double top = m.eigenvalues(2);
  if (!(top > 0.0)) throw DegenerateError("degenerate frame: coincident points");
  if (!(m.eigenvalues(1) > 1e-12 * top)) {
    throw DegenerateError("degenerate frame: points are collinear");
  }
  PcaFrame f;
  f.origin = m.centroid;
  f.u = canonical_sign(m.eigenvectors.col(2).normalized());
  f.w = canonical_sign(m.eigenvectors.col(0).normalized());
  f.v = f.w.cross(f.u);
  return f;
}

ShapeModel fit_line(std::span<const Vec3> pts, double d_m) {
  const Moments m = principal_moments(pts);
  if (!(m.eigenvalues(2) > 0.0)) throw DegenerateError("line fit: coincident points");
  LineParams p{m.centroid, canonical_sign(m.eigenvectors.col(2).normalized())};
  return ShapeModel(ShapeKind::Line, p, d_m);
}

ShapeModel fit_plane(std::span<const Vec3> pts, double d_m) {
  const PcaFrame f = frame_from_moments(principal_moments(pts));
  PlaneParams p{f.w, -f.w.dot(f.origin), f};
  return ShapeModel(ShapeKind::Plane, p, d_m);
}

// Algebraic sphere: |q|^2 = 2 a.q + k on centred, scaled coordinates.
ShapeModel fit_sphere(std::span<const Vec3> pts, double d_m) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double ms = 0.0;
  for (const auto& p : pts) ms += (p - c).squaredNorm();
  const double s = std::sqrt(ms / static_cast<double>(pts.size()));
  if (!(s > 0.0)) throw DegenerateError("sphere fit: coincident points");
  const double inv = 1.0 / s;

  const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 q = (pts[static_cast<std::size_t>(i)] - c) * inv;
    A(i, 0) = 2.0 * q.x();
    A(i, 1) = 2.0 * q.y();
    A(i, 2) = 2.0 * q.z();
    A(i, 3) = 1.0;
    b(i) = q.squaredNorm();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4) throw DegenerateError("sphere fit: rank-deficient system");
  const Eigen::Vector4d x = qr.solve(b);
  const Vec3 a = x.head<3>();
  const double r2 = x(3) + a.squaredNorm();
  if (!(r2 > 0.0) || !std::isfinite(r2)) {
    throw DegenerateError("sphere fit: non-positive radius");
  }
  SphereParams p{c + a * s, std::sqrt(r2) * s};
  if (!all_finite(p.center)) throw DegenerateError("sphere fit: non-finite center");
  return ShapeModel(ShapeKind::Sphere, p, d_m);
}

ShapeModel fit_poly(ShapeKind kind, std::span<const Vec3> pts, double d_m) {
  const int order = kind == ShapeKind::Poly2 ? 2 : 3;
  const PcaFrame f = frame_from_moments(principal_moments(pts));
  const std::size_t ncoef = poly_coefficient_count(order);

  std::vector<Vec3> local;
  local.reserve(pts.size());
  double ms = 0.0;
  for (const auto& p : pts) {
    local.push_back(f.to_local(p));
    ms += local.back().x() * local.back().x() + local.back().y() * local.back().y();
  }
  const double s = std::sqrt(ms / static_cast<double>(pts.size()));
  if (!(s > 0.0)) throw DegenerateError("polynomial fit: zero extent");
  const double inv = 1.0 / s;

  const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd A(n, static_cast<Eigen::Index>(ncoef));
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& l = local[static_cast<std::size_t>(i)];
    const double u = l.x() * inv;
    const double v = l.y() * inv;
    A(i, 0) = 1.0;
    A(i, 1) = u;
    A(i, 2) = v;
    A(i, 3) = u * u;
    A(i, 4) = u * v;
    A(i, 5) = v * v;
    if (order == 3) {
      A(i, 6) = u * u * u;
      A(i, 7) = u * u * v;
      A(i, 8) = u * v * v;
      A(i, 9) = v * v * v;
    }
    b(i) = l.z() * inv;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(ncoef)) {
    throw DegenerateError("polynomial fit: rank-deficient design matrix");
  }
  const Eigen::VectorXd g = qr.solve(b);

  // Undo the scaling: f(u, v) = s * g(u / s, v / s).
  static constexpr int kDegree[] = {0, 1, 1, 2, 2, 2, 3, 3, 3, 3};
  PolyParams p;
  p.order = order;
  p.frame = f;
  p.coefficients.resize(ncoef);
  for (std::size_t j = 0; j < ncoef; ++j) {
    double scale = s;
    for (int d = 0; d < kDegree[j]; ++d) scale *= inv;
    p.coefficients[j] = g(static_cast<Eigen::Index>(j)) * scale;
    if (!std::isfinite(p.coefficients[j])) {
      throw DegenerateError("polynomial fit: non-finite coefficient");
    }
  }
  return ShapeModel(kind, std::move(p), d_m);
}

}  // namespace

PcaFrame compute_pca_frame(std::span<const Vec3> points) {
  if (points.size() < 3) throw InvalidArgument("PCA frame needs at least 3 points");
  const auto sorted = sorted_copy(points);
  return frame_from_moments(principal_moments(sorted));
}

ShapeModel fit(ShapeKind kind, std::span<const Vec3> points,
               std::optional<double> complexity) {
  if (points.size() < min_sample_size(kind)) {
    throw InvalidArgument(std::string(to_string(kind)) + " fit needs at least " +
                          std::to_string(min_sample_size(kind)) + " points, got " +
                          std::to_string(points.size()));
  }
  const double d_m = complexity.value_or(default_complexity(kind));
  const auto pts = sorted_copy(points);
  switch (kind) {
    case ShapeKind::Line: return fit_line(pts, d_m);
    case ShapeKind::Plane: return fit_plane(pts, d_m);
    case ShapeKind::Sphere: return fit_sphere(pts, d_m);
    case ShapeKind::Poly2:
    case ShapeKind::Poly3: return fit_poly(kind, pts, d_m);
  }
  throw InvalidArgument("unknown kind");
}

ShapeModel refit(const ShapeModel& model, std::span<const Vec3> inliers) {
  return fit(model.kind(), inliers, model.complexity());
}

double error(const ShapeModel& model, const Vec3& p) {
  return simd::scalar::residual(simd::compile(model), p.x(), p.y(), p.z());
}

Vec3 surface_point(const ShapeModel& model, double u, double v) {
  if (model.kind() == ShapeKind::Plane) {
    return model.plane().frame.to_world({u, v, 0.0});
  }
  if (model.kind() == ShapeKind::Poly2 || model.kind() == ShapeKind::Poly3) {
    const auto& p = model.poly();
    return p.frame.to_world({u, v, p.eval(u, v)});
  }
  throw InvalidArgument("surface parameterisation needs a plane or polynomial");
}

Vec3 surface_normal(const ShapeModel& model, double u, double v) {
  if (model.kind() == ShapeKind::Plane) return model.plane().normal;
  if (model.kind() == ShapeKind::Poly2 || model.kind() == ShapeKind::Poly3) {
    const auto& p = model.poly();
    const Vec2 g = p.gradient(u, v);
    return p.frame.direction_to_world(Vec3(-g.x(), -g.y(), 1.0)).normalized();
  }
  throw InvalidArgument("surface parameterisation needs a plane or polynomial");
}

Vec2 parameter_coords(const ShapeModel& model, const Vec3& p) {
  const PcaFrame* f = model.frame();
  if (f == nullptr) {
    throw InvalidArgument("parameter domain needs a plane or polynomial");
  }
  const Vec3 l = f->to_local(p);
  return {l.x(), l.y()};
}

}  // namespace contactseg
