#include "contactseg/primitives.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <algorithm>
#include <numeric>

using namespace contactseg;
using testsupport::random_rotation;
using testsupport::random_unit;

namespace {

double rms_error(const ShapeModel& m, const std::vector<Vec3>& pts) {
  double s = 0.0;
  for (const auto& p : pts) s += error(m, p) * error(m, p);
  return std::sqrt(s / static_cast<double>(pts.size()));
}

double max_error(const ShapeModel& m, const std::vector<Vec3>& pts) {
  double s = 0.0;
  for (const auto& p : pts) s = std::max(s, error(m, p));
  return s;
}

PcaFrame identity_frame() { return PcaFrame{}; }

ShapeModel poly_model(int order, std::vector<double> c, PcaFrame f = identity_frame()) {
  PolyParams p;
  p.order = order;
  p.frame = f;
  p.coefficients = std::move(c);
  return ShapeModel(order == 2 ? ShapeKind::Poly2 : ShapeKind::Poly3, p,
                    default_complexity(order == 2 ? ShapeKind::Poly2 : ShapeKind::Poly3));
}

// Applies x -> R x + t to the model parameters directly.
ShapeModel transform(const ShapeModel& m, const Eigen::Matrix3d& R, const Vec3& t) {
  auto frame = [&](const PcaFrame& f) {
    return PcaFrame{R * f.origin + t, R * f.u, R * f.v, R * f.w};
  };
  switch (m.kind()) {
    case ShapeKind::Line:
      return ShapeModel(m.kind(), LineParams{R * m.line().point + t, R * m.line().direction},
                        m.complexity());
    case ShapeKind::Plane: {
      const Vec3 n = R * m.plane().normal;
      const PcaFrame f = frame(m.plane().frame);
      return ShapeModel(m.kind(), PlaneParams{n, -n.dot(f.origin), f}, m.complexity());
    }
    case ShapeKind::Sphere:
      return ShapeModel(m.kind(), SphereParams{R * m.sphere().center + t, m.sphere().radius},
                        m.complexity());
    default: {
      PolyParams p = m.poly();
      p.frame = frame(p.frame);
      return ShapeModel(m.kind(), p, m.complexity());
    }
  }
}

// Noise-free samples of one generated primitive of each kind.
//
// Polynomial patches are only polynomials in their own PCA frame, so the
// (u, v) samples are mirrored into all four quadrants and the linear terms are
// chosen to cancel the u-w and v-w covariances. The principal axes of the
// samples are then the generating axes.
std::vector<Vec3> generate(ShapeKind kind, Rng& rng, std::size_t n) {
  const Eigen::Matrix3d R = random_rotation(rng);
  const Vec3 t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  std::vector<Vec3> out;
  std::vector<double> c(10);
  for (auto& k : c) k = rng.uniform(-0.8, 0.8);
  if (kind == ShapeKind::Poly2 || kind == ShapeKind::Poly3) {
    std::vector<Vec2> uv;
    for (std::size_t i = 0; i < (n + 3) / 4; ++i) {
      const double u = rng.uniform(0.0, 0.2);
      const double v = rng.uniform(0.0, 0.1);
      for (double su : {1.0, -1.0}) {
        for (double sv : {1.0, -1.0}) uv.emplace_back(su * u, sv * v);
      }
    }
    const bool cubic = kind == ShapeKind::Poly3;
    const auto g = [&](double u, double v) {
      double f = c[0] + c[3] * u * u + c[4] * u * v + c[5] * v * v;
      if (cubic) {
        f += c[6] * u * u * u + c[7] * u * u * v + c[8] * u * v * v + c[9] * v * v * v;
      }
      return 0.2 * f;
    };
    double suu = 0, svv = 0, sug = 0, svg = 0;
    for (const auto& q : uv) {
      suu += q.x() * q.x();
      svv += q.y() * q.y();
      sug += q.x() * g(q.x(), q.y());
      svg += q.y() * g(q.x(), q.y());
    }
    const double a1 = -sug / suu;
    const double a2 = -svg / svv;
    for (const auto& q : uv) {
      const Vec3 local(q.x(), q.y(), g(q.x(), q.y()) + a1 * q.x() + a2 * q.y());
      out.push_back(R * local + t);
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(-0.2, 0.2);
    const double v = rng.uniform(-0.15, 0.15);
    Vec3 local;
    switch (kind) {
      case ShapeKind::Line: local = Vec3(u, 0, 0); break;
      case ShapeKind::Plane: local = Vec3(u, v, 0); break;
      default: local = 0.3 * random_unit(rng); break;
    }
    out.push_back(R * local + t);
  }
  return out;
}

}  // namespace

TEST_CASE("min sample table and default complexities") {
  CHECK(min_sample_size(ShapeKind::Line) == 2);
  CHECK(min_sample_size(ShapeKind::Plane) == 3);
  CHECK(min_sample_size(ShapeKind::Sphere) == 4);
  CHECK(min_sample_size(ShapeKind::Poly2) == 6);
  CHECK(min_sample_size(ShapeKind::Poly3) == 10);
  for (ShapeKind k : kAllKinds) CHECK(parse_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_kind("cylinder"), InvalidArgument);
}

TEST_CASE("compute_pca_frame") {
  SUBCASE("dominant direction") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 0.01, 0}};
    const PcaFrame f = compute_pca_frame(pts);
    CHECK((f.u - Vec3(1, 0, 0)).norm() < 1e-6);
  }
  SUBCASE("plane z = 0") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {3, 0.2, 0}};
    const PcaFrame f = compute_pca_frame(pts);
    CHECK(f.w == Vec3(0, 0, 1));
  }
  SUBCASE("noisy tilted plane within 1 degree") {
    Rng rng(42);
    const Vec3 normal = Vec3(0.3, -0.2, 0.9).normalized();
    const Vec3 a = normal.unitOrthogonal();
    const Vec3 b = normal.cross(a);
    std::vector<Vec3> pts;
    for (int i = 0; i < 500; ++i) {
      pts.push_back(rng.uniform(-0.2, 0.2) * a + rng.uniform(-0.1, 0.1) * b +
                    rng.normal() * 0.001 * normal);
    }
    const PcaFrame f = compute_pca_frame(pts);
    const double angle = std::acos(std::min(1.0, std::abs(f.w.dot(normal))));
    CHECK(angle * 180.0 / M_PI < 1.0);
  }
  SUBCASE("collinear points are degenerate") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    CHECK_THROWS_AS(compute_pca_frame(pts), DegenerateError);
    CHECK_THROWS_AS(compute_pca_frame(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}}),
                    InvalidArgument);
  }
  SUBCASE("orthonormal, right-handed, order-free") {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
      auto pts = testsupport::random_points(rng, 40, -1, 1);
      const PcaFrame f = compute_pca_frame(pts);
      CHECK(std::abs(f.u.norm() - 1) < 1e-9);
      CHECK(std::abs(f.v.norm() - 1) < 1e-9);
      CHECK(std::abs(f.w.norm() - 1) < 1e-9);
      CHECK(std::abs(f.u.dot(f.v)) < 1e-9);
      CHECK(std::abs(f.u.dot(f.w)) < 1e-9);
      CHECK((f.u.cross(f.v) - f.w).norm() < 1e-9);
      std::reverse(pts.begin(), pts.end());
      std::swap(pts[3], pts[17]);
      CHECK(compute_pca_frame(pts) == f);
    }
  }
}

TEST_CASE("canonical_sign ties prefer x then y then z") {
  CHECK(canonical_sign(Vec3(-1, 1, 0)) == Vec3(1, -1, 0));
  CHECK(canonical_sign(Vec3(0, -1, 1)) == Vec3(0, 1, -1));
  CHECK(canonical_sign(Vec3(0.1, 0.2, -0.9)) == Vec3(-0.1, -0.2, 0.9));
}

TEST_CASE("fit examples") {
  SUBCASE("plane through three points") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    const ShapeModel m = fit(ShapeKind::Plane, pts);
    CHECK((m.plane().normal - Vec3(0, 0, 1)).norm() < 1e-12);
    CHECK(std::abs(m.plane().offset) < 1e-12);
  }
  SUBCASE("sphere through four points") {
    const std::vector<Vec3> pts{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const ShapeModel m = fit(ShapeKind::Sphere, pts);
    CHECK(m.sphere().center.norm() < 1e-12);
    CHECK(std::abs(m.sphere().radius - 1.0) < 1e-12);
  }
  SUBCASE("poly2 on exact samples of w = u^2") {
    // Symmetric grid with var(u) > var(v) > var(w) keeps the PCA frame on the
    // generating axes; the centroid shift shows up only in the constant term.
    std::vector<Vec3> pts;
    double mean_w = 0.0;
    for (int i = -5; i <= 5; ++i) {
      for (int j = -3; j <= 3; ++j) {
        const double u = i / 5.0;
        const double v = j * 0.7 / 3.0;
        pts.emplace_back(u, v, u * u);
        mean_w += u * u;
      }
    }
    mean_w /= static_cast<double>(pts.size());
    const ShapeModel m = fit(ShapeKind::Poly2, pts);
    const auto& c = m.poly().coefficients;
    CHECK((m.poly().frame.w - Vec3(0, 0, 1)).norm() < 1e-12);
    CHECK(std::abs(c[3] - 1.0) < 1e-9);
    CHECK(std::abs(c[0] + mean_w) < 1e-9);
    for (int k : {1, 2, 4, 5}) CHECK(std::abs(c[k]) < 1e-9);
    CHECK(max_error(m, pts) < 1e-9);
  }
  SUBCASE("poly3 on noisy samples of a cubic patch") {
    Rng rng(3);
    const double sigma = 0.001;
    const Eigen::Matrix3d R = random_rotation(rng);
    std::vector<Vec3> pts;
    for (int i = 0; i < 200; ++i) {
      const double u = rng.uniform(-0.15, 0.15);
      const double v = rng.uniform(-0.1, 0.1);
      const double w = 0.8 * u * u - 0.5 * v * v + 3.0 * u * u * u - 2.0 * u * v * v;
      pts.push_back(R * Vec3(u, v, w + sigma * rng.normal()));
    }
    const ShapeModel m = fit(ShapeKind::Poly3, pts);
    CHECK(rms_error(m, pts) <= 2.0 * sigma);

    // Independent solve in the model's frame via normal equations.
    const PcaFrame& f = m.poly().frame;
    Eigen::MatrixXd A(200, 10);
    Eigen::VectorXd b(200);
    for (int i = 0; i < 200; ++i) {
      const Vec3 l = f.to_local(pts[static_cast<std::size_t>(i)]);
      const double u = l.x(), v = l.y();
      A.row(i) << 1, u, v, u * u, u * v, v * v, u * u * u, u * u * v, u * v * v, v * v * v;
      b(i) = l.z();
    }
    const Eigen::VectorXd ref = testsupport::normal_equations_solve(A, b);
    const Eigen::VectorXd resid_lib =
        b - A * Eigen::Map<const Eigen::VectorXd>(m.poly().coefficients.data(), 10);
    const Eigen::VectorXd resid_ref = b - A * ref;
    CHECK(std::abs(resid_lib.norm() - resid_ref.norm()) <= 1e-9 * resid_ref.norm() + 1e-15);
  }
  SUBCASE("too few points and degenerate input") {
    CHECK_THROWS_AS(fit(ShapeKind::Sphere, std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}),
                    InvalidArgument);
    const std::vector<Vec3> coplanar{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
    CHECK_THROWS_AS(fit(ShapeKind::Sphere, coplanar), DegenerateError);
    std::vector<Vec3> line_uv;
    for (int i = 0; i < 12; ++i) line_uv.emplace_back(i * 0.1, 0.5 * i * 0.1, 0.01 * (i % 2));
    CHECK_THROWS_AS(fit(ShapeKind::Poly3, line_uv), DegenerateError);
    CHECK_THROWS_AS(fit(ShapeKind::Line, std::vector<Vec3>{{1, 1, 1}, {1, 1, 1}}),
                    DegenerateError);
  }
}

TEST_CASE("error examples") {
  const ShapeModel plane = fit(ShapeKind::Plane, std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
  CHECK(error(plane, Vec3(5, 5, 2)) == doctest::Approx(2.0).epsilon(1e-12));

  const ShapeModel sphere(ShapeKind::Sphere, SphereParams{Vec3::Zero(), 1.0}, 2.0);
  CHECK(error(sphere, Vec3(2, 0, 0)) == 1.0);

  const ShapeModel poly = poly_model(2, {0, 0, 0, 1, 0, 0});
  CHECK(error(poly, Vec3(1, 0, 1.05)) == doctest::Approx(0.05).epsilon(1e-12));

  const ShapeModel line(ShapeKind::Line, LineParams{Vec3::Zero(), Vec3::UnitX()}, 1.0);
  CHECK(error(line, Vec3(7, 3, 4)) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("error is invariant under rigid transforms") {
  Rng rng(17);
  for (ShapeKind kind : kAllKinds) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto pts = generate(kind, rng, 40);
      const ShapeModel m = fit(kind, pts);
      const Eigen::Matrix3d R = random_rotation(rng);
      const Vec3 t(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      const ShapeModel moved = transform(m, R, t);
      for (int q = 0; q < 10; ++q) {
        const Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        CHECK(std::abs(error(m, p) - error(moved, R * p + t)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("noise-free fits recover every kind") {
  Rng rng(23);
  for (ShapeKind kind : kAllKinds) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto pts = generate(kind, rng, 60);
      const ShapeModel m = fit(kind, pts);
      CHECK_MESSAGE(max_error(m, pts) <= 1e-9, to_string(kind));
    }
  }
}

TEST_CASE("nested families: poly3 <= poly2 <= plane in-frame residual") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto pts = generate(ShapeKind::Poly3, rng, 80);
    for (auto& p : pts) p += 0.002 * Vec3(rng.normal(), rng.normal(), rng.normal());
    const ShapeModel plane = fit(ShapeKind::Plane, pts);
    const ShapeModel p2 = fit(ShapeKind::Poly2, pts);
    const ShapeModel p3 = fit(ShapeKind::Poly3, pts);
    REQUIRE(plane.plane().frame == p2.poly().frame);
    const double r_plane = rms_error(plane, pts);
    const double r2 = rms_error(p2, pts);
    const double r3 = rms_error(p3, pts);
    CHECK(r3 <= r2 * (1 + 1e-12));
    CHECK(r2 <= r_plane * (1 + 1e-12));
  }
}

TEST_CASE("refit") {
  SUBCASE("exact coplanar points reproduce the three-point plane") {
    Rng rng(2);
    const Vec3 n = Vec3(1, 2, 2).normalized();
    const Vec3 a = n.unitOrthogonal();
    const Vec3 b = n.cross(a);
    std::vector<Vec3> pts;
    for (int i = 0; i < 1000; ++i) {
      pts.push_back(Vec3(0.1, 0.2, 0.3) + rng.uniform(-1, 1) * a + rng.uniform(-1, 1) * b);
    }
    const ShapeModel three = fit(ShapeKind::Plane, std::span(pts).first(3));
    const ShapeModel all = refit(three, pts);
    CHECK((all.plane().normal - three.plane().normal).norm() < 1e-12);
    CHECK(std::abs(all.plane().offset - three.plane().offset) < 1e-12);
  }
  SUBCASE("refit never increases RMS over the inliers") {
    Rng rng(8);
    int cases = 0;
    for (ShapeKind kind : kAllKinds) {
      for (int trial = 0; trial < 10; ++trial, ++cases) {
        auto pts = generate(kind, rng, 300);
        for (auto& p : pts) p += 0.001 * Vec3(rng.normal(), rng.normal(), rng.normal());
        const std::size_t k = min_sample_size(kind) + 2;
        const ShapeModel minimal = fit(kind, std::span(pts).first(k));
        const ShapeModel full = refit(minimal, pts);
        CHECK_MESSAGE(rms_error(full, pts) <= rms_error(minimal, pts) * (1 + 1e-12),
                      to_string(kind));
      }
    }
    CHECK(cases == 50);
  }
  SUBCASE("too few inliers") {
    const ShapeModel plane =
        fit(ShapeKind::Plane, std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}});
    CHECK_THROWS_AS(refit(plane, std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}}), InvalidArgument);
  }
}

TEST_CASE("model invariants are enforced") {
  CHECK_THROWS_AS(ShapeModel(ShapeKind::Sphere, SphereParams{Vec3::Zero(), 0.0}, 2.0),
                  InvalidArgument);
  CHECK_THROWS_AS(ShapeModel(ShapeKind::Line, LineParams{Vec3::Zero(), Vec3(1, 1, 0)}, 1.0),
                  InvalidArgument);
  CHECK_THROWS_AS(poly_model(3, {0, 0, 0, 1, 0, 0}), InvalidArgument);
}

TEST_CASE("surface helpers follow the analytic gradient") {
  const ShapeModel poly = poly_model(2, {0, 0, 0, 1, 0, 0});
  const Vec3 n = surface_normal(poly, 1.0, 0.0);
  CHECK((n - Vec3(-2, 0, 1).normalized()).norm() < 1e-12);
  CHECK(surface_point(poly, 1.0, 0.5) == Vec3(1.0, 0.5, 1.0));
  CHECK(parameter_coords(poly, Vec3(0.25, -0.5, 3)) == Vec2(0.25, -0.5));
}
