#include "contactseg/coverage.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <filesystem>
#include <set>

using namespace contactseg;

namespace {

ShapeModel xy_plane() {
  return ShapeModel(ShapeKind::Plane, PlaneParams{Vec3::UnitZ(), 0.0, PcaFrame{}}, 2.0);
}

ShapeModel parabola() {
  return ShapeModel(ShapeKind::Poly2, PolyParams{2, PcaFrame{}, {0, 0, 0, 1, 0, 0}}, 2.5);
}

std::vector<Vec2> rect(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

SupportGrid blob_grid(Rng& rng, double h, int n, std::size_t cells) {
  SupportGrid g(Vec2(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)), h, n, n);
  std::vector<std::array<int, 2>> frontier{{n / 2, n / 2}};
  g.set(n / 2, n / 2, true);
  while (g.occupied_count() < cells) {
    const auto c = frontier[rng.below(frontier.size())];
    static constexpr int kD[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    const auto& d = kD[rng.below(4)];
    const int i = c[0] + d[0], j = c[1] + d[1];
    if (i < 1 || j < 1 || i >= n - 1 || j >= n - 1 || g.occupied(i, j)) continue;
    g.set(i, j, true);
    frontier.push_back({i, j});
  }
  return g;
}

std::vector<std::vector<Vec2>> uv_rings(const SurfacePatch& p) {
  std::vector<std::vector<Vec2>> out;
  for (const auto& r : p.boundary) out.push_back(ring_to_uv(p.grid, r));
  return out;
}

double distance_to_lanes(const LanePlan& plan, const Vec2& p) {
  double best = 1e300;
  for (const auto& s : plan.segments) {
    best = std::min(best, testsupport::point_segment_distance(p, s.start, s.end));
  }
  return best;
}

}  // namespace

TEST_CASE("min_bounding_rectangle examples") {
  const BoundingRectangle sq = min_bounding_rectangle(rect(0, 0, 1, 1));
  CHECK(sq.angle == 0.0);
  CHECK(sq.area() == doctest::Approx(1.0));
  CHECK(sq.width == doctest::Approx(1.0));

  const BoundingRectangle r = min_bounding_rectangle(rect(0, 0, 4, 1));
  CHECK(r.angle == 0.0);
  CHECK(r.width == doctest::Approx(4.0));
  CHECK(r.height == doctest::Approx(1.0));
  CHECK((r.center - Vec2(2, 0.5)).norm() < 1e-12);

  const BoundingRectangle tall = min_bounding_rectangle(rect(0, 0, 1, 4));
  CHECK(tall.angle == doctest::Approx(M_PI / 2));
  CHECK(tall.width == doctest::Approx(4.0));

  CHECK_THROWS_AS(min_bounding_rectangle({{0, 0}, {1, 1}, {2, 2}}), InvalidArgument);
  CHECK_THROWS_AS(min_bounding_rectangle({{0, 0}, {1, 1}}), InvalidArgument);
}

TEST_CASE("min_bounding_rectangle matches an angle sweep") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const auto poly = testsupport::random_star_polygon(rng, 12, 0.2, 1.0);
    const BoundingRectangle r = min_bounding_rectangle(poly);
    const double coarse = testsupport::sweep_min_area(poly, 0.05 * M_PI / 180, false);
    const double fine = testsupport::sweep_min_area(poly, 0.05 * M_PI / 180, true);
    CHECK(r.area() <= coarse * (1 + 1e-12));
    CHECK(std::abs(r.area() - fine) <= 1e-6 * fine);
    CHECK(r.angle >= 0.0);
    CHECK(r.angle < M_PI);
    CHECK(r.width >= r.height);
    // The rectangle contains every vertex.
    for (const auto& p : poly) {
      const Vec2 d = p - r.center;
      CHECK(std::abs(d.dot(r.axis())) <= 0.5 * r.width + 1e-9);
      CHECK(std::abs(d.dot(r.across())) <= 0.5 * r.height + 1e-9);
    }
  }
}

TEST_CASE("convex hull") {
  const auto h = convex_hull({{0, 0}, {1, 0}, {0.5, 0.5}, {1, 1}, {0, 1}, {0.5, 0}});
  CHECK(h.size() == 4);
  CHECK(testsupport::shoelace(h) == doctest::Approx(1.0));
}

TEST_CASE("plan_lanes placement") {
  CoverageConfig cfg;
  cfg.tool_diameter = 0.025;
  SUBCASE("100mm-wide region gives four lanes") {
    const LanePlan plan = plan_lanes({rect(0, 0, 0.3, 0.1)}, cfg);
    REQUIRE(plan.offsets.size() == 4);
    const double expected[] = {0.0125, 0.0375, 0.0625, 0.0875};
    for (int k = 0; k < 4; ++k) CHECK(plan.offsets[k] == doctest::Approx(expected[k]).epsilon(1e-12));
    REQUIRE(plan.segments.size() == 4);
    for (const auto& s : plan.segments) {
      CHECK(s.start.x() == doctest::Approx(0.0));
      CHECK(s.end.x() == doctest::Approx(0.3));
    }
  }
  SUBCASE("rectangular hole splits the middle lanes") {
    auto hole = rect(0.1, 0.025, 0.2, 0.075);
    std::reverse(hole.begin(), hole.end());
    const LanePlan plan = plan_lanes({rect(0, 0, 0.3, 0.1), hole}, cfg);
    std::vector<int> per_lane(4, 0);
    for (const auto& s : plan.segments) ++per_lane[s.lane];
    CHECK(per_lane == std::vector<int>{1, 2, 2, 1});
  }
  SUBCASE("spacing wider than the region gives one centered lane") {
    cfg.tool_diameter = 0.5;
    const LanePlan plan = plan_lanes({rect(0, 0, 0.3, 0.1)}, cfg);
    REQUIRE(plan.offsets.size() == 1);
    CHECK(plan.offsets[0] == doctest::Approx(0.05));
  }
  SUBCASE("serpentine alternates, unidirectional does not") {
    const LanePlan uni = plan_lanes({rect(0, 0, 0.3, 0.1)}, cfg);
    cfg.direction_mode = DirectionMode::Serpentine;
    const LanePlan serp = plan_lanes({rect(0, 0, 0.3, 0.1)}, cfg);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK((uni.segments[k].end - uni.segments[k].start).x() > 0);
      CHECK(((serp.segments[k].end - serp.segments[k].start).x() > 0) == (k % 2 == 0));
    }
  }
}

TEST_CASE("random blobs: coverage and direction rule") {
  Rng rng(29);
  for (int trial = 0; trial < 15; ++trial) {
    const double h = 0.01;
    SupportGrid g = blob_grid(rng, h, 40, 400 + rng.below(400));
    for (int k = 0; k < 10; ++k) g.set(1 + rng.below(38), 1 + rng.below(38), false);
    if (g.empty()) continue;
    const SurfacePatch patch = make_patch(xy_plane(), g);
    CoverageConfig cfg;
    cfg.tool_diameter = rng.uniform(0.015, 0.06);
    cfg.overlap = rng.uniform(0.0, 0.3);
    const LanePlan plan = plan_lanes(uv_rings(patch), cfg);
    const double delta = cfg.spacing();
    for (int j = 0; j < g.nv(); ++j) {
      for (int i = 0; i < g.nu(); ++i) {
        if (!g.occupied(i, j)) continue;
        CHECK(distance_to_lanes(plan, g.cell_center(i, j)) <= 0.5 * delta + 0.5 * h);
      }
    }
    const Vec2 axis = plan.rectangle.axis();
    for (const auto& s : plan.segments) {
      const Vec2 d = (s.end - s.start).normalized();
      CHECK(std::abs(d.x() * axis.y() - d.y() * axis.x()) <= 1e-9);
    }
  }
}

TEST_CASE("lanes rotate with the region") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const auto poly = testsupport::random_star_polygon(rng, 9, 0.05, 0.2);
    const double phi = rng.uniform(0.0, 2 * M_PI);
    const Eigen::Rotation2Dd R(phi);
    std::vector<Vec2> turned;
    for (const auto& p : poly) turned.push_back(R * p);
    CoverageConfig cfg;
    cfg.tool_diameter = 0.02;
    const LanePlan a = plan_lanes({poly}, cfg);
    const LanePlan b = plan_lanes({turned}, cfg);
    REQUIRE(a.segments.size() == b.segments.size());
    // Compare as undirected segment sets: the normalised angle may flip the
    // sweep direction by pi.
    for (const auto& s : a.segments) {
      const Vec2 p = R * s.start, q = R * s.end;
      bool matched = false;
      for (const auto& t : b.segments) {
        const bool same = (t.start - p).norm() < 1e-9 && (t.end - q).norm() < 1e-9;
        const bool flipped = (t.start - q).norm() < 1e-9 && (t.end - p).norm() < 1e-9;
        matched = matched || same || flipped;
      }
      CHECK(matched);
    }
  }
}

TEST_CASE("lift_trajectory on a plane") {
  SupportGrid g(Vec2(0, 0), 0.01, 12, 8);
  for (int j = 1; j < 7; ++j) {
    for (int i = 1; i < 11; ++i) g.set(i, j, true);
  }
  const SurfacePatch patch = make_patch(xy_plane(), g);
  CoverageConfig cfg;
  cfg.tool_diameter = 0.02;
  cfg.step_along = 0.004;
  const Trajectory t = plan_coverage(patch, cfg);
  CHECK(t.lane_count == 3);
  std::size_t contact = 0;
  for (std::size_t k = 0; k < t.poses.size(); ++k) {
    const auto& p = t.poses[k];
    CHECK(std::abs(p.approach.norm() - 1) < 1e-12);
    CHECK(std::abs(p.travel.norm() - 1) < 1e-12);
    CHECK(std::abs(p.approach.dot(p.travel)) < 1e-6);
    if (p.contact) {
      ++contact;
      CHECK(p.approach == -Vec3::UnitZ());
      CHECK(std::abs(p.position.z()) <= 1e-9);
      if (k > 0 && t.poses[k - 1].contact) {
        CHECK((p.position - t.poses[k - 1].position).norm() <= 2 * cfg.step_along);
      }
    } else {
      CHECK(p.position.z() == doctest::Approx(cfg.clearance));
    }
  }
  CHECK(contact > 0);
  CHECK(t.contact_length == doctest::Approx(3 * 0.1).epsilon(1e-9));
}

TEST_CASE("lift_trajectory on w = u^2") {
  SupportGrid g(Vec2(0.0, -0.05), 0.05, 30, 2);
  for (int i = 0; i < 30; ++i) {
    g.set(i, 0, true);
    g.set(i, 1, true);
  }
  const SurfacePatch patch = make_patch(parabola(), g);
  CoverageConfig cfg;
  cfg.tool_diameter = 0.2;
  cfg.step_along = 0.025;
  const Trajectory t = plan_coverage(patch, cfg);
  REQUIRE(t.lane_count == 1);
  bool seen = false;
  for (const auto& p : t.poses) {
    if (!p.contact) continue;
    const Vec3 local = patch.model.poly().frame.to_local(p.position);
    CHECK(std::abs(local.z() - local.x() * local.x()) <= 1e-9);
    if (std::abs(local.x() - 1.0) < 1e-12) {
      seen = true;
      CHECK((p.approach + Vec3(-2, 0, 1).normalized()).norm() < 1e-12);
    }
  }
  CHECK(seen);

  // Arc length of w = u^2 along the lane by dense integration of the metric.
  const LanePlan plan = plan_lanes(uv_rings(patch), cfg);
  double oracle = 0.0;
  for (const auto& s : plan.segments) {
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const Vec2 uv = s.start + (s.end - s.start) * ((i + 0.5) / n);
      const Vec2 dir = (s.end - s.start) / n;
      const double dw = 2 * uv.x() * dir.x();
      oracle += std::sqrt(dir.squaredNorm() + dw * dw);
    }
  }
  CHECK(std::abs(t.contact_length - oracle) <= 0.02 * oracle);
}

TEST_CASE("trajectory export") {
  SUBCASE("empty trajectory is still valid JSON") {
    SupportGrid g(Vec2(0, 0), 0.01, 2, 2);
    const SurfacePatch empty = make_patch(xy_plane(), g);
    const Trajectory t = plan_coverage(empty, CoverageConfig{});
    const Json j = Json::parse(to_json(t).dump());
    CHECK(j["poses"].empty());
    CHECK(j["version"] == 1);
  }
  SUBCASE("round trip re-exports identically") {
    SupportGrid g(Vec2(0.2, 0.1), 0.01, 12, 9);
    for (int j = 1; j < 8; ++j) {
      for (int i = 1; i < 11; ++i) g.set(i, j, (i + j) % 7 != 0);
    }
    const SurfacePatch patch = make_patch(parabola(), g);
    const Trajectory t = plan_coverage(patch, CoverageConfig{});
    const std::string first = to_json(t).dump(2);
    const auto path = std::filesystem::temp_directory_path() / "contactseg_traj.json";
    export_trajectory(t, path);
    const Trajectory back = trajectory_from_json(read_json_file(path));
    CHECK(to_json(back).dump(2) == first);
    std::filesystem::remove(path);
    const std::string csv = trajectory_csv(t);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) ==
          t.poses.size() + 1);
  }
}

TEST_CASE("patch JSON round trip and hash") {
  SupportGrid g(Vec2(0, 0), 0.01, 6, 6);
  for (int j = 1; j < 5; ++j) {
    for (int i = 1; i < 5; ++i) g.set(i, j, true);
  }
  SurfacePatch patch = make_patch(parabola(), g);
  patch = apply_crop(patch, {3, {{0.0, 0.0}, {0.025, 0.0}, {0.0, 0.025}}, {}}).patch;
  const SurfacePatch back = patch_from_json(Json::parse(to_json(patch).dump()));
  CHECK(back.grid == patch.grid);
  CHECK(back.boundary == patch.boundary);
  CHECK(back.edits == patch.edits);
  CHECK(patch_hash(back) == patch_hash(patch));
  CHECK(patch_hash(back).size() == 16);
}

TEST_CASE("coverage config validation") {
  CoverageConfig c;
  CHECK_NOTHROW(c.validate());
  c.overlap = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK_THROWS_AS(coverage_config_from_json(Json::parse(R"({"tool_diameter":0})")),
                  InvalidArgument);
  CHECK_THROWS_AS(coverage_config_from_json(Json::parse(R"({"direction_mode":"spiral"})")),
                  InvalidArgument);
  const CoverageConfig s =
      coverage_config_from_json(Json::parse(R"({"direction_mode":"serpentine","overlap":0.5})"));
  CHECK(s.direction_mode == DirectionMode::Serpentine);
  CHECK(s.spacing() == doctest::Approx(0.0125));
}
