#include "contactseg/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace contactseg {

namespace {

constexpr int kTrajectoryVersion = 1;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

double round9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

Json rounded(const Vec3& v) { return Json::array({round9(v.x()), round9(v.y()), round9(v.z())}); }

struct Interval {
  double lo;
  double hi;
};

// Projection onto the lane axis of the region inside the band [s0, s1] of
// across-coordinates. `t` and `s` hold the rotated ring vertices.
std::vector<Interval> band_projection(const std::vector<std::vector<Vec2>>& rings, double s0,
                                      double s1) {
  std::vector<double> cuts{s0, s1};
  for (const auto& ring : rings) {
    for (const auto& p : ring) {
      if (p.y() > s0 && p.y() < s1) cuts.push_back(p.y());
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  struct Crossing {
    double at_mid;
    double at_lo;
    double at_hi;
  };
  std::vector<Interval> out;
  std::vector<Crossing> xs;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double lo = cuts[k], hi = cuts[k + 1];
    const double mid = 0.5 * (lo + hi);
    xs.clear();
    for (const auto& ring : rings) {
      for (std::size_t i = 0; i < ring.size(); ++i) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[(i + 1) % ring.size()];
        if ((a.y() > mid) == (b.y() > mid)) continue;
        // Edges span the whole slab because every vertex is a cut.
        const auto t_at = [&](double s) {
          return a.x() + (s - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
        };
        xs.push_back({t_at(mid), t_at(lo), t_at(hi)});
      }
    }
    std::sort(xs.begin(), xs.end(),
              [](const Crossing& p, const Crossing& q) { return p.at_mid < q.at_mid; });
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      out.push_back({std::min(xs[i].at_lo, xs[i].at_hi),
                     std::max(xs[i + 1].at_lo, xs[i + 1].at_hi)});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Interval& p, const Interval& q) { return p.lo < q.lo; });
  std::vector<Interval> merged;
  for (const auto& iv : out) {
    if (!merged.empty() && iv.lo <= merged.back().hi) {
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    } else {
      merged.push_back(iv);
    }
  }
  return merged;
}

Vec3 tangent(const ShapeModel& model, const Vec2& uv, const Vec2& dir) {
  if (model.kind() == ShapeKind::Plane) {
    return model.plane().frame.direction_to_world(Vec3(dir.x(), dir.y(), 0.0));
  }
  const auto& p = model.poly();
  const Vec2 g = p.gradient(uv.x(), uv.y());
  return p.frame.direction_to_world(Vec3(dir.x(), dir.y(), g.dot(dir)));
}

// Unit vector of `d` with its component along unit `a` removed; `fallback`
// when nothing is left.
Vec3 orthogonal_unit(const Vec3& d, const Vec3& a, const Vec3& fallback) {
  const Vec3 r = d - d.dot(a) * a;
  const double n = r.norm();
  if (n > 1e-12) return r / n;
  return fallback;
}

Vec3 any_orthogonal(const Vec3& a) {
  const Vec3 seed = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return orthogonal_unit(seed, a, Vec3::UnitZ());
}

}  // namespace

const char* to_string(DirectionMode mode) {
  return mode == DirectionMode::Serpentine ? "serpentine" : "unidirectional";
}

DirectionMode parse_direction_mode(std::string_view name) {
  if (name == "unidirectional") return DirectionMode::Unidirectional;
  if (name == "serpentine") return DirectionMode::Serpentine;
  throw InvalidArgument("unknown direction mode '" + std::string(name) + "'");
}

void CoverageConfig::validate() const {
  if (!(tool_diameter > 0.0) || !std::isfinite(tool_diameter)) {
    throw InvalidArgument("tool_diameter must be > 0");
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("overlap must be in [0, 1)");
  if (!(spacing() > 0.0)) throw InvalidArgument("lane spacing must be > 0");
  if (!(step_along > 0.0) || !std::isfinite(step_along)) {
    throw InvalidArgument("step_along must be > 0");
  }
  if (!(clearance >= 0.0) || !std::isfinite(clearance)) {
    throw InvalidArgument("clearance must be >= 0");
  }
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

BoundingRectangle min_bounding_rectangle(const std::vector<Vec2>& points) {
  const std::vector<Vec2> hull = convex_hull(points);
  double area2 = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    area2 += cross(Vec2::Zero(), hull[i], hull[(i + 1) % hull.size()]);
  }
  if (hull.size() < 3 || !(area2 > 0.0)) {
    throw InvalidArgument("bounding rectangle of a degenerate polygon");
  }

  // For each hull edge the optimal rectangle has a side on it. Extents are
  // found with caliper pointers that only move forward around the hull.
  const std::size_t n = hull.size();
  std::size_t far = 0, right = 0, left = 0;
  BoundingRectangle best;
  double best_area = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = hull[i];
    const Vec2 e = (hull[(i + 1) % n] - a).normalized();
    const Vec2 perp(-e.y(), e.x());
    const auto along = [&](std::size_t k) { return e.dot(hull[k % n] - a); };
    const auto up = [&](std::size_t k) { return perp.dot(hull[k % n] - a); };
    if (i == 0) {
      for (std::size_t k = 1; k < n; ++k) {
        if (up(k) > up(far)) far = k;
        if (along(k) > along(right)) right = k;
        if (along(k) < along(left)) left = k;
      }
    }
    // Each extreme vertex only moves forward as the edge direction turns.
    while (up(far + 1) > up(far)) far = (far + 1) % n;
    while (along(right + 1) > along(right)) right = (right + 1) % n;
    while (along(left + 1) < along(left)) left = (left + 1) % n;

    const double t0 = along(left), t1 = along(right);
    const double h = up(far);
    const double w = t1 - t0;
    const double area = w * h;
    double angle = std::atan2(e.y(), e.x());
    double width = w, height = h;
    if (h > w) {
      angle += std::numbers::pi / 2;
      std::swap(width, height);
    }
    angle = std::fmod(angle, std::numbers::pi);
    if (angle < 0) angle += std::numbers::pi;
    if (angle >= std::numbers::pi) angle -= std::numbers::pi;

    const double tol = 1e-12 * area;
    const bool better = area < best_area - tol;
    const bool tie = !better && std::abs(area - best_area) <= tol;
    if (better || (tie && angle < best.angle)) {
      best_area = std::min(area, best_area);
      best.angle = angle;
      best.width = width;
      best.height = height;
      best.center = a + e * (0.5 * (t0 + t1)) + perp * (0.5 * h);
    }
  }
  return best;
}

LanePlan plan_lanes(const std::vector<std::vector<Vec2>>& rings, const CoverageConfig& config) {
  config.validate();
  std::vector<Vec2> all;
  for (const auto& r : rings) all.insert(all.end(), r.begin(), r.end());
  if (all.empty()) throw InvalidArgument("coverage needs a non-empty boundary");

  LanePlan plan;
  plan.rectangle = min_bounding_rectangle(all);
  plan.spacing = config.spacing();
  Vec2 d = plan.rectangle.axis();
  Vec2 n = plan.rectangle.across();

  // The sweep starts at the rectangle side nearer the area centroid, so the
  // plan turns with the region instead of depending on the angle's range.
  {
    double area = 0.0, moment = 0.0, s_lo = std::numeric_limits<double>::infinity();
    double s_hi = -s_lo, scale = 0.0;
    for (const auto& r : rings) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        const Vec2& a = r[i];
        const Vec2& b = r[(i + 1) % r.size()];
        const double c = a.x() * b.y() - b.x() * a.y();
        area += c;
        moment += c * (n.dot(a) + n.dot(b));
        s_lo = std::min(s_lo, n.dot(a));
        s_hi = std::max(s_hi, n.dot(a));
        scale = std::max(scale, a.cwiseAbs().maxCoeff());
      }
    }
    if (area != 0.0) {
      const double s_c = moment / (3.0 * area);
      if ((s_c - s_lo) - (s_hi - s_c) > 1e-9 * std::max(1.0, scale)) {
        d = -d;
        n = -n;
      }
    }
  }

  // Rings in (t, s) = (along, across) coordinates.
  std::vector<std::vector<Vec2>> rotated;
  double s_min = std::numeric_limits<double>::infinity();
  double s_max = -s_min, scale = 0.0;
  for (const auto& r : rings) {
    auto& out = rotated.emplace_back();
    for (const auto& p : r) {
      out.emplace_back(d.dot(p), n.dot(p));
      s_min = std::min(s_min, out.back().y());
      s_max = std::max(s_max, out.back().y());
      scale = std::max(scale, p.cwiseAbs().maxCoeff());
    }
  }
  const double delta = plan.spacing;
  const double height = s_max - s_min;
  if (delta >= height) {
    plan.offsets.push_back(0.5 * (s_min + s_max));
  } else {
    const auto count = static_cast<std::size_t>(std::ceil(height / delta - 1e-9));
    for (std::size_t k = 0; k < count; ++k) plan.offsets.push_back(s_min + delta * (k + 0.5));
  }

  const double min_length = 1e-9 * std::max(1.0, scale);
  for (std::size_t k = 0; k < plan.offsets.size(); ++k) {
    const double o = plan.offsets[k];
    auto intervals = band_projection(rotated, o - 0.5 * delta, o + 0.5 * delta);
    std::erase_if(intervals, [&](const Interval& iv) { return iv.hi - iv.lo <= min_length; });
    const bool reverse = config.direction_mode == DirectionMode::Serpentine && k % 2 == 1;
    if (reverse) std::reverse(intervals.begin(), intervals.end());
    for (const auto& iv : intervals) {
      const Vec2 a = iv.lo * d + o * n;
      const Vec2 b = iv.hi * d + o * n;
      plan.segments.push_back({reverse ? b : a, reverse ? a : b, static_cast<int>(k)});
    }
  }
  return plan;
}

Trajectory lift_trajectory(const LanePlan& plan, const SurfacePatch& patch,
                           const CoverageConfig& config) {
  config.validate();
  Trajectory traj;
  traj.config = config;
  traj.lane_count = static_cast<int>(plan.offsets.size());
  traj.patch_hash = patch_hash(patch);
  const ShapeModel& model = patch.model;

  const auto lifted = [&](const Vec2& uv) {
    return std::pair{surface_point(model, uv.x(), uv.y()), surface_normal(model, uv.x(), uv.y())};
  };
  for (const auto& seg : plan.segments) {
    const Vec2 span = seg.end - seg.start;
    const double len = span.norm();
    const Vec2 dir = span / len;
    const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(len / config.step_along)));

    std::vector<ViaPose> contact;
    for (std::size_t i = 0; i <= steps; ++i) {
      const Vec2 uv = i == steps ? seg.end : seg.start + span * (static_cast<double>(i) / steps);
      const auto [p, nrm] = lifted(uv);
      const Vec3 approach = -nrm;
      const Vec3 travel = orthogonal_unit(tangent(model, uv, dir), approach, any_orthogonal(approach));
      contact.push_back({p, approach, travel, true});
    }
    // Repositioning: above the segment start before it, above its end after.
    const ViaPose& first = contact.front();
    const ViaPose& last = contact.back();
    traj.poses.push_back(
        {first.position - config.clearance * first.approach, first.approach, first.travel, false});
    for (std::size_t i = 0; i < contact.size(); ++i) {
      if (i > 0) traj.contact_length += (contact[i].position - contact[i - 1].position).norm();
      traj.poses.push_back(contact[i]);
    }
    traj.poses.push_back(
        {last.position - config.clearance * last.approach, last.approach, last.travel, false});
  }
  return traj;
}

Trajectory plan_coverage(const SurfacePatch& patch, const CoverageConfig& config) {
  config.validate();
  if (patch.empty()) {
    Trajectory t;
    t.config = config;
    t.patch_hash = patch_hash(patch);
    return t;
  }
  std::vector<std::vector<Vec2>> rings;
  for (const auto& r : patch.boundary) rings.push_back(ring_to_uv(patch.grid, r));
  return lift_trajectory(plan_lanes(rings, config), patch, config);
}

std::string patch_hash(const SurfacePatch& patch) {
  const std::string text = to_json(patch).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Json to_json(const SurfacePatch& patch) {
  Json j;
  j["model"] = to_json(patch.model);
  Json g;
  g["origin"] = vec2_to_json(patch.grid.origin());
  g["h"] = patch.grid.cell();
  g["nu"] = patch.grid.nu();
  g["nv"] = patch.grid.nv();
  std::vector<std::uint32_t> occupied;
  const auto& cells = patch.grid.cells();
  for (std::uint32_t k = 0; k < cells.size(); ++k) {
    if (cells[k]) occupied.push_back(k);
  }
  g["occupancy"] = rle_to_json(PointIndexSet::from_sorted(std::move(occupied)));
  j["grid"] = std::move(g);
  Json rings = Json::array();
  for (const auto& r : patch.boundary) {
    Json ring = Json::array();
    for (const auto& p : ring_to_uv(patch.grid, r)) ring.push_back(vec2_to_json(p));
    rings.push_back(std::move(ring));
  }
  j["boundary"] = std::move(rings);
  Json edits = Json::array();
  for (const auto& e : patch.edits) edits.push_back(to_json(e));
  j["edits"] = std::move(edits);
  return j;
}

Json to_json(const CropEdit& edit) {
  Json j;
  j["seq"] = edit.seq;
  Json poly = Json::array();
  for (const auto& p : edit.polygon) poly.push_back(vec2_to_json(p));
  j["polygon"] = std::move(poly);
  j["cells"] = edit.cells;
  return j;
}

CropEdit crop_edit_from_json(const Json& j) {
  try {
    if (!j.is_object()) throw InvalidArgument("crop edit must be an object");
    CropEdit e;
    e.seq = j.value("seq", std::uint64_t{0});
    for (const auto& p : j.value("polygon", Json::array())) e.polygon.push_back(vec2_from_json(p));
    e.cells = j.value("cells", Json::array()).get<std::vector<std::array<int, 2>>>();
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad crop edit: ") + e.what());
  }
}

SurfacePatch patch_from_json(const Json& j) {
  try {
    const ShapeModel model = model_from_json(j.at("model"));
    const Json& g = j.at("grid");
    SupportGrid grid(vec2_from_json(g.at("origin")), g.at("h").get<double>(),
                     g.at("nu").get<int>(), g.at("nv").get<int>());
    for (std::uint32_t k : rle_from_json(g.at("occupancy"))) {
      if (k >= grid.cells().size()) throw InvalidArgument("occupancy index outside the grid");
      grid.set(static_cast<int>(k % grid.nu()), static_cast<int>(k / grid.nu()), true);
    }
    std::vector<CropEdit> edits;
    for (const auto& je : j.value("edits", Json::array())) edits.push_back(crop_edit_from_json(je));
    return make_patch(model, std::move(grid), std::move(edits));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad patch: ") + e.what());
  }
}

Json to_json(const CoverageConfig& c) {
  Json j;
  j["tool_diameter"] = c.tool_diameter;
  j["overlap"] = c.overlap;
  j["step_along"] = c.step_along;
  j["direction_mode"] = to_string(c.direction_mode);
  j["clearance"] = c.clearance;
  return j;
}

CoverageConfig coverage_config_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("coverage configuration must be an object");
  CoverageConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "tool_diameter") {
        c.tool_diameter = value.get<double>();
      } else if (key == "overlap") {
        c.overlap = value.get<double>();
      } else if (key == "step_along") {
        c.step_along = value.get<double>();
      } else if (key == "direction_mode") {
        c.direction_mode = parse_direction_mode(value.get<std::string>());
      } else if (key == "clearance") {
        c.clearance = value.get<double>();
      } else {
        throw InvalidArgument("unknown coverage field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad coverage configuration: ") + e.what());
  }
  c.validate();
  return c;
}

Json to_json(const Trajectory& t) {
  Json j;
  j["version"] = kTrajectoryVersion;
  Json c = to_json(t.config);
  for (const char* k : {"tool_diameter", "overlap", "step_along", "clearance"}) {
    c[k] = round9(c[k].get<double>());
  }
  j["config"] = std::move(c);
  j["patch_hash"] = t.patch_hash;
  j["lane_count"] = t.lane_count;
  j["contact_length"] = round9(t.contact_length);
  Json poses = Json::array();
  for (const auto& p : t.poses) {
    Json jp;
    jp["p"] = rounded(p.position);
    jp["a"] = rounded(p.approach);
    jp["t"] = rounded(p.travel);
    jp["contact"] = p.contact;
    poses.push_back(std::move(jp));
  }
  j["poses"] = std::move(poses);
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  try {
    if (j.at("version").get<int>() != kTrajectoryVersion) {
      throw InvalidArgument("unsupported trajectory version");
    }
    Trajectory t;
    t.config = coverage_config_from_json(j.at("config"));
    t.patch_hash = j.at("patch_hash").get<std::string>();
    t.lane_count = j.at("lane_count").get<int>();
    t.contact_length = j.at("contact_length").get<double>();
    for (const auto& jp : j.at("poses")) {
      t.poses.push_back({vec_from_json(jp.at("p")), vec_from_json(jp.at("a")),
                         vec_from_json(jp.at("t")), jp.at("contact").get<bool>()});
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad trajectory: ") + e.what());
  }
}

void export_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
  write_json_file(to_json(trajectory), path);
}

std::string trajectory_csv(const Trajectory& t) {
  std::string out = "x,y,z,ax,ay,az,tx,ty,tz,contact\n";
  char buf[32];
  for (const auto& p : t.poses) {
    for (const Vec3* v : {&p.position, &p.approach, &p.travel}) {
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof buf, "%.9g,", (*v)[c]);
        out += buf;
      }
    }
    out += p.contact ? "1\n" : "0\n";
  }
  return out;
}

}  // namespace contactseg
