#include "contactseg/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace contactseg {

namespace {

constexpr std::size_t kRefitCandidates = 16;

// Unit vectors e1, e2 with (e1, e2, axis) right-handed.
std::pair<Vec3, Vec3> cap_basis(const Vec3& axis) {
  const Vec3 a = axis.normalized();
  const Vec3 seed = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = (seed - seed.dot(a) * a).normalized();
  return {e1, a.cross(e1)};
}

PolyParams poly_params(const PatchSpec& patch) {
  return PolyParams{patch.order, patch.frame, patch.coefficients};
}

double normal_clipped(Rng& rng, double sigma) {
  if (sigma == 0.0) return 0.0;
  for (;;) {
    const double x = rng.normal();
    if (std::abs(x) <= 4.0) return sigma * x;
  }
}

double patch_area(const PatchSpec& patch) {
  if (patch.shape == PatchShape::SphereCap) {
    return 2.0 * std::numbers::pi * patch.radius * patch.radius *
           (1.0 - std::cos(patch.half_angle));
  }
  return (patch.u_max - patch.u_min) * (patch.v_max - patch.v_min);
}

// Uniform sample of the patch as a parameter pair.
Vec2 sample_parameter(const PatchSpec& patch, Rng& rng) {
  if (patch.shape == PatchShape::SphereCap) {
    // Uniform on the cap: cos(polar) uniform in [cos(half_angle), 1].
    const double c = rng.uniform(std::cos(patch.half_angle), 1.0);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return {patch.radius * s * std::cos(phi), patch.radius * s * std::sin(phi)};
  }
  const double u = rng.uniform(patch.u_min, patch.u_max);
  const double v = rng.uniform(patch.v_min, patch.v_max);
  return {u, v};
}

void check_patch(const PatchSpec& p) {
  if (!(p.density > 0.0) || !std::isfinite(p.density)) {
    throw InvalidArgument("patch density must be positive");
  }
  if (p.shape == PatchShape::SphereCap) {
    if (!(p.radius > 0.0)) throw InvalidArgument("sphere radius must be positive");
    if (!(p.half_angle > 0.0 && p.half_angle <= std::numbers::pi / 2)) {
      throw InvalidArgument("cap half angle must be in (0, pi/2]");
    }
    if (!(p.axis.norm() > 0.0)) throw InvalidArgument("cap axis must be non-zero");
    return;
  }
  if (!(p.u_min < p.u_max && p.v_min < p.v_max)) {
    throw InvalidArgument("patch extent must be non-empty");
  }
  const Vec3 uv = p.frame.u.cross(p.frame.v);
  if (std::abs(p.frame.u.norm() - 1.0) > 1e-9 || std::abs(p.frame.v.norm() - 1.0) > 1e-9 ||
      std::abs(p.frame.u.dot(p.frame.v)) > 1e-9 || (uv - p.frame.w).norm() > 1e-9) {
    throw InvalidArgument("patch frame must be right-handed orthonormal");
  }
  if (p.shape == PatchShape::Polynomial) {
    if (p.order != 2 && p.order != 3) throw InvalidArgument("polynomial order must be 2 or 3");
    if (p.coefficients.size() != poly_coefficient_count(p.order)) {
      throw InvalidArgument("polynomial needs " +
                            std::to_string(poly_coefficient_count(p.order)) + " coefficients");
    }
  }
}

// Distance from `p` to the patch surface near the generating point (u, v).
double surface_distance(const PatchSpec& patch, double u, double v, const Vec3& p) {
  switch (patch.shape) {
    case PatchShape::Rectangle:
      return std::abs(patch.frame.w.dot(p - patch.frame.origin));
    case PatchShape::SphereCap:
      return std::abs((p - patch.center).norm() - patch.radius);
    case PatchShape::Polynomial:
      break;
  }
  return std::abs(patch_normal(patch, u, v).dot(p - patch_point(patch, u, v)));
}

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad ") + what + ": " + e.what());
  }
}

}  // namespace

const char* to_string(PatchShape shape) {
  switch (shape) {
    case PatchShape::Rectangle: return "rectangle";
    case PatchShape::SphereCap: return "sphere_cap";
    case PatchShape::Polynomial: return "polynomial";
  }
  return "?";
}

PatchShape parse_patch_shape(std::string_view name) {
  if (name == "rectangle") return PatchShape::Rectangle;
  if (name == "sphere_cap") return PatchShape::SphereCap;
  if (name == "polynomial") return PatchShape::Polynomial;
  throw InvalidArgument("unknown patch shape '" + std::string(name) + "'");
}

void SceneSpec::validate() const {
  if (patches.empty()) throw InvalidArgument("scene needs at least one patch");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be >= 0");
  if (!(clutter_fraction >= 0.0 && clutter_fraction < 1.0)) {
    throw InvalidArgument("clutter fraction must be in [0, 1)");
  }
  for (const auto& p : patches) check_patch(p);
}

Vec3 patch_point(const PatchSpec& patch, double u, double v) {
  switch (patch.shape) {
    case PatchShape::Rectangle:
      return patch.frame.to_world({u, v, 0.0});
    case PatchShape::Polynomial:
      return patch.frame.to_world({u, v, poly_params(patch).eval(u, v)});
    case PatchShape::SphereCap: {
      const auto [e1, e2] = cap_basis(patch.axis);
      const double h = std::sqrt(std::max(0.0, patch.radius * patch.radius - u * u - v * v));
      return patch.center + u * e1 + v * e2 + h * patch.axis.normalized();
    }
  }
  return Vec3::Zero();
}

Vec3 patch_normal(const PatchSpec& patch, double u, double v) {
  switch (patch.shape) {
    case PatchShape::Rectangle:
      return patch.frame.w;
    case PatchShape::Polynomial: {
      const Vec2 g = poly_params(patch).gradient(u, v);
      return patch.frame.direction_to_world({-g.x(), -g.y(), 1.0}).normalized();
    }
    case PatchShape::SphereCap:
      return (patch_point(patch, u, v) - patch.center).normalized();
  }
  return Vec3::UnitZ();
}

ShapeModel truth_model(const PatchSpec& patch) {
  switch (patch.shape) {
    case PatchShape::Rectangle:
      return ShapeModel(ShapeKind::Plane,
                        PlaneParams{patch.frame.w, -patch.frame.w.dot(patch.frame.origin),
                                    patch.frame},
                        default_complexity(ShapeKind::Plane));
    case PatchShape::SphereCap:
      return ShapeModel(ShapeKind::Sphere, SphereParams{patch.center, patch.radius},
                        default_complexity(ShapeKind::Sphere));
    case PatchShape::Polynomial: {
      const ShapeKind kind = patch.order == 2 ? ShapeKind::Poly2 : ShapeKind::Poly3;
      return ShapeModel(kind, poly_params(patch), default_complexity(kind));
    }
  }
  throw InvalidArgument("unknown patch shape");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Vec3> points;
  std::vector<int> labels;

  for (std::size_t k = 0; k < spec.patches.size(); ++k) {
    const PatchSpec& patch = spec.patches[k];
    const auto count = static_cast<std::size_t>(std::llround(patch.density * patch_area(patch)));
    for (std::size_t i = 0; i < count; ++i) {
      const Vec2 uv = sample_parameter(patch, rng);
      const double d = normal_clipped(rng, spec.sigma);
      Vec3 p = patch_point(patch, uv.x(), uv.y());
      if (d != 0.0) p += d * patch_normal(patch, uv.x(), uv.y());
      points.push_back(p);
      labels.push_back(static_cast<int>(k));
    }
  }

  if (spec.clutter_fraction > 0.0 && !points.empty()) {
    Vec3 lo = points.front();
    Vec3 hi = points.front();
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const auto clutter = static_cast<std::size_t>(std::llround(
        spec.clutter_fraction / (1.0 - spec.clutter_fraction) * static_cast<double>(points.size())));
    for (std::size_t i = 0; i < clutter; ++i) {
      const double x = rng.uniform(lo.x(), hi.x());
      const double y = rng.uniform(lo.y(), hi.y());
      const double z = rng.uniform(lo.z(), hi.z());
      points.emplace_back(x, y, z);
      labels.push_back(-1);
    }
  }
  return Scene{PointCloud(std::move(points)), std::move(labels)};
}

DemoStream simulate_demo(const SceneSpec& spec, const DemoPath& path) {
  spec.validate();
  if (path.patch >= spec.patches.size()) throw InvalidArgument("demo path names no patch");
  if (!(path.spacing > 0.0)) throw InvalidArgument("demo spacing must be positive");
  if (path.passes < 1) throw InvalidArgument("demo needs at least one pass");
  if (path.batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (!(path.sigma_d >= 0.0) || !(path.gate_margin >= 0.0)) {
    throw InvalidArgument("noise and gate margin must be >= 0");
  }
  const PatchSpec& patch = spec.patches[path.patch];
  const Vec2 delta = path.end - path.start;
  const double length = delta.norm();
  const Vec2 dir = length > 0.0 ? Vec2(delta / length) : Vec2(1.0, 0.0);
  const Vec2 lateral(-dir.y(), dir.x());
  const auto per_pass = static_cast<std::size_t>(std::floor(length / path.spacing + 1e-9)) + 1;
  const std::size_t total = per_pass * static_cast<std::size_t>(path.passes);

  Rng rng(path.seed);
  DemoStream out;
  out.samples = total;
  std::vector<Vec3> batch;
  for (std::size_t n = 0; n < total; ++n) {
    const std::size_t pass = n / per_pass;
    const std::size_t i = n % per_pass;
    const Vec2 uv = path.start + static_cast<double>(pass) * path.lateral_step * lateral +
                    static_cast<double>(i) * path.spacing * dir;
    const double frac = total > 1 ? static_cast<double>(n) / static_cast<double>(total - 1) : 0.0;
    const bool lifted = std::any_of(path.lift_off.begin(), path.lift_off.end(),
                                    [&](const auto& r) { return frac >= r[0] && frac <= r[1]; });

    Vec3 p = patch_point(patch, uv.x(), uv.y());
    if (lifted) p += path.lift_height * patch_normal(patch, uv.x(), uv.y());
    if (path.sigma_d > 0.0) {
      const double x = rng.normal();
      const double y = rng.normal();
      const double z = rng.normal();
      p += path.sigma_d * Vec3(x, y, z);
    }
    if (surface_distance(patch, uv.x(), uv.y(), p) > path.gate_margin) continue;

    ++out.emitted;
    batch.push_back(p);
    if (batch.size() == path.batch_size) {
      out.batches.push_back(std::move(batch));
      batch.clear();
    }
  }
  if (!batch.empty()) out.batches.push_back(std::move(batch));
  out.empty_warning = out.emitted == 0;
  return out;
}

std::vector<CpEvent> demo_events(const DemoStream& demo, std::uint64_t first_tick,
                                 std::uint64_t ticks_per_batch, CpSource source) {
  std::vector<CpEvent> events;
  events.reserve(demo.batches.size());
  for (std::size_t i = 0; i < demo.batches.size(); ++i) {
    events.push_back(CpEvent{first_tick + i * ticks_per_batch, CpEvent::Op::Add,
                             demo.batches[i], source});
  }
  return events;
}

BaselineResult classical_ransac_baseline(const PointCloud& cloud, const BaselineConfig& config) {
  config.segmentation.validate();
  Engine engine(cloud, config.segmentation, SampleSource::ObjectPoints);
  const ContactPointSet none;
  for (std::size_t i = 0; i < config.max_iterations; ++i) engine.step(none);
  const auto& best = engine.best();
  if (!best) throw Error("baseline found no model");
  if (best->object_inliers->size() < config.min_inliers) {
    throw Error("baseline found no model with at least " + std::to_string(config.min_inliers) +
                " inliers");
  }
  return BaselineResult{best->model, best->score, engine.iteration(),
                        best->object_inliers->size()};
}

OracleResult exhaustive_best_model(const PointCloud& cloud, const ContactPointSet& cps,
                                   const SegmentationConfig& config, std::size_t trials) {
  config.validate();
  if (cps.empty()) throw InvalidArgument("oracle needs contact points");
  const std::size_t k = std::min(config.sample_size, cps.size());

  struct Scored {
    ShapeModel model;
    double score;
    std::size_t oi;
  };
  auto evaluate = [&](const ShapeModel& m) {
    const auto sets = classify_inliers(m, cloud, cps, config.tau);
    return Scored{m,
                  score(sets.object.size(), cloud.size(), sets.contact.size(), cps.size(),
                        m.complexity()),
                  sets.object.size()};
  };
  auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.model.complexity() < b.model.complexity();
  };

  std::optional<Scored> best;
  for (std::size_t kind_index = 0; kind_index < kAllKinds.size(); ++kind_index) {
    const ShapeKind kind = kAllKinds[kind_index];
    if (!config.enabled(kind) || min_sample_size(kind) > k) continue;
    std::vector<Scored> top;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(trial_seed(config.rng_seed, kind_index * trials + t));
      std::vector<Vec3> sample;
      for (std::uint32_t i : sample_without_replacement(rng, cps.size(), k)) {
        sample.push_back(cps.positions()[i]);
      }
      try {
        top.push_back(evaluate(fit(kind, sample, config.complexity_of(kind))));
      } catch (const DegenerateError&) {
        continue;
      }
      if (top.size() > 4 * kRefitCandidates) {
        std::partial_sort(top.begin(), top.begin() + kRefitCandidates, top.end(), better);
        top.erase(top.begin() + kRefitCandidates, top.end());
      }
    }
    std::sort(top.begin(), top.end(), better);
    if (top.size() > kRefitCandidates) top.erase(top.begin() + kRefitCandidates, top.end());

    for (const Scored& candidate : std::vector<Scored>(top)) {
      Scored current = candidate;
      // Alternate refit and reclassification while the score improves.
      for (int round = 0; round < 4; ++round) {
        const auto sets = classify_inliers(current.model, cloud, cps, config.tau);
        if (sets.object.size() < min_sample_size(kind)) break;
        std::vector<Vec3> support;
        support.reserve(sets.object.size());
        for (std::uint32_t i : sets.object) support.push_back(cloud[i]);
        try {
          Scored next = evaluate(refit(current.model, support));
          if (!(next.score > current.score)) break;
          current = std::move(next);
        } catch (const DegenerateError&) {
          break;
        }
      }
      top.push_back(std::move(current));
    }
    for (const Scored& s : top) {
      if (!best || better(s, *best)) best = s;
    }
  }
  if (!best) throw Error("oracle found no model");
  return OracleResult{best->model.kind(), best->score, best->model};
}

// ---------------------------------------------------------------------------

SceneSpec composite_benchmark(std::uint64_t seed) {
  PatchSpec body;
  body.shape = PatchShape::Rectangle;
  body.u_min = -0.25;
  body.u_max = 0.25;
  body.v_min = -0.25;
  body.v_max = 0.25;
  body.density = 30000.0 / 0.25;

  // w = k (u^2 - v^2) + c (v^3 - 0.6 h^2 v) + c2 (u^3 - 0.6 h^2 u); the linear
  // terms make each cubic orthogonal to the plane over the square.
  const double h = 0.2;
  const double k = 0.2;
  const double c = 1.5;
  const double c2 = 1.0;
  PatchSpec curved;
  curved.shape = PatchShape::Polynomial;
  curved.order = 3;
  curved.frame.origin = Vec3(0.0, 0.0, 0.1);
  curved.u_min = -h;
  curved.u_max = h;
  curved.v_min = -h;
  curved.v_max = h;
  curved.density = 15000.0 / (4.0 * h * h);
  curved.coefficients = {0.0, -c2 * 0.6 * h * h, -c * 0.6 * h * h, k, 0.0, -k, c2, 0.0, 0.0, c};

  SceneSpec spec;
  spec.patches = {body, curved};
  spec.sigma = 0.001;
  spec.clutter_fraction = 0.1;
  spec.seed = seed;
  return spec;
}

DemoPath composite_demo(std::uint64_t seed) {
  DemoPath path;
  path.patch = 1;
  path.start = Vec2(-0.16, -0.16);
  path.end = Vec2(0.16, -0.16);
  path.passes = 5;
  path.lateral_step = 0.08;
  path.spacing = 0.016;
  path.sigma_d = 0.0001;
  path.seed = seed;
  return path;
}

SceneSpec two_plane_benchmark(std::uint64_t seed) {
  PatchSpec first;
  first.shape = PatchShape::Rectangle;
  first.frame.origin = Vec3(-0.15, 0.0, 0.0);
  first.u_min = first.v_min = -0.1;
  first.u_max = first.v_max = 0.1;
  first.density = 2000.0 / 0.04;

  PatchSpec second = first;
  const double a = std::numbers::pi / 6.0;
  second.frame.origin = Vec3(0.15, 0.0, 0.05);
  second.frame.u = Vec3(std::cos(a), 0.0, std::sin(a));
  second.frame.v = Vec3::UnitY();
  second.frame.w = second.frame.u.cross(second.frame.v);

  SceneSpec spec;
  spec.patches = {first, second};
  spec.sigma = 0.001;
  spec.seed = seed;
  return spec;
}

SceneSpec flat_to_curved_benchmark(std::uint64_t seed) {
  PatchSpec flat;
  flat.shape = PatchShape::Rectangle;
  flat.u_min = -0.2;
  flat.u_max = 0.0;
  flat.v_min = -0.1;
  flat.v_max = 0.1;
  flat.density = 4000.0 / 0.04;

  PatchSpec curved = flat;
  curved.shape = PatchShape::Polynomial;
  curved.order = 2;
  curved.u_min = 0.0;
  curved.u_max = 0.2;
  curved.coefficients = {0.0, 0.0, 0.0, 1.5, 0.0, 0.0};

  SceneSpec spec;
  spec.patches = {flat, curved};
  spec.sigma = 0.001;
  spec.seed = seed;
  return spec;
}

Json to_json(const PatchSpec& patch) {
  Json j;
  j["shape"] = to_string(patch.shape);
  if (patch.shape == PatchShape::SphereCap) {
    j["center"] = vec_to_json(patch.center);
    j["radius"] = patch.radius;
    j["axis"] = vec_to_json(patch.axis);
    j["half_angle"] = patch.half_angle;
  } else {
    j["frame"] = to_json(patch.frame);
    j["extent"] = Json::array({patch.u_min, patch.u_max, patch.v_min, patch.v_max});
    if (patch.shape == PatchShape::Polynomial) {
      j["order"] = patch.order;
      j["coefficients"] = patch.coefficients;
    }
  }
  j["density"] = patch.density;
  return j;
}

PatchSpec patch_spec_from_json(const Json& j) {
  return guarded("patch", [&] {
    if (!j.is_object()) throw InvalidArgument("patch must be an object");
    PatchSpec p;
    for (const auto& [key, value] : j.items()) {
      if (key == "shape") {
        p.shape = parse_patch_shape(value.get<std::string>());
      } else if (key == "frame") {
        p.frame = frame_from_json(value);
      } else if (key == "extent") {
        if (value.size() != 4) throw InvalidArgument("extent needs 4 numbers");
        p.u_min = value[0].get<double>();
        p.u_max = value[1].get<double>();
        p.v_min = value[2].get<double>();
        p.v_max = value[3].get<double>();
      } else if (key == "order") {
        p.order = value.get<int>();
      } else if (key == "coefficients") {
        p.coefficients = value.get<std::vector<double>>();
      } else if (key == "center") {
        p.center = vec_from_json(value);
      } else if (key == "radius") {
        p.radius = value.get<double>();
      } else if (key == "axis") {
        p.axis = vec_from_json(value);
      } else if (key == "half_angle") {
        p.half_angle = value.get<double>();
      } else if (key == "density") {
        p.density = value.get<double>();
      } else {
        throw InvalidArgument("unknown patch field '" + key + "'");
      }
    }
    check_patch(p);
    return p;
  });
}

Json to_json(const SceneSpec& spec) {
  Json patches = Json::array();
  for (const auto& p : spec.patches) patches.push_back(to_json(p));
  Json j;
  j["patches"] = std::move(patches);
  j["sigma"] = spec.sigma;
  j["clutter_fraction"] = spec.clutter_fraction;
  j["seed"] = spec.seed;
  return j;
}

SceneSpec scene_spec_from_json(const Json& j) {
  SceneSpec spec = guarded("scene", [&] {
    if (!j.is_object()) throw InvalidArgument("scene must be an object");
    SceneSpec s;
    for (const auto& [key, value] : j.items()) {
      if (key == "patches") {
        for (const auto& p : value) s.patches.push_back(patch_spec_from_json(p));
      } else if (key == "sigma") {
        s.sigma = value.get<double>();
      } else if (key == "clutter_fraction") {
        s.clutter_fraction = value.get<double>();
      } else if (key == "seed") {
        s.seed = value.get<std::uint64_t>();
      } else {
        throw InvalidArgument("unknown scene field '" + key + "'");
      }
    }
    return s;
  });
  spec.validate();
  return spec;
}

}  // namespace contactseg
