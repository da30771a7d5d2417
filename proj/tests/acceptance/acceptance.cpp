// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. Pass criterion names as arguments to run a
// subset.

#include "contactseg/coverage.hpp"
#include "contactseg/segmentation.hpp"
#include "contactseg/serialize.hpp"
#include "contactseg/session.hpp"
#include "contactseg/session_log.hpp"
#include "contactseg/surface.hpp"
#include "contactseg/synth.hpp"

#include "test_support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace contactseg;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

constexpr double kDegree = std::numbers::pi / 180.0;

/// `n` distinct cloud points carrying `label`, in random order.
std::vector<Vec3> label_points(const Scene& scene, int label, std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> idx;
  for (std::uint32_t i = 0; i < scene.labels.size(); ++i) {
    if (scene.labels[i] == label) idx.push_back(i);
  }
  std::vector<Vec3> out;
  for (std::uint32_t k : sample_without_replacement(rng, idx.size(), n)) {
    out.push_back(scene.cloud.points()[idx[k]]);
  }
  return out;
}

PcaFrame random_frame(Rng& rng, const Vec3& origin) {
  const Eigen::Matrix3d r = testsupport::random_rotation(rng);
  PcaFrame f;
  f.origin = origin;
  f.u = r.col(0);
  f.v = r.col(1);
  f.w = r.col(0).cross(r.col(1));
  return f;
}

// Composite scene: planar body plus cubic patch, demonstration on the cubic.
Outcome composite_poly3() {
  const int runs = 100;
  int poly3 = 0;
  double min_recall = 1.0, sum_recall = 0.0, max_contamination = 0.0, sum_contamination = 0.0;
  double max_seconds = 0.0;
  int recall_ok = 0, contamination_ok = 0;
  std::size_t points = 0;
  for (int s = 0; s < runs; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const SceneSpec spec = composite_benchmark(seed);
    const Scene scene = generate_scene(spec);
    points = scene.cloud.size();
    const DemoStream demo = simulate_demo(spec, composite_demo(seed));
    const auto events = demo_events(demo, 0, 5);
    SegmentationConfig config;
    config.rng_seed = seed;
    const auto t0 = Clock::now();
    const SessionRun run = run_session(scene.cloud, config, events, stop_after(600));
    max_seconds = std::max(max_seconds, seconds_since(t0));
    if (run.last.kind == ShapeKind::Poly3) ++poly3;

    std::size_t truth = 0, hit = 0, clutter = 0;
    for (int l : scene.labels) truth += l == 1;
    const PointIndexSet& oi = *run.last.object_inliers;
    for (std::uint32_t i : oi) {
      hit += scene.labels[i] == 1;
      clutter += scene.labels[i] == -1;
    }
    const double recall = static_cast<double>(hit) / static_cast<double>(truth);
    const double contamination = oi.empty() ? 0.0 : static_cast<double>(clutter) / oi.size();
    min_recall = std::min(min_recall, recall);
    sum_recall += recall;
    max_contamination = std::max(max_contamination, contamination);
    sum_contamination += contamination;
    recall_ok += recall >= 0.95;
    contamination_ok += contamination <= 0.05;
  }
  Outcome o;
  o.pass = poly3 >= 95 && recall_ok == runs && contamination_ok == runs && max_seconds <= 60.0 &&
           points >= 50000;
  o.detail = fmt(
      "poly3 %d/%d (need >= 95); recall min %.4f mean %.4f, %d/%d runs >= 0.95; contamination "
      "max %.4f mean %.4f, %d/%d runs <= 0.05; %zu points; slowest run %.2fs (limit 60s)",
      poly3, runs, min_recall, sum_recall / runs, recall_ok, runs, max_contamination,
      sum_contamination / runs, contamination_ok, runs, points, max_seconds);
  return o;
}

// Contact points start on a flat region and move onto a curved one.
Outcome adaptation() {
  const int seeds = 10;
  int ok = 0;
  double max_seconds = 0.0;
  std::string kinds;
  for (int s = 0; s < seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(100 + s);
    const auto t0 = Clock::now();
    const SceneSpec spec = flat_to_curved_benchmark(seed);
    const Scene scene = generate_scene(spec);
    Rng rng(seed);
    std::vector<CpEvent> events;
    for (int b = 0; b < 3; ++b) {
      events.push_back({static_cast<std::uint64_t>(b) * 5, CpEvent::Op::Add,
                        label_points(scene, 0, 5, rng), CpSource::Demonstrated});
    }
    for (int b = 0; b < 12; ++b) {
      events.push_back({60 + static_cast<std::uint64_t>(b) * 5, CpEvent::Op::Add,
                        label_points(scene, 1, 5, rng), CpSource::Demonstrated});
    }
    SegmentationConfig config;
    config.rng_seed = seed;
    const SessionRun run = run_session(scene.cloud, config, events, stop_after(400));
    const double secs = seconds_since(t0);
    max_seconds = std::max(max_seconds, secs);
    int transitions = 0;
    for (std::size_t i = 1; i < run.history.size(); ++i) {
      transitions += run.history[i].kind != run.history[i - 1].kind;
    }
    const bool curved = run.last.kind == ShapeKind::Poly2 || run.last.kind == ShapeKind::Poly3;
    if (transitions >= 1 && curved && secs <= 10.0) ++ok;
    if (!kinds.empty()) kinds += ",";
    kinds += std::string(to_string(run.history.front().kind)) + ">" + std::string(to_string(run.last.kind));
  }
  Outcome o;
  o.pass = ok == seeds;
  o.detail = fmt("%d/%d scripted sessions change kind and end curved [%s]; slowest %.2fs (limit 10s)",
                 ok, seeds, kinds.c_str(), max_seconds);
  return o;
}

// Score against exact rational arithmetic on integer tuples.
Outcome score_exact() {
  Rng rng(2024);
  int ok = 0;
  double worst = 0.0;
  const int n = 1000;
  for (int k = 0; k < n; ++k) {
    const std::uint64_t op = 1 + rng.below(1000000);
    const std::uint64_t oi = rng.below(op + 1);
    const std::uint64_t cp = 1 + rng.below(1000);
    const std::uint64_t ci = rng.below(cp + 1);
    const std::uint64_t d = 1 + rng.below(5);
    const double got = score(oi, op, ci, cp, static_cast<double>(d));
    // oi/op + ci/cp over d, as one fraction of integers.
    const std::uint64_t num = oi * cp + ci * op;
    const std::uint64_t den = op * cp * d;
    const long double exact = static_cast<long double>(num) / static_cast<long double>(den);
    const double direct = (static_cast<double>(oi) / static_cast<double>(op) +
                           static_cast<double>(ci) / static_cast<double>(cp)) /
                          static_cast<double>(d);
    const double rel = exact == 0 ? std::abs(got) : static_cast<double>(std::abs(got - exact) / exact);
    worst = std::max(worst, rel);
    // Four correctly rounded operations: at most ~4 units of 2^-53.
    if (got == direct && rel <= 4.0 * 0x1p-53) ++ok;
  }
  Outcome o;
  o.pass = ok == n;
  o.detail = fmt("%d/%d tuples match; worst relative error %.3g (bound %.3g)", ok, n, worst, 4.0 * 0x1p-53);
  return o;
}

// Iterations until the best model is the plane carrying the contact points.
std::uint64_t iterations_to_target(const Scene& scene, const SegmentationConfig& config,
                                   SampleSource source, const ContactPointSet& cps,
                                   const ShapeModel& truth, const Vec3& center, std::uint64_t cap) {
  Engine engine(scene.cloud, config, source);
  for (std::uint64_t t = 1; t <= cap; ++t) {
    engine.step(cps);
    const auto& best = engine.best();
    if (best && best->kind == ShapeKind::Plane &&
        angle_between(best->model.plane().normal, truth.plane().normal) <= 2.0 * kDegree &&
        std::abs(best->model.plane().normal.dot(center) + best->model.plane().offset) <= config.tau) {
      return t;
    }
  }
  return cap + 1;
}

Outcome guided_vs_classical() {
  const auto t0 = Clock::now();
  const int seeds = 100;
  const std::uint64_t cap = 1000;
  std::vector<double> guided, classical;
  int wins = 0, losses = 0;
  for (int s = 0; s < seeds; ++s) {
    const auto seed = trial_seed(7000, static_cast<std::uint64_t>(s));
    const SceneSpec spec = two_plane_benchmark(seed);
    const Scene scene = generate_scene(spec);
    Rng rng(seed);
    ContactPointSet cps;
    const auto contacts = label_points(scene, 0, 12, rng);
    cps.add(contacts);
    SegmentationConfig config;
    config.rng_seed = seed;
    config.kinds_enabled = {ShapeKind::Plane};
    config.sample_size = 3;
    const ShapeModel truth = truth_model(spec.patches[0]);
    const Vec3 center = patch_point(spec.patches[0], 0.0, 0.0);
    const auto g = iterations_to_target(scene, config, SampleSource::ContactPoints, cps, truth, center, cap);
    const auto c = iterations_to_target(scene, config, SampleSource::ObjectPoints, cps, truth, center, cap);
    guided.push_back(static_cast<double>(g));
    classical.push_back(static_cast<double>(c));
    wins += g < c;
    losses += g > c;
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  // One-sided sign test over the untied pairs.
  const int n = wins + losses;
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  const double mg = median(guided), mc = median(classical);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mg < mc && p < 0.01 && secs <= 120.0;
  o.detail = fmt(
      "median iterations guided %.1f vs classical %.1f (cap %llu = never); guided faster in %d, slower "
      "in %d, tied %d; sign test p = %.3g (need < 0.01); %.1fs (limit 120s)",
      mg, mc, static_cast<unsigned long long>(cap + 1), wins, losses, seeds - n, p, secs);
  return o;
}

// Random single-patch scene of at most 2k points with a known kind.
SceneSpec random_small_scene(Rng& rng, int variant, std::uint64_t seed) {
  SceneSpec spec;
  PatchSpec p;
  const double target = 1500.0;
  p.frame = random_frame(rng, Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0, 0.2)));
  switch (variant % 4) {
    case 0:
      p.shape = PatchShape::Rectangle;
      break;
    case 1: {
      p.shape = PatchShape::SphereCap;
      p.center = p.frame.origin;
      p.radius = rng.uniform(0.08, 0.15);
      p.axis = p.frame.w;
      p.half_angle = rng.uniform(0.7, 1.2);
      break;
    }
    case 2:
      p.shape = PatchShape::Polynomial;
      p.order = 2;
      p.coefficients = {0, 0, 0, rng.uniform(1.0, 2.5), rng.uniform(-1.0, 1.0), -rng.uniform(1.0, 2.5)};
      break;
    default:
      p.shape = PatchShape::Polynomial;
      p.order = 3;
      p.coefficients = {0, 0, 0, rng.uniform(-1, 1), 0, rng.uniform(-1, 1),
                        rng.uniform(6, 10), 0, 0, -rng.uniform(6, 10)};
      break;
  }
  if (p.shape == PatchShape::SphereCap) {
    p.density = target / (2 * std::numbers::pi * p.radius * p.radius * (1 - std::cos(p.half_angle)));
  } else {
    p.density = target / ((p.u_max - p.u_min) * (p.v_max - p.v_min));
  }
  spec.patches = {p};
  spec.sigma = 0.001;
  spec.clutter_fraction = 0.05;
  spec.seed = seed;
  return spec;
}

// Contact sets are twice the default sample size so successive samples
// differ; with exactly sample_size contacts every tick refits the same subset.
constexpr std::size_t kContacts = 24;

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  const int scenes = 20;
  int ok = 0;
  std::size_t max_points = 0;
  double worst = 0.0;
  std::string mismatches;
  Rng rng(4242);
  for (int s = 0; s < scenes; ++s) {
    const auto seed = trial_seed(9000, static_cast<std::uint64_t>(s));
    const SceneSpec spec = random_small_scene(rng, s, seed);
    const Scene scene = generate_scene(spec);
    max_points = std::max(max_points, scene.cloud.size());
    Rng cp_rng(seed);
    const auto contacts = label_points(scene, 0, kContacts, cp_rng);
    SegmentationConfig config;
    config.rng_seed = seed;
    const std::vector<CpEvent> events{{0, CpEvent::Op::Add, contacts, CpSource::Selected}};
    const SessionRun run = run_session(scene.cloud, config, events, stop_after(2000));
    ContactPointSet cps;
    cps.add(contacts);
    const OracleResult best = exhaustive_best_model(scene.cloud, cps, config, 50000);
    const double rel = std::abs(run.last.score - best.score) / best.score;
    worst = std::max(worst, rel);
    if (run.last.kind == best.kind && rel <= 0.02) {
      ++ok;
    } else {
      mismatches += fmt(" [scene %d: engine %s %.4f, oracle %s %.4f]", s,
                        std::string(to_string(run.last.kind)).c_str(), run.last.score,
                        std::string(to_string(best.kind)).c_str(), best.score);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok == scenes && max_points <= 2000 && secs <= 300.0;
  o.detail = fmt("%d/%d scenes agree on kind with score within 2%% (worst %.3f%%); largest scene %zu "
                 "points; %.1fs (limit 300s)",
                 ok, scenes, 100 * worst, max_points, secs) +
             mismatches;
  return o;
}

Outcome fitting_accuracy() {
  const int seeds = 50;
  const double sigma = 0.001;
  int plane_ok = 0, sphere_ok = 0;
  double worst_angle = 0.0, worst_center = 0.0;
  Rng rng(555);
  for (int s = 0; s < seeds; ++s) {
    const auto seed = trial_seed(3100, static_cast<std::uint64_t>(s));
    SceneSpec spec;
    PatchSpec p;
    p.shape = PatchShape::Rectangle;
    p.frame = random_frame(rng, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
    p.density = 10000.0 / 0.04;
    spec.patches = {p};
    spec.sigma = sigma;
    spec.seed = seed;
    const Scene scene = generate_scene(spec);
    Rng cp_rng(seed);
    SegmentationConfig config;
    config.rng_seed = seed;
    const std::vector<CpEvent> events{{0, CpEvent::Op::Add, label_points(scene, 0, kContacts, cp_rng), CpSource::Selected}};
    const SessionRun run = run_session(scene.cloud, config, events, stop_after(2000));
    const double angle = run.last.kind == ShapeKind::Plane
                             ? angle_between(run.last.model.plane().normal, p.frame.w)
                             : std::numbers::pi;
    worst_angle = std::max(worst_angle, angle);
    plane_ok += scene.cloud.size() == 10000 && angle <= 1.0 * kDegree;
  }
  for (int s = 0; s < seeds; ++s) {
    const auto seed = trial_seed(3200, static_cast<std::uint64_t>(s));
    SceneSpec spec;
    PatchSpec p;
    p.shape = PatchShape::SphereCap;
    p.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    p.radius = rng.uniform(0.08, 0.15);
    p.axis = testsupport::random_unit(rng);
    p.half_angle = 1.0;
    p.density = 10000.0 / (2 * std::numbers::pi * p.radius * p.radius * (1 - std::cos(p.half_angle)));
    spec.patches = {p};
    spec.sigma = sigma;
    spec.seed = seed;
    const Scene scene = generate_scene(spec);
    Rng cp_rng(seed);
    SegmentationConfig config;
    config.rng_seed = seed;
    const std::vector<CpEvent> events{{0, CpEvent::Op::Add, label_points(scene, 0, kContacts, cp_rng), CpSource::Selected}};
    const SessionRun run = run_session(scene.cloud, config, events, stop_after(2000));
    const double err = run.last.kind == ShapeKind::Sphere ? (run.last.model.sphere().center - p.center).norm()
                                                          : 1e9;
    worst_center = std::max(worst_center, err);
    sphere_ok += std::abs(static_cast<double>(scene.cloud.size()) - 10000.0) <= 200.0 && err <= 2 * sigma;
  }
  Outcome o;
  o.pass = plane_ok == seeds && sphere_ok == seeds;
  o.detail = fmt("plane normal within 1 deg in %d/%d (worst %.3f deg); sphere center within 2 sigma in "
                 "%d/%d (worst %.3f mm)",
                 plane_ok, seeds, worst_angle / kDegree, sphere_ok, seeds, 1000 * worst_center);
  return o;
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

Outcome coverage_guarantee() {
  Rng rng(808);
  int patches = 0, ok = 0;
  std::size_t cells_checked = 0;
  double worst_margin = -1e300, worst_parallel = 0.0;
  while (patches < 30) {
    const double h = rng.uniform(0.004, 0.012);
    SupportGrid g = blob_grid(rng, h, 48, 300 + rng.below(900));
    const PcaFrame frame = random_frame(rng, Vec3::Zero());
    const ShapeModel model =
        rng.below(2) == 0
            ? ShapeModel(ShapeKind::Plane, PlaneParams{frame.w, -frame.w.dot(frame.origin), frame}, 2.0)
            : ShapeModel(ShapeKind::Poly2,
                         PolyParams{2, frame, {0, 0, 0, rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-2, 2)}},
                         2.5);
    SurfacePatch patch = make_patch(model, g);
    const int crops = 1 + static_cast<int>(rng.below(3));
    for (int c = 0; c < crops; ++c) {
      const Vec2 center = g.cell_center(static_cast<int>(rng.below(48)), static_cast<int>(rng.below(48)));
      auto poly = testsupport::random_star_polygon(rng, 7, 3 * h, 12 * h);
      const Vec2 shift = center - poly.front();
      for (auto& q : poly) q += shift;
      if (!is_simple_polygon(poly)) continue;
      patch = apply_crop(patch, CropEdit{static_cast<std::uint64_t>(c + 1), poly, {}}).patch;
    }
    if (patch.empty()) continue;
    ++patches;
    CoverageConfig cfg;
    cfg.tool_diameter = rng.uniform(0.015, 0.06);
    cfg.overlap = rng.uniform(0.0, 0.3);
    std::vector<std::vector<Vec2>> rings;
    std::vector<Vec2> all;
    for (const auto& r : patch.boundary) {
      rings.push_back(ring_to_uv(patch.grid, r));
      all.insert(all.end(), rings.back().begin(), rings.back().end());
    }
    const LanePlan plan = plan_lanes(rings, cfg);
    const BoundingRectangle mbr = min_bounding_rectangle(all);
    const double delta = cfg.spacing();
    bool good = std::abs(mbr.area() - plan.rectangle.area()) <= 1e-12 * mbr.area();
    const Vec2 axis = mbr.axis();
    for (const auto& s : plan.segments) {
      const Vec2 d = (s.end - s.start).normalized();
      const double cross = std::abs(d.x() * axis.y() - d.y() * axis.x());
      worst_parallel = std::max(worst_parallel, cross);
      good = good && cross <= 1e-9;
    }
    const SupportGrid& grid = patch.grid;
    for (int j = 0; j < grid.nv(); ++j) {
      for (int i = 0; i < grid.nu(); ++i) {
        if (!grid.occupied(i, j)) continue;
        ++cells_checked;
        double best = 1e300;
        for (const auto& s : plan.segments) {
          best = std::min(best, testsupport::point_segment_distance(grid.cell_center(i, j), s.start, s.end));
        }
        const double margin = best - (0.5 * delta + 0.5 * grid.cell());
        worst_margin = std::max(worst_margin, margin);
        good = good && margin <= 0.0;
      }
    }
    ok += good;
  }
  Outcome o;
  o.pass = ok == patches;
  o.detail = fmt("%d/%d cropped patches covered; %zu cells, worst distance minus bound %.3g m; worst "
                 "lane/axis cross product %.3g",
                 ok, patches, cells_checked, worst_margin, worst_parallel);
  return o;
}

Outcome mbr_vs_sweep() {
  Rng rng(1717);
  const int n = 100;
  int ok = 0;
  double worst = 0.0;
  const double step = 0.05 * kDegree;
  for (int k = 0; k < n; ++k) {
    const auto poly = testsupport::random_star_polygon(rng, 5 + static_cast<int>(rng.below(20)), 0.1, 1.0);
    const double area = min_bounding_rectangle(poly).area();
    const double coarse = testsupport::sweep_min_area(poly, step, false);
    const double refined = testsupport::sweep_min_area(poly, step, true);
    const double rel = std::abs(area - refined) / refined;
    worst = std::max(worst, rel);
    ok += area <= coarse * (1 + 1e-12) && rel <= 1e-6;
  }
  Outcome o;
  o.pass = ok == n;
  o.detail = fmt("%d/%d polygons: calipers area <= 0.05 deg sweep minimum and within %.3g relative of "
                 "the locally refined sweep (bound 1e-6)",
                 ok, n, worst);
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("env -u CONTACTSEG_SEED ") + CONTACTSEG_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism_replay() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("contactseg_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto at = [&](const std::string& f) { return (dir / f).string(); };

  // Identical CLI invocations.
  int cli_ok = 0;
  const char* files[] = {"cloud", "cp", "seg", "patch", "traj", "base"};
  for (const char* r : {"1", "2"}) {
    const std::string s = r;
    int rc = run_cli("synth --benchmark composite --seed 12 --out " + at("cloud" + s) + " --cp-out " + at("cp" + s));
    rc |= run_cli("segment --cloud " + at("cloud" + s) + " --cp " + at("cp" + s) + " --steps 400 --seed 3 --out " +
                  at("seg" + s) + " --patch-out " + at("patch" + s));
    rc |= run_cli("plan --patch " + at("patch" + s) + " --out " + at("traj" + s));
    rc |= run_cli("baseline --cloud " + at("cloud" + s) + " --iterations 100 --seed 3 --out " + at("base" + s));
    if (rc != 0) return {false, "CLI invocation failed"};
  }
  for (const char* f : files) {
    const std::string a = slurp(at(std::string(f) + "1")), b = slurp(at(std::string(f) + "2"));
    cli_ok += !a.empty() && a == b;
  }

  // Service session persisted, then replayed from its log.
  SceneSpec spec;
  PatchSpec p;
  p.shape = PatchShape::Polynomial;
  p.order = 2;
  p.coefficients = {0, 0, 0, 1.2, -0.4, -0.9};
  spec.patches = {p};
  spec.clutter_fraction = 0.05;
  spec.seed = 77;
  const Scene scene = generate_scene(spec);
  save_ply(scene.cloud, at("service.ply"));
  std::string log_path;
  bool session_ok = true;
  std::string failure;
  {
    ServiceOptions options;
    options.log_dir = dir / "logs";
    options.snapshot_interval = std::chrono::milliseconds(5);
    Service service(options);
    std::mutex mutex;
    std::condition_variable cv;
    std::vector<Json> inbox;
    const ConnectionId id = service.connect([&](const std::string& m) {
      std::lock_guard lock(mutex);
      inbox.push_back(Json::parse(m));
      cv.notify_all();
    });
    std::uint64_t seq = 0;
    auto call = [&](const std::string& kind, const Json& payload) {
      service.receive(id, Json{{"kind", kind}, {"seq", ++seq}, {"payload", payload}}.dump());
      std::lock_guard lock(mutex);
      for (auto it = inbox.rbegin(); it != inbox.rend(); ++it) {
        if ((*it)["kind"] == "ack" && (*it)["payload"]["seq"] == seq) {
          if (kind == "create_session") log_path = (*it)["payload"]["log"];
          return true;
        }
        if ((*it)["kind"] == "error" && (*it)["payload"]["seq"] == seq) {
          failure = kind + ": " + (*it)["payload"]["message"].get<std::string>();
          return false;
        }
      }
      failure = kind + ": no reply";
      return false;
    };
    auto wait_t = [&](int t) {
      std::unique_lock lock(mutex);
      failure = "no snapshot at t >= " + std::to_string(t);
      return cv.wait_for(lock, std::chrono::seconds(10), [&] {
        return !inbox.empty() && inbox.back()["kind"] == "snapshot" &&
               inbox.back()["payload"]["snapshot"]["t"].get<int>() >= t;
      });
    };
    session_ok = call("create_session", {{"config", {{"rng_seed", 5}}}});
    session_ok = session_ok && call("load_cloud", {{"path", at("service.ply")}});
    Rng rng(5);
    Json first = Json::array(), second = Json::array();
    for (const auto& q : label_points(scene, 0, 8, rng)) first.push_back(vec_to_json(q));
    for (const auto& q : label_points(scene, 0, 8, rng)) second.push_back(vec_to_json(q));
    session_ok = session_ok && call("add_contact_points", {{"positions", first}}) && wait_t(30);
    session_ok = session_ok && call("add_contact_points", {{"positions", second}}) && wait_t(150);
    session_ok = session_ok && call("stop_segmentation", Json::object());
    const Json corner = Json::array({Json::array({-1, -1}), Json::array({0, -1}), Json::array({0, 0}),
                                     Json::array({-1, 0})});
    session_ok = session_ok && call("crop", {{"polygon", corner}});
    session_ok = session_ok && call("plan", Json::object());
    session_ok = session_ok && call("export", {{"target", at("service_traj.json")}});
    service.disconnect(id);
  }
  bool replay_ok = false;
  std::size_t snapshots = 0;
  if (session_ok) {
    const SessionLog log = load_session_log(log_path);
    snapshots = log.snapshots.size();
    const ReplayResult r = replay_session(log, load_log_cloud(log));
    const bool file_ok = r.trajectory && trajectory_artifact(*r.trajectory, "json") == slurp(at("service_traj.json"));
    replay_ok = r.snapshot_matches && r.trajectory_matches && file_ok;
  }
  fs::remove_all(dir);
  Outcome o;
  o.pass = cli_ok == 6 && session_ok && replay_ok;
  o.detail = fmt("%d/6 CLI artifacts byte-identical across runs; service session %s; replay of %zu logged "
                 "snapshots %s the final snapshot and trajectory bytes",
                 cli_ok, session_ok ? "completed" : ("FAILED (" + failure + ")").c_str(), snapshots, replay_ok ? "reproduces" : "does NOT reproduce");
  return o;
}

// Independent evaluation of the lifted surface x(u, v).
Vec3 lift(const ShapeModel& m, double u, double v) {
  const PcaFrame& f = *m.frame();
  double w = 0.0;
  if (m.kind() != ShapeKind::Plane) {
    const auto& c = m.poly().coefficients;
    const double mono[10] = {1, u, v, u * u, u * v, v * v, u * u * u, u * u * v, u * v * v, v * v * v};
    for (std::size_t k = 0; k < c.size(); ++k) w += c[k] * mono[k];
  }
  return f.origin + u * f.u + v * f.v + w * f.w;
}

Outcome mesh_normals() {
  Rng rng(99);
  std::size_t vertices = 0, on_surface = 0, normals_ok = 0;
  double worst_dist = 0.0, worst_normal = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const PcaFrame frame = random_frame(rng, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
    ShapeModel model = [&] {
      switch (trial % 3) {
        case 0:
          return ShapeModel(ShapeKind::Plane, PlaneParams{frame.w, -frame.w.dot(frame.origin), frame}, 2.0);
        case 1: {
          std::vector<double> c(6);
          for (auto& x : c) x = rng.uniform(-2, 2);
          return ShapeModel(ShapeKind::Poly2, PolyParams{2, frame, c}, 2.5);
        }
        default: {
          std::vector<double> c(10);
          for (auto& x : c) x = rng.uniform(-5, 5);
          return ShapeModel(ShapeKind::Poly3, PolyParams{3, frame, c}, 3.0);
        }
      }
    }();
    SupportGrid g(Vec2(rng.uniform(-0.2, 0), rng.uniform(-0.2, 0)), rng.uniform(0.005, 0.02), 24, 20);
    for (int j = 0; j < 20; ++j) {
      for (int i = 0; i < 24; ++i) g.set(i, j, rng.uniform() < 0.7);
    }
    const Mesh mesh = triangulate(model, g);
    for (std::size_t k = 0; k < mesh.vertices.size(); ++k) {
      ++vertices;
      const double u = mesh.parameters[k].x(), v = mesh.parameters[k].y();
      double dist;
      if (model.kind() == ShapeKind::Plane) {
        dist = std::abs(model.plane().normal.dot(mesh.vertices[k]) + model.plane().offset);
      } else {
        const Vec3 local = frame.to_local(mesh.vertices[k]);
        dist = std::abs(local.z() - frame.to_local(lift(model, local.x(), local.y())).z());
      }
      worst_dist = std::max(worst_dist, dist);
      on_surface += dist <= 1e-9;
      const double e = 1e-6;
      const Vec3 su = (lift(model, u + e, v) - lift(model, u - e, v)) / (2 * e);
      const Vec3 sv = (lift(model, u, v + e) - lift(model, u, v - e)) / (2 * e);
      const Vec3 fd = su.cross(sv).normalized();
      const double diff = (fd - mesh.normals[k]).norm() / fd.norm();
      worst_normal = std::max(worst_normal, diff);
      normals_ok += diff <= 1e-6;
    }
  }
  Outcome o;
  o.pass = vertices > 0 && on_surface == vertices && normals_ok == vertices;
  o.detail = fmt("%zu vertices over 30 meshes; on surface %zu (worst %.3g m, bound 1e-9); normals %zu "
                 "(worst relative %.3g, bound 1e-6)",
                 vertices, on_surface, worst_dist, normals_ok, worst_normal);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"composite-poly3", composite_poly3},
      {"adaptation", adaptation},
      {"score-exact", score_exact},
      {"guided-vs-classical", guided_vs_classical},
      {"oracle-equivalence", oracle_equivalence},
      {"fitting-accuracy", fitting_accuracy},
      {"coverage-guarantee", coverage_guarantee},
      {"mbr-vs-sweep", mbr_vs_sweep},
      {"determinism-replay", determinism_replay},
      {"mesh-normals", mesh_normals},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %-20s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
