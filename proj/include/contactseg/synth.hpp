#pragma once

// Synthetic test bed: labelled scenes built from primitive patches, simulated
// contact demonstrations with a geometric contact gate, the classical RANSAC
// baseline and an exhaustive best-model oracle.

#include "contactseg/segmentation.hpp"
#include "contactseg/serialize.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace contactseg {

enum class PatchShape { Rectangle, SphereCap, Polynomial };

const char* to_string(PatchShape shape);
PatchShape parse_patch_shape(std::string_view name);

/// One surface patch of a scene.
///
/// Rectangle and Polynomial patches live in `frame` over the (u, v) box
/// [u_min, u_max] x [v_min, v_max]; a Polynomial lifts (u, v) to
/// w = f(u, v) with the usual monomial order. A SphereCap is the part of
/// the sphere (center, radius) within `half_angle` (at most pi/2) of the
/// direction `axis`; its (u, v) coordinates are the orthographic projection
/// onto the plane normal to the axis.
struct PatchSpec {
  PatchShape shape = PatchShape::Rectangle;
  PcaFrame frame;
  double u_min = -0.1, u_max = 0.1, v_min = -0.1, v_max = 0.1;
  int order = 3;
  std::vector<double> coefficients;
  Vec3 center = Vec3::Zero();
  double radius = 0.1;
  Vec3 axis = Vec3::UnitZ();
  double half_angle = 1.0;
  /// Points per square meter of parameter domain (Rectangle, Polynomial) or
  /// of cap surface (SphereCap).
  double density = 1e5;
};

struct SceneSpec {
  std::vector<PatchSpec> patches;
  double sigma = 0.001;
  /// Share of clutter among all points, in [0, 1).
  double clutter_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  PointCloud cloud;
  /// Patch index per point; -1 for clutter.
  std::vector<int> labels;
};

/// Samples each patch uniformly, offsets every sample along the surface
/// normal by N(0, sigma) redrawn beyond 4 sigma, then appends clutter drawn
/// uniformly in the bounding box of the surface points.
Scene generate_scene(const SceneSpec& spec);

/// Ground-truth primitive of a patch (plane, sphere or polynomial).
ShapeModel truth_model(const PatchSpec& patch);
/// Surface point and unit normal of a patch at parameter (u, v).
Vec3 patch_point(const PatchSpec& patch, double u, double v);
Vec3 patch_normal(const PatchSpec& patch, double u, double v);

/// A demonstration sweep over one patch: `passes` parallel strokes from
/// `start` to `end` in (u, v), offset by `lateral_step` perpendicular to the
/// stroke, sampled every `spacing`. Samples whose normal offset from the true
/// surface exceeds `gate_margin` are not in contact and are dropped.
struct DemoPath {
  std::size_t patch = 0;
  Vec2 start = Vec2::Zero();
  Vec2 end = Vec2::Zero();
  int passes = 1;
  double lateral_step = 0.0;
  double spacing = 0.005;
  /// Isotropic positional noise per axis.
  double sigma_d = 0.0;
  double gate_margin = 0.001;
  /// Points per contact-point revision.
  std::size_t batch_size = 5;
  /// Fractions [a, b] of the total sample sequence during which the tool is
  /// held `lift_height` off the surface.
  std::vector<std::array<double, 2>> lift_off;
  double lift_height = 0.01;
  std::uint64_t seed = 0;
};

struct DemoStream {
  /// Contact-point batches in emission order, one revision each.
  std::vector<std::vector<Vec3>> batches;
  std::size_t samples = 0;
  std::size_t emitted = 0;
  /// True when no sample passed the gate.
  bool empty_warning = false;
};

DemoStream simulate_demo(const SceneSpec& spec, const DemoPath& path);

/// Demo batches as session events, one batch per `ticks_per_batch` loop ticks
/// starting at tick `first_tick`.
std::vector<CpEvent> demo_events(const DemoStream& demo, std::uint64_t first_tick,
                                 std::uint64_t ticks_per_batch,
                                 CpSource source = CpSource::Demonstrated);

struct BaselineConfig {
  SegmentationConfig segmentation;
  std::size_t max_iterations = 1000;
  std::size_t min_inliers = 0;
};

struct BaselineResult {
  ShapeModel model;
  double score;
  std::size_t iterations;
  std::size_t inliers;
};

/// Classical RANSAC: subsets drawn from the object points, score
/// (|OI| / |OP|) / D_M. Shares the engine's fit, classification and
/// replacement rules. Throws Error when the best model has fewer than
/// min_inliers inliers.
BaselineResult classical_ransac_baseline(const PointCloud& cloud, const BaselineConfig& config);

struct OracleResult {
  ShapeKind kind;
  double score;
  ShapeModel model;
};

/// Best (kind, score) over `trials` random subsets of the contact points per
/// enabled kind; the strongest candidates of each kind are also refit on
/// their inliers. Intended for clouds of at most a few thousand points.
OracleResult exhaustive_best_model(const PointCloud& cloud, const ContactPointSet& cps,
                                   const SegmentationConfig& config, std::size_t trials);

/// Benchmark scenes shared by the tests, the acceptance suite and the CLI.
///
/// Composite: a 50 x 50 cm planar body (patch 0, 30k points) under a
/// 40 x 40 cm cubic patch (patch 1, 15k points) 10 cm above it, sigma 1 mm,
/// 10% clutter. The cubic mixes a saddle with cubic terms in both directions
/// and keeps slopes below 0.2.
SceneSpec composite_benchmark(std::uint64_t seed);
/// Five strokes over the composite's cubic patch with 0.1 mm contact noise.
DemoPath composite_demo(std::uint64_t seed);

/// Two equal 20 x 20 cm planes (2000 points each), the second tilted by 30
/// degrees and set apart; sigma 1 mm, no clutter.
SceneSpec two_plane_benchmark(std::uint64_t seed);

/// A flat 20 x 20 cm region (patch 0) continued at u = 0 by the curved
/// region w = 1.5 u^2 (patch 1), 4000 points each, sigma 1 mm.
SceneSpec flat_to_curved_benchmark(std::uint64_t seed);

Json to_json(const PatchSpec& patch);
PatchSpec patch_spec_from_json(const Json& j);
Json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const Json& j);

}  // namespace contactseg
