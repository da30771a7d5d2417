#pragma once

// Raster coverage over a surface patch: lanes parallel to the longest side of
// the minimum-area bounding rectangle, clipped to the patch region, sampled
// into via poses on the analytic surface.

#include "contactseg/serialize.hpp"
#include "contactseg/surface.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace contactseg {

enum class DirectionMode { Unidirectional, Serpentine };

const char* to_string(DirectionMode mode);
DirectionMode parse_direction_mode(std::string_view name);

struct CoverageConfig {
  double tool_diameter = 0.025;
  double overlap = 0.0;
  double step_along = 0.005;
  DirectionMode direction_mode = DirectionMode::Unidirectional;
  /// Height of repositioning poses above the surface, along +normal.
  double clearance = 0.03;

  /// Lane spacing tool_diameter * (1 - overlap).
  double spacing() const noexcept { return tool_diameter * (1.0 - overlap); }
  void validate() const;
};

struct BoundingRectangle {
  /// Direction of the longest side, in [0, pi).
  double angle = 0.0;
  /// Side lengths along and across `angle`; width >= height.
  double width = 0.0;
  double height = 0.0;
  Vec2 center = Vec2::Zero();

  double area() const noexcept { return width * height; }
  Vec2 axis() const { return {std::cos(angle), std::sin(angle)}; }
  Vec2 across() const { return {-std::sin(angle), std::cos(angle)}; }
};

/// Counterclockwise convex hull (Andrew's monotone chain), collinear points
/// dropped.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

/// Minimum-area enclosing rectangle by rotating calipers over the hull of
/// `points`. Equal areas resolve to the smaller angle. Throws InvalidArgument
/// when the hull has zero area.
BoundingRectangle min_bounding_rectangle(const std::vector<Vec2>& points);

struct LaneSegment {
  Vec2 start;
  Vec2 end;
  int lane = 0;
};

struct LanePlan {
  BoundingRectangle rectangle;
  double spacing = 0.0;
  /// Lane offsets along rectangle.across(), in sweep order.
  std::vector<double> offsets;
  /// In-contact segments in execution order.
  std::vector<LaneSegment> segments;
};

/// Lanes parallel to the rectangle's longest side, Δ/2 inset from its edge
/// and Δ apart, ceil(height / Δ) of them (one centered lane when Δ exceeds
/// the height). The sweep starts from the rectangle side nearer the region's
/// area centroid (the lower side on a tie) and lanes run in the direction
/// that keeps (lane, sweep) right-handed. A lane's segments cover the
/// projection onto the lane of the region inside its swath of width Δ, so
/// every region point lies within Δ/2 of a segment. Region membership uses
/// the even-odd rule over `rings`.
LanePlan plan_lanes(const std::vector<std::vector<Vec2>>& rings, const CoverageConfig& config);

struct ViaPose {
  Vec3 position;
  /// Tool axis, anti-parallel to the surface normal.
  Vec3 approach;
  /// Unit tangent along the processing direction, orthogonal to approach.
  Vec3 travel;
  bool contact = true;

  friend bool operator==(const ViaPose&, const ViaPose&) = default;
};

struct Trajectory {
  std::vector<ViaPose> poses;
  int lane_count = 0;
  /// Sum of distances between consecutive contact poses of each segment.
  double contact_length = 0.0;
  CoverageConfig config;
  std::string patch_hash;
};

/// Samples each segment every step_along (endpoints included), lifts onto
/// the model, and brackets every segment with repositioning poses at the
/// configured clearance.
Trajectory lift_trajectory(const LanePlan& plan, const SurfacePatch& patch,
                           const CoverageConfig& config);

/// plan_lanes over the patch boundary followed by lift_trajectory. An empty
/// patch yields an empty trajectory.
Trajectory plan_coverage(const SurfacePatch& patch, const CoverageConfig& config);

/// 16 hex digits of FNV-1a over the compact patch JSON.
std::string patch_hash(const SurfacePatch& patch);

/// {model, grid: {origin, h, nu, nv, occupancy: RLE}, boundary, edits}
Json to_json(const SurfacePatch& patch);
SurfacePatch patch_from_json(const Json& j);

/// {seq, polygon: [[u, v], ...], cells: [[i, j], ...]}; missing fields are
/// empty.
Json to_json(const CropEdit& edit);
CropEdit crop_edit_from_json(const Json& j);

Json to_json(const CoverageConfig& config);
/// Missing fields keep their defaults; the result is validated.
CoverageConfig coverage_config_from_json(const Json& j);

/// {version, config, patch_hash, lane_count, contact_length, poses}; every
/// number rounded to 9 significant digits.
Json to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const Json& j);
void export_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);
/// One pose per row: x,y,z,ax,ay,az,tx,ty,tz,contact.
std::string trajectory_csv(const Trajectory& trajectory);

}  // namespace contactseg
