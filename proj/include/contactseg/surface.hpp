#pragma once

// Bounded surface patches over a fitted plane or polynomial: an occupancy
// grid in the model's (u, v) domain backed by the object inliers, its
// boundary traced along cell borders, crop edits, and a triangle mesh lifted
// onto the analytic surface.

#include "contactseg/cloud.hpp"
#include "contactseg/primitives.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace contactseg {

/// Occupancy over the (u, v) domain. Cell (i, j) spans
/// [origin.u + i h, origin.u + (i + 1) h) x [origin.v + j h, origin.v + (j + 1) h).
class SupportGrid {
 public:
  SupportGrid() = default;
  SupportGrid(Vec2 origin, double cell, int nu, int nv);

  const Vec2& origin() const noexcept { return origin_; }
  double cell() const noexcept { return cell_; }
  int nu() const noexcept { return nu_; }
  int nv() const noexcept { return nv_; }

  bool in_range(int i, int j) const noexcept { return i >= 0 && j >= 0 && i < nu_ && j < nv_; }
  /// False outside the grid.
  bool occupied(int i, int j) const noexcept {
    return in_range(i, j) && occ_[index(i, j)] != 0;
  }
  void set(int i, int j, bool value) { occ_.at(index(i, j)) = value ? 1 : 0; }
  std::size_t occupied_count() const noexcept;
  bool empty() const noexcept { return occupied_count() == 0; }

  Vec2 cell_center(int i, int j) const {
    return origin_ + cell_ * Vec2(i + 0.5, j + 0.5);
  }
  Vec2 lattice_point(int i, int j) const { return origin_ + cell_ * Vec2(i, j); }
  /// Cell containing (u, v); may be out of range.
  std::array<int, 2> cell_of(const Vec2& uv) const;

  /// Linear index j * nu + i; row-major in v.
  std::size_t index(int i, int j) const noexcept {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nu_) +
           static_cast<std::size_t>(i);
  }
  const std::vector<std::uint8_t>& cells() const noexcept { return occ_; }

  friend bool operator==(const SupportGrid&, const SupportGrid&) = default;

 private:
  Vec2 origin_ = Vec2::Zero();
  double cell_ = 1.0;
  int nu_ = 0;
  int nv_ = 0;
  std::vector<std::uint8_t> occ_;
};

struct SupportOptions {
  double cell = 0.006;
  int dilation = 1;
  /// Enclosed empty regions with fewer cells than this are filled.
  std::size_t max_hole_cells = 9;
};

/// Bins the inliers into the model's (u, v) domain, dilates by
/// `options.dilation` cells (Chebyshev) and fills small enclosed holes.
/// Throws InvalidArgument for line/sphere models or fewer than 3 inliers.
SupportGrid build_support(const ShapeModel& model, const PointCloud& cloud,
                          const PointIndexSet& oi, const SupportOptions& options);

/// Closed polygon on the cell lattice; consecutive vertices differ along one
/// axis and collinear runs are merged. Stored as lattice coordinates.
using LatticeRing = std::vector<std::array<int, 2>>;

/// Traces every boundary between occupied and empty cells with the occupied
/// side on the left: outer rings are counterclockwise, holes clockwise.
/// Where two occupied cells touch only at a corner the trace keeps them
/// apart. Throws InvalidArgument on an empty grid.
std::vector<LatticeRing> extract_boundary(const SupportGrid& grid);

/// Twice the signed area of a lattice ring, in cells (exact).
std::int64_t twice_lattice_area(const LatticeRing& ring);

/// Lattice ring mapped to (u, v) coordinates.
std::vector<Vec2> ring_to_uv(const SupportGrid& grid, const LatticeRing& ring);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  /// Counterclockwise in (u, v), so faces point to the frame's +w side.
  std::vector<std::array<std::uint32_t, 3>> triangles;
  /// (u, v) of each vertex.
  std::vector<Vec2> parameters;
};

/// Two triangles per occupied cell over shared corner vertices, lifted onto
/// the model with analytic normals.
Mesh triangulate(const ShapeModel& model, const SupportGrid& grid);

/// ASCII PLY with double vertices, normals and triangle faces.
std::string format_mesh_ply(const Mesh& mesh);

/// Clears cells whose centers lie strictly inside `polygon` (even-odd rule),
/// or the listed cells.
struct CropEdit {
  std::uint64_t seq = 0;
  std::vector<Vec2> polygon;
  std::vector<std::array<int, 2>> cells;

  friend bool operator==(const CropEdit&, const CropEdit&) = default;
};

struct SurfacePatch {
  ShapeModel model;
  SupportGrid grid;
  Mesh mesh;
  std::vector<LatticeRing> boundary;
  std::vector<CropEdit> edits;

  bool empty() const noexcept { return grid.empty(); }
};

/// Mesh and boundary regenerated from the grid; an empty grid gives an empty
/// mesh and no rings.
SurfacePatch make_patch(const ShapeModel& model, SupportGrid grid,
                        std::vector<CropEdit> edits = {});

SurfacePatch build_patch(const ShapeModel& model, const PointCloud& cloud,
                         const PointIndexSet& oi, const SupportOptions& options);

enum class CropStatus {
  Applied,      // at least one cell cleared
  Unchanged,    // polygon over the grid but nothing left to clear
  OutsideGrid,  // polygon covers no cell center of the grid; no-op
  Emptied,      // the patch has no occupied cells left
  Duplicate,    // edit with this seq already applied; no-op
};

const char* to_string(CropStatus status);

struct CropResult {
  SurfacePatch patch;
  CropStatus status;
  std::size_t cleared = 0;
};

/// Applies one edit. Edits must arrive with increasing seq; re-sending an
/// already applied edit is a no-op. Throws InvalidArgument for a polygon that
/// is not simple or a seq that goes backwards with different content.
CropResult apply_crop(const SurfacePatch& patch, const CropEdit& edit);

/// True if no two non-adjacent edges intersect and the area is non-zero.
bool is_simple_polygon(const std::vector<Vec2>& polygon);

/// Even-odd point-in-polygon test.
bool point_in_polygon(const std::vector<Vec2>& polygon, const Vec2& p);

}  // namespace contactseg
