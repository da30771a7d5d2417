#pragma once

// Point-cloud data model, ASCII PLY I/O and voxel-grid spatial queries.

#include "contactseg/geometry.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace contactseg {

/// Raised by the PLY reader for malformed input. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Raised for PLY files whose format line is not `ascii 1.0`.
class UnsupportedEncoding : public Error {
 public:
  using Error::Error;
};

/// Structure-of-arrays copy of a cloud's coordinates for the residual kernels.
struct PointBlock {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> z;

  std::size_t size() const noexcept { return x.size(); }
  static PointBlock from(std::span<const Vec3> points);
};

/// Immutable set of object points. Index i is stable for the cloud lifetime.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points,
                      std::optional<std::vector<Vec3>> normals = std::nullopt,
                      std::string frame_id = "world");

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const noexcept { return points_; }
  bool has_normals() const noexcept { return normals_.has_value(); }
  std::span<const Vec3> normals() const;
  const std::string& frame_id() const noexcept { return frame_id_; }
  const PointBlock& block() const noexcept { return block_; }

 private:
  std::vector<Vec3> points_;
  std::optional<std::vector<Vec3>> normals_;
  std::string frame_id_ = "world";
  PointBlock block_;
};

/// Sorted, duplicate-free indices into a PointCloud.
class PointIndexSet {
 public:
  PointIndexSet() = default;

  /// Takes ownership of indices that are already strictly increasing.
  static PointIndexSet from_sorted(std::vector<std::uint32_t> indices);
  /// Sorts and deduplicates.
  static PointIndexSet from_unsorted(std::vector<std::uint32_t> indices);

  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  bool contains(std::uint32_t i) const;
  std::span<const std::uint32_t> indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  /// Run-length encoding: consecutive runs as (start, length) pairs.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> runs() const;
  static PointIndexSet from_runs(
      std::span<const std::pair<std::uint32_t, std::uint32_t>> runs);

  friend bool operator==(const PointIndexSet&, const PointIndexSet&) = default;

 private:
  std::vector<std::uint32_t> indices_;
};

/// Uniform voxel grid over the bounding box of a cloud.
///
/// Cells are stored densely in CSR form. If the requested cell size would
/// produce more than `8 * size + 4096` cells, the cell is enlarged uniformly
/// until it fits; `cell_size()` reports the size actually used.
class SpatialIndex {
 public:
  SpatialIndex(const PointCloud& cloud, double cell);

  double cell_size() const noexcept { return cell_; }
  const PointCloud& cloud() const noexcept { return *cloud_; }
  std::size_t cell_count() const noexcept { return cell_start_.size() - 1; }

  /// Index of the nearest point; lowest index wins ties.
  std::uint32_t nearest(const Vec3& q) const;

  /// All indices with distance <= radius, ascending.
  std::vector<std::uint32_t> radius_search(const Vec3& q, double radius) const;

  /// Linear cell id of every point (for invariant checks).
  std::size_t cell_of(const Vec3& p) const;

 private:
  std::array<std::int64_t, 3> coord(const Vec3& p) const;

  const PointCloud* cloud_;
  double cell_ = 0.0;
  Vec3 origin_ = Vec3::Zero();
  std::array<std::int64_t, 3> dims_{0, 0, 0};
  std::vector<std::uint32_t> cell_start_;
  std::vector<std::uint32_t> members_;
};

PointCloud load_ply(const std::filesystem::path& path);
PointCloud parse_ply(const std::string& text);

/// Writes an ASCII PLY with `precision` significant digits (17 round-trips
/// doubles bit-exactly).
void save_ply(const PointCloud& cloud, const std::filesystem::path& path,
              int precision = 17);
std::string format_ply(const PointCloud& cloud, int precision = 17);

std::uint32_t nearest_point(const SpatialIndex& index, const Vec3& q);

/// Point closest to the ray origin + t * direction (t >= 0) among those whose
/// perpendicular distance to the ray is at most `tolerance`; smaller t wins,
/// then the lower index. Empty when no point qualifies.
std::optional<std::uint32_t> pick_along_ray(const PointCloud& cloud, const Vec3& origin,
                                            const Vec3& direction, double tolerance);

/// One point per occupied voxel at the centroid of its members, in order of
/// each voxel's first member. Normals are averaged and renormalised.
PointCloud voxel_downsample(const PointCloud& cloud, double cell);

/// FNV-1a over the raw coordinate bytes; identifies a cloud in session logs.
std::uint64_t cloud_hash(const PointCloud& cloud);

}  // namespace contactseg
