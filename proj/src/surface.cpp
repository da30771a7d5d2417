#include "contactseg/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>

namespace contactseg {

namespace {

constexpr std::size_t kMaxCells = std::size_t{1} << 26;

bool has_domain(ShapeKind kind) {
  return kind == ShapeKind::Plane || kind == ShapeKind::Poly2 || kind == ShapeKind::Poly3;
}

// Chebyshev dilation, separable into a row pass and a column pass.
void dilate(SupportGrid& g, int r) {
  if (r <= 0) return;
  SupportGrid rows = g;
  for (int j = 0; j < g.nv(); ++j) {
    for (int i = 0; i < g.nu(); ++i) {
      bool any = false;
      for (int d = -r; d <= r && !any; ++d) any = g.occupied(i + d, j);
      rows.set(i, j, any);
    }
  }
  for (int j = 0; j < g.nv(); ++j) {
    for (int i = 0; i < g.nu(); ++i) {
      bool any = false;
      for (int d = -r; d <= r && !any; ++d) any = rows.occupied(i, j + d);
      g.set(i, j, any);
    }
  }
}

// Fills 4-connected empty components that do not touch the grid border and
// have fewer than `max_cells` cells.
void fill_holes(SupportGrid& g, std::size_t max_cells) {
  if (max_cells == 0) return;
  std::vector<std::uint8_t> seen(g.cells().size(), 0);
  std::vector<std::array<int, 2>> stack, component;
  for (int j = 0; j < g.nv(); ++j) {
    for (int i = 0; i < g.nu(); ++i) {
      if (g.occupied(i, j) || seen[g.index(i, j)]) continue;
      bool touches_border = false;
      component.clear();
      stack.push_back({i, j});
      seen[g.index(i, j)] = 1;
      while (!stack.empty()) {
        const auto [ci, cj] = stack.back();
        stack.pop_back();
        component.push_back({ci, cj});
        static constexpr int kD[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : kD) {
          const int ni = ci + d[0], nj = cj + d[1];
          if (!g.in_range(ni, nj)) {
            touches_border = true;
            continue;
          }
          if (g.occupied(ni, nj) || seen[g.index(ni, nj)]) continue;
          seen[g.index(ni, nj)] = 1;
          stack.push_back({ni, nj});
        }
      }
      if (!touches_border && component.size() < max_cells) {
        for (const auto& c : component) g.set(c[0], c[1], true);
      }
    }
  }
}

InvalidArgument unsupported_kind(ShapeKind kind) {
  return InvalidArgument("no surface patch for " + std::string(to_string(kind)) + " models");
}

struct Edge {
  std::array<int, 2> from;
  std::array<int, 2> to;
};

int direction_code(const std::array<int, 2>& d) {
  if (d[0] == 1) return 0;   // +u
  if (d[1] == 1) return 1;   // +v
  if (d[0] == -1) return 2;  // -u
  return 3;                  // -v
}

// Drops vertices in the middle of straight runs.
LatticeRing merge_collinear(const LatticeRing& raw) {
  LatticeRing ring;
  const std::size_t n = raw.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = raw[(k + n - 1) % n];
    const auto& q = raw[k];
    const auto& r = raw[(k + 1) % n];
    const bool collinear = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0]) == 0;
    if (!collinear) ring.push_back(q);
  }
  return ring;
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    const double v = (q.x() - p.x()) * (r.y() - p.y()) - (q.y() - p.y()) * (r.x() - p.x());
    return (v > 0) - (v < 0);
  };
  const auto on_segment = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    return std::min(p.x(), q.x()) <= r.x() && r.x() <= std::max(p.x(), q.x()) &&
           std::min(p.y(), q.y()) <= r.y() && r.y() <= std::max(p.y(), q.y());
  };
  const int o1 = orient(a, b, c), o2 = orient(a, b, d);
  const int o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace

SupportGrid::SupportGrid(Vec2 origin, double cell, int nu, int nv)
    : origin_(std::move(origin)), cell_(cell), nu_(nu), nv_(nv) {
  if (!(cell > 0.0) || !std::isfinite(cell)) throw InvalidArgument("grid cell must be > 0");
  if (nu < 0 || nv < 0) throw InvalidArgument("grid dimensions must be non-negative");
  const std::size_t n = static_cast<std::size_t>(nu) * static_cast<std::size_t>(nv);
  if (n > kMaxCells) throw InvalidArgument("support grid too large for the cell size");
  occ_.assign(n, 0);
}

std::size_t SupportGrid::occupied_count() const noexcept {
  return static_cast<std::size_t>(std::count(occ_.begin(), occ_.end(), std::uint8_t{1}));
}

std::array<int, 2> SupportGrid::cell_of(const Vec2& uv) const {
  const Vec2 r = (uv - origin_) / cell_;
  // Clamped so far-away coordinates stay representable.
  const auto to_int = [](double x) {
    return static_cast<int>(std::clamp(std::floor(x), -1e9, 1e9));
  };
  return {to_int(r.x()), to_int(r.y())};
}

SupportGrid build_support(const ShapeModel& model, const PointCloud& cloud,
                          const PointIndexSet& oi, const SupportOptions& options) {
  if (!has_domain(model.kind())) {
    throw unsupported_kind(model.kind());
  }
  if (oi.size() < 3) throw InvalidArgument("support needs at least 3 inliers");
  if (!(options.cell > 0.0)) throw InvalidArgument("grid cell must be > 0");
  if (options.dilation < 0) throw InvalidArgument("dilation must be >= 0");

  std::vector<Vec2> uv;
  uv.reserve(oi.size());
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (std::uint32_t i : oi) {
    if (i >= cloud.size()) throw InvalidArgument("inlier index out of range");
    uv.push_back(parameter_coords(model, cloud[i]));
    lo = lo.cwiseMin(uv.back());
    hi = hi.cwiseMax(uv.back());
  }
  const double h = options.cell;
  const int margin = options.dilation + 1;
  const double ilo_u = std::floor(lo.x() / h) - margin;
  const double ilo_v = std::floor(lo.y() / h) - margin;
  const double ihi_u = std::floor(hi.x() / h) + margin;
  const double ihi_v = std::floor(hi.y() / h) + margin;
  const double nu = ihi_u - ilo_u + 1, nv = ihi_v - ilo_v + 1;
  if (nu * nv > static_cast<double>(kMaxCells)) {
    throw InvalidArgument("support grid too large for the cell size");
  }
  SupportGrid g(Vec2(ilo_u * h, ilo_v * h), h, static_cast<int>(nu), static_cast<int>(nv));
  for (const auto& p : uv) {
    const auto c = g.cell_of(p);
    // Rounding at a cell border can land one cell off; the margin absorbs it.
    g.set(std::clamp(c[0], 0, g.nu() - 1), std::clamp(c[1], 0, g.nv() - 1), true);
  }
  dilate(g, options.dilation);
  fill_holes(g, options.max_hole_cells);
  return g;
}

std::vector<LatticeRing> extract_boundary(const SupportGrid& grid) {
  if (grid.empty()) throw InvalidArgument("boundary of an empty grid");

  // Directed border edges with the occupied cell on the left, keyed by start.
  std::map<std::array<int, 2>, std::vector<std::size_t>> outgoing;
  std::vector<Edge> edges;
  const auto emit = [&](std::array<int, 2> a, std::array<int, 2> b) {
    outgoing[a].push_back(edges.size());
    edges.push_back({a, b});
  };
  for (int j = 0; j < grid.nv(); ++j) {
    for (int i = 0; i < grid.nu(); ++i) {
      if (!grid.occupied(i, j)) continue;
      if (!grid.occupied(i, j - 1)) emit({i, j}, {i + 1, j});
      if (!grid.occupied(i + 1, j)) emit({i + 1, j}, {i + 1, j + 1});
      if (!grid.occupied(i, j + 1)) emit({i + 1, j + 1}, {i, j + 1});
      if (!grid.occupied(i - 1, j)) emit({i, j + 1}, {i, j});
    }
  }

  std::vector<std::uint8_t> used(edges.size(), 0);
  std::vector<LatticeRing> rings;
  for (std::size_t start = 0; start < edges.size(); ++start) {
    if (used[start]) continue;
    LatticeRing raw;
    std::size_t e = start;
    while (!used[e]) {
      used[e] = 1;
      raw.push_back(edges[e].from);
      const auto& here = edges[e].to;
      const int in_dir = direction_code({here[0] - edges[e].from[0], here[1] - edges[e].from[1]});
      // Prefer the left turn, then straight, then right: this hugs the cell
      // on the left, so corner-touching cells end up on separate rings.
      std::size_t next = edges.size();
      int best_rank = 4;
      for (std::size_t cand : outgoing.at(here)) {
        if (used[cand]) continue;
        const auto& c = edges[cand];
        const int out_dir = direction_code({c.to[0] - c.from[0], c.to[1] - c.from[1]});
        const int turn = (out_dir - in_dir + 4) % 4;  // 1 left, 0 straight, 3 right
        const int rank = turn == 1 ? 0 : turn == 0 ? 1 : turn == 3 ? 2 : 3;
        if (rank < best_rank) {
          best_rank = rank;
          next = cand;
        }
      }
      if (next == edges.size()) break;
      e = next;
    }
    // A trace that passes a corner vertex twice is split there into two
    // loops, so every ring is simple (rings may still touch at a vertex).
    std::vector<std::array<int, 2>> path;
    std::map<std::array<int, 2>, std::size_t> position;
    for (const auto& q : raw) {
      const auto it = position.find(q);
      if (it == position.end()) {
        position.emplace(q, path.size());
        path.push_back(q);
        continue;
      }
      LatticeRing loop(path.begin() + static_cast<std::ptrdiff_t>(it->second), path.end());
      for (std::size_t k = it->second + 1; k < path.size(); ++k) position.erase(path[k]);
      path.resize(it->second + 1);
      rings.push_back(merge_collinear(loop));
    }
    rings.push_back(merge_collinear(path));
  }
  return rings;
}

std::int64_t twice_lattice_area(const LatticeRing& ring) {
  std::int64_t a = 0;
  for (std::size_t k = 0; k < ring.size(); ++k) {
    const auto& p = ring[k];
    const auto& q = ring[(k + 1) % ring.size()];
    a += static_cast<std::int64_t>(p[0]) * q[1] - static_cast<std::int64_t>(q[0]) * p[1];
  }
  return a;
}

std::vector<Vec2> ring_to_uv(const SupportGrid& grid, const LatticeRing& ring) {
  std::vector<Vec2> out;
  out.reserve(ring.size());
  for (const auto& p : ring) out.push_back(grid.lattice_point(p[0], p[1]));
  return out;
}

Mesh triangulate(const ShapeModel& model, const SupportGrid& grid) {
  if (!has_domain(model.kind())) {
    throw unsupported_kind(model.kind());
  }
  Mesh mesh;
  const std::size_t stride = static_cast<std::size_t>(grid.nu()) + 1;
  std::vector<std::uint32_t> vertex_of(stride * (static_cast<std::size_t>(grid.nv()) + 1),
                                       std::numeric_limits<std::uint32_t>::max());
  const auto vertex = [&](int i, int j) {
    auto& slot = vertex_of[static_cast<std::size_t>(j) * stride + static_cast<std::size_t>(i)];
    if (slot == std::numeric_limits<std::uint32_t>::max()) {
      const Vec2 uv = grid.lattice_point(i, j);
      slot = static_cast<std::uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back(surface_point(model, uv.x(), uv.y()));
      mesh.normals.push_back(surface_normal(model, uv.x(), uv.y()));
      mesh.parameters.push_back(uv);
    }
    return slot;
  };
  for (int j = 0; j < grid.nv(); ++j) {
    for (int i = 0; i < grid.nu(); ++i) {
      if (!grid.occupied(i, j)) continue;
      const std::uint32_t a = vertex(i, j), b = vertex(i + 1, j);
      const std::uint32_t c = vertex(i + 1, j + 1), d = vertex(i, j + 1);
      mesh.triangles.push_back({a, b, c});
      mesh.triangles.push_back({a, c, d});
    }
  }
  return mesh;
}

std::string format_mesh_ply(const Mesh& mesh) {
  std::string out;
  out += "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) {
    out += std::string("property double ") + p + "\n";
  }
  out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
  out += "property list uchar uint vertex_indices\nend_header\n";
  char buf[64];
  for (std::size_t k = 0; k < mesh.vertices.size(); ++k) {
    const Vec3& p = mesh.vertices[k];
    const Vec3& n = mesh.normals[k];
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g ", p[c]);
      out += buf;
    }
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof buf, c < 2 ? "%.17g " : "%.17g\n", n[c]);
      out += buf;
    }
  }
  for (const auto& t : mesh.triangles) {
    out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " +
           std::to_string(t[2]) + "\n";
  }
  return out;
}

SurfacePatch make_patch(const ShapeModel& model, SupportGrid grid, std::vector<CropEdit> edits) {
  SurfacePatch patch{model, std::move(grid), {}, {}, std::move(edits)};
  if (!patch.grid.empty()) {
    patch.mesh = triangulate(model, patch.grid);
    patch.boundary = extract_boundary(patch.grid);
  } else if (!has_domain(model.kind())) {
    throw unsupported_kind(model.kind());
  }
  return patch;
}

SurfacePatch build_patch(const ShapeModel& model, const PointCloud& cloud,
                         const PointIndexSet& oi, const SupportOptions& options) {
  return make_patch(model, build_support(model, cloud, oi, options));
}

const char* to_string(CropStatus status) {
  switch (status) {
    case CropStatus::Applied: return "applied";
    case CropStatus::Unchanged: return "unchanged";
    case CropStatus::OutsideGrid: return "outside_grid";
    case CropStatus::Emptied: return "emptied";
    case CropStatus::Duplicate: return "duplicate";
  }
  return "unknown";
}

bool point_in_polygon(const std::vector<Vec2>& poly, const Vec2& p) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) in = !in;
    }
  }
  return in;
}

bool is_simple_polygon(const std::vector<Vec2>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  double area = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(poly[i].x()) || !std::isfinite(poly[i].y())) return false;
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    area += a.x() * b.y() - b.x() * a.y();
  }
  if (area == 0.0) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    if (a == b) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(a, b, poly[j], poly[(j + 1) % n])) return false;
    }
  }
  return true;
}

CropResult apply_crop(const SurfacePatch& patch, const CropEdit& edit) {
  for (const auto& past : patch.edits) {
    if (past.seq == edit.seq) {
      if (past == edit) return {patch, CropStatus::Duplicate, 0};
      throw InvalidArgument("crop seq " + std::to_string(edit.seq) +
                            " already used by a different edit");
    }
  }
  if (!patch.edits.empty() && edit.seq < patch.edits.back().seq) {
    throw InvalidArgument("crop seq must increase");
  }
  if (!edit.polygon.empty() && !is_simple_polygon(edit.polygon)) {
    throw InvalidArgument("crop polygon must be simple with non-zero area");
  }
  if (edit.polygon.empty() && edit.cells.empty()) {
    throw InvalidArgument("crop needs a polygon or a cell list");
  }
  const SupportGrid& g = patch.grid;
  for (const auto& c : edit.cells) {
    if (!g.in_range(c[0], c[1])) throw InvalidArgument("crop cell outside the grid");
  }

  SupportGrid next = g;
  bool touches_grid = !edit.cells.empty();
  std::size_t cleared = 0;
  if (!edit.polygon.empty()) {
    Vec2 lo = edit.polygon.front(), hi = lo;
    for (const auto& p : edit.polygon) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const auto a = g.cell_of(lo), b = g.cell_of(hi);
    for (int j = std::max(a[1], 0); j <= std::min(b[1], g.nv() - 1); ++j) {
      for (int i = std::max(a[0], 0); i <= std::min(b[0], g.nu() - 1); ++i) {
        if (!point_in_polygon(edit.polygon, g.cell_center(i, j))) continue;
        touches_grid = true;
        if (next.occupied(i, j)) {
          next.set(i, j, false);
          ++cleared;
        }
      }
    }
  }
  for (const auto& c : edit.cells) {
    if (next.occupied(c[0], c[1])) {
      next.set(c[0], c[1], false);
      ++cleared;
    }
  }

  if (!touches_grid) return {patch, CropStatus::OutsideGrid, 0};
  std::vector<CropEdit> edits = patch.edits;
  edits.push_back(edit);
  SurfacePatch out = make_patch(patch.model, std::move(next), std::move(edits));
  const CropStatus status = out.empty()       ? CropStatus::Emptied
                            : cleared > 0     ? CropStatus::Applied
                                              : CropStatus::Unchanged;
  return {std::move(out), status, cleared};
}

}  // namespace contactseg
