#include "contactseg/cloud.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace contactseg {

PointBlock PointBlock::from(std::span<const Vec3> points) {
  PointBlock b;
  b.x.reserve(points.size());
  b.y.reserve(points.size());
  b.z.reserve(points.size());
  for (const auto& p : points) {
    b.x.push_back(p.x());
    b.y.push_back(p.y());
    b.z.push_back(p.z());
  }
  return b;
}

PointCloud::PointCloud(std::vector<Vec3> points,
                       std::optional<std::vector<Vec3>> normals,
                       std::string frame_id)
    : points_(std::move(points)),
      normals_(std::move(normals)),
      frame_id_(std::move(frame_id)) {
  if (points_.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw InvalidArgument("point cloud too large for 32-bit indices");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!all_finite(points_[i])) {
      throw InvalidArgument("non-finite coordinate at point " +
                            std::to_string(i));
    }
  }
  if (normals_) {
    if (normals_->size() != points_.size()) {
      throw InvalidArgument("normal count does not match point count");
    }
    for (std::size_t i = 0; i < normals_->size(); ++i) {
      if (!all_finite((*normals_)[i]) ||
          std::abs((*normals_)[i].norm() - 1.0) > 1e-6) {
        throw InvalidArgument("normal " + std::to_string(i) +
                              " is not unit length");
      }
    }
  }
  block_ = PointBlock::from(points_);
}

std::span<const Vec3> PointCloud::normals() const {
  if (!normals_) return {};
  return *normals_;
}

// ---------------------------------------------------------------------------
// PointIndexSet

PointIndexSet PointIndexSet::from_sorted(std::vector<std::uint32_t> indices) {
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] <= indices[i - 1]) {
      throw InvalidArgument("index set is not strictly increasing");
    }
  }
  PointIndexSet s;
  s.indices_ = std::move(indices);
  return s;
}

PointIndexSet PointIndexSet::from_unsorted(std::vector<std::uint32_t> indices) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  PointIndexSet s;
  s.indices_ = std::move(indices);
  return s;
}

bool PointIndexSet::contains(std::uint32_t i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> PointIndexSet::runs()
    const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t i = 0; i < indices_.size();) {
    std::size_t j = i + 1;
    while (j < indices_.size() && indices_[j] == indices_[j - 1] + 1) ++j;
    out.emplace_back(indices_[i], static_cast<std::uint32_t>(j - i));
    i = j;
  }
  return out;
}

PointIndexSet PointIndexSet::from_runs(
    std::span<const std::pair<std::uint32_t, std::uint32_t>> runs) {
  std::vector<std::uint32_t> idx;
  for (const auto& [start, len] : runs) {
    if (len == 0) throw InvalidArgument("zero-length run");
    for (std::uint32_t k = 0; k < len; ++k) idx.push_back(start + k);
  }
  return from_sorted(std::move(idx));
}

// ---------------------------------------------------------------------------
// SpatialIndex

SpatialIndex::SpatialIndex(const PointCloud& cloud, double cell)
    : cloud_(&cloud), cell_(cell) {
  if (!(cell > 0.0) || !std::isfinite(cell)) {
    throw InvalidArgument("spatial index cell size must be positive");
  }
  const auto pts = cloud.points();
  if (pts.empty()) {
    cell_start_.assign(1, 0);
    return;
  }
  Vec3 lo = pts[0];
  Vec3 hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  const double max_cells = 8.0 * static_cast<double>(pts.size()) + 4096.0;
  for (;;) {
    double total = 1.0;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / cell_)) + 1;
      total *= static_cast<double>(dims_[a]);
    }
    if (total <= max_cells) break;
    cell_ *= 1.5;
  }
  const std::size_t ncell =
      static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
  cell_start_.assign(ncell + 1, 0);
  std::vector<std::size_t> owner(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    owner[i] = cell_of(pts[i]);
    ++cell_start_[owner[i] + 1];
  }
  for (std::size_t c = 0; c < ncell; ++c) cell_start_[c + 1] += cell_start_[c];
  members_.resize(pts.size());
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  // Stable counting sort keeps members of each cell in ascending index order.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    members_[fill[owner[i]]++] = static_cast<std::uint32_t>(i);
  }
}

std::array<std::int64_t, 3> SpatialIndex::coord(const Vec3& p) const {
  std::array<std::int64_t, 3> c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = static_cast<std::int64_t>(std::floor((p[a] - origin_[a]) / cell_));
  }
  return c;
}

std::size_t SpatialIndex::cell_of(const Vec3& p) const {
  auto c = coord(p);
  for (int a = 0; a < 3; ++a) c[a] = std::clamp<std::int64_t>(c[a], 0, dims_[a] - 1);
  return static_cast<std::size_t>((c[2] * dims_[1] + c[1]) * dims_[0] + c[0]);
}

std::uint32_t SpatialIndex::nearest(const Vec3& q) const {
  const auto pts = cloud_->points();
  if (pts.empty()) throw InvalidArgument("nearest point query on empty cloud");

  const auto c = coord(q);
  // Largest ring that still touches the grid.
  std::int64_t max_ring = 0;
  for (int a = 0; a < 3; ++a) {
    max_ring = std::max({max_ring, std::abs(c[a]), std::abs(dims_[a] - 1 - c[a])});
  }

  double best_d2 = std::numeric_limits<double>::infinity();
  std::uint32_t best = 0;
  auto visit = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const std::size_t id = static_cast<std::size_t>((z * dims_[1] + y) * dims_[0] + x);
    for (std::uint32_t k = cell_start_[id]; k < cell_start_[id + 1]; ++k) {
      const std::uint32_t i = members_[k];
      const double d2 = (pts[i] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best_d2 = d2;
        best = i;
      }
    }
  };

  for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
    // Every point outside the (2*ring+1)^3 block is at least ring*cell away.
    if (ring > 0) {
      const double bound = static_cast<double>(ring - 1) * cell_;
      if (best_d2 < bound * bound) break;
    }
    const std::int64_t x0 = std::max<std::int64_t>(c[0] - ring, 0);
    const std::int64_t x1 = std::min<std::int64_t>(c[0] + ring, dims_[0] - 1);
    const std::int64_t y0 = std::max<std::int64_t>(c[1] - ring, 0);
    const std::int64_t y1 = std::min<std::int64_t>(c[1] + ring, dims_[1] - 1);
    const std::int64_t z0 = std::max<std::int64_t>(c[2] - ring, 0);
    const std::int64_t z1 = std::min<std::int64_t>(c[2] + ring, dims_[2] - 1);
    for (std::int64_t x = x0; x <= x1; ++x) {
      for (std::int64_t y = y0; y <= y1; ++y) {
        const bool shell_xy =
            std::abs(x - c[0]) == ring || std::abs(y - c[1]) == ring;
        if (shell_xy) {
          for (std::int64_t z = z0; z <= z1; ++z) visit(x, y, z);
        } else {
          if (c[2] - ring >= 0 && c[2] - ring < dims_[2]) visit(x, y, c[2] - ring);
          if (ring > 0 && c[2] + ring >= 0 && c[2] + ring < dims_[2]) {
            visit(x, y, c[2] + ring);
          }
        }
      }
    }
  }
  return best;
}

std::vector<std::uint32_t> SpatialIndex::radius_search(const Vec3& q,
                                                       double radius) const {
  std::vector<std::uint32_t> out;
  const auto pts = cloud_->points();
  if (pts.empty() || radius < 0.0) return out;
  const double r2 = radius * radius;
  const auto lo = coord(q - Vec3::Constant(radius));
  const auto hi = coord(q + Vec3::Constant(radius));
  for (std::int64_t z = std::max<std::int64_t>(lo[2], 0);
       z <= std::min(hi[2], dims_[2] - 1); ++z) {
    for (std::int64_t y = std::max<std::int64_t>(lo[1], 0);
         y <= std::min(hi[1], dims_[1] - 1); ++y) {
      for (std::int64_t x = std::max<std::int64_t>(lo[0], 0);
           x <= std::min(hi[0], dims_[0] - 1); ++x) {
        const std::size_t id =
            static_cast<std::size_t>((z * dims_[1] + y) * dims_[0] + x);
        for (std::uint32_t k = cell_start_[id]; k < cell_start_[id + 1]; ++k) {
          const std::uint32_t i = members_[k];
          if ((pts[i] - q).squaredNorm() <= r2) out.push_back(i);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint32_t nearest_point(const SpatialIndex& index, const Vec3& q) {
  return index.nearest(q);
}

std::optional<std::uint32_t> pick_along_ray(const PointCloud& cloud, const Vec3& origin,
                                            const Vec3& direction, double tolerance) {
  const double len = direction.norm();
  if (!(len > 0.0) || !all_finite(origin) || !all_finite(direction)) {
    throw InvalidArgument("ray needs a finite origin and a non-zero direction");
  }
  if (!(tolerance >= 0.0)) throw InvalidArgument("ray tolerance must be >= 0");
  const Vec3 d = direction / len;
  std::optional<std::uint32_t> best;
  double best_t = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 r = cloud[i] - origin;
    const double t = r.dot(d);
    if (t < 0.0) continue;
    if ((r - t * d).norm() > tolerance) continue;
    if (!best || t < best_t) {
      best = static_cast<std::uint32_t>(i);
      best_t = t;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

struct PlyProperty {
  std::string name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view tok, double& out) {
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

bool is_scalar_type(std::string_view t) {
  static constexpr std::string_view kTypes[] = {
      "char",  "uchar",  "short",   "ushort",  "int",     "uint",
      "float", "double", "int8",    "uint8",   "int16",   "uint16",
      "int32", "uint32", "float32", "float64"};
  return std::find(std::begin(kTypes), std::end(kTypes), t) != std::end(kTypes);
}

}  // namespace

PointCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || split_ws(line) != std::vector<std::string_view>{"ply"}) {
    throw ParseError("missing 'ply' magic", std::max<std::size_t>(lineno, 1));
  }

  std::vector<PlyElement> elements;
  bool have_format = false;
  for (;;) {
    if (!next_line()) throw ParseError("unexpected end of header", lineno + 1);
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() != 3) throw ParseError("malformed format line", lineno);
      if (tok[1] != "ascii") {
        throw UnsupportedEncoding("unsupported encoding '" + std::string(tok[1]) +
                                  "' (only ascii PLY is accepted)");
      }
      if (tok[2] != "1.0") throw ParseError("unsupported PLY version", lineno);
      have_format = true;
    } else if (tok[0] == "element") {
      std::size_t count = 0;
      if (tok.size() != 3 ||
          std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), count).ec !=
              std::errc()) {
        throw ParseError("malformed element line", lineno);
      }
      elements.push_back({std::string(tok[1]), count, {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError("property before element", lineno);
      if (tok.size() == 5 && tok[1] == "list") {
        if (!is_scalar_type(tok[2]) || !is_scalar_type(tok[3])) {
          throw ParseError("unknown property type", lineno);
        }
        elements.back().properties.push_back({std::string(tok[4]), true});
      } else if (tok.size() == 3 && is_scalar_type(tok[1])) {
        elements.back().properties.push_back({std::string(tok[2]), false});
      } else {
        throw ParseError("malformed property line", lineno);
      }
    } else {
      throw ParseError("unknown header keyword '" + std::string(tok[0]) + "'",
                       lineno);
    }
  }
  if (!have_format) throw ParseError("missing format line", lineno);

  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  bool with_normals = false;
  bool saw_vertex = false;

  for (const auto& el : elements) {
    const bool is_vertex = el.name == "vertex";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    if (is_vertex) {
      if (saw_vertex) throw ParseError("duplicate vertex element", lineno);
      saw_vertex = true;
      for (std::size_t k = 0; k < el.properties.size(); ++k) {
        const auto& p = el.properties[k];
        if (p.is_list) continue;
        const int kk = static_cast<int>(k);
        if (p.name == "x") ix = kk;
        if (p.name == "y") iy = kk;
        if (p.name == "z") iz = kk;
        if (p.name == "nx") inx = kk;
        if (p.name == "ny") iny = kk;
        if (p.name == "nz") inz = kk;
      }
      if (ix < 0 || iy < 0 || iz < 0) {
        throw ParseError("vertex element lacks x, y, z properties", lineno);
      }
      with_normals = inx >= 0 && iny >= 0 && inz >= 0;
      points.reserve(el.count);
      if (with_normals) normals.reserve(el.count);
    }
    for (std::size_t row = 0; row < el.count; ++row) {
      if (!next_line()) {
        throw ParseError("file ends before " + el.name + " row " +
                             std::to_string(row + 1) + " of " +
                             std::to_string(el.count),
                         lineno + 1);
      }
      const auto tok = split_ws(line);
      // Values per property; list properties consume a count and items.
      std::vector<double> scalars(el.properties.size(), 0.0);
      std::size_t t = 0;
      for (std::size_t k = 0; k < el.properties.size(); ++k) {
        if (t >= tok.size()) {
          throw ParseError(el.name + " row " + std::to_string(row + 1) +
                               " has too few values",
                           lineno);
        }
        double v = 0.0;
        if (!parse_double(tok[t], v)) {
          throw ParseError(el.name + " row " + std::to_string(row + 1) +
                               ": bad number '" + std::string(tok[t]) + "'",
                           lineno);
        }
        ++t;
        if (el.properties[k].is_list) {
          if (v < 0 || v != std::floor(v)) {
            throw ParseError("bad list length", lineno);
          }
          t += static_cast<std::size_t>(v);
          if (t > tok.size()) {
            throw ParseError(el.name + " row " + std::to_string(row + 1) +
                                 " has too few values",
                             lineno);
          }
        } else {
          scalars[k] = v;
        }
      }
      if (t != tok.size()) {
        throw ParseError(el.name + " row " + std::to_string(row + 1) +
                             " has too many values",
                         lineno);
      }
      if (is_vertex) {
        Vec3 p(scalars[ix], scalars[iy], scalars[iz]);
        if (!all_finite(p)) {
          throw ParseError("vertex row " + std::to_string(row + 1) +
                               " has a non-finite coordinate",
                           lineno);
        }
        points.push_back(p);
        if (with_normals) {
          Vec3 n(scalars[inx], scalars[iny], scalars[inz]);
          const double len = n.norm();
          if (!std::isfinite(len) || len == 0.0) {
            throw ParseError("vertex row " + std::to_string(row + 1) +
                                 " has a zero or non-finite normal",
                             lineno);
          }
          normals.push_back(n / len);
        }
      }
    }
  }
  if (!saw_vertex) throw ParseError("no vertex element", lineno);
  while (next_line()) {
    if (!split_ws(line).empty()) {
      throw ParseError("trailing data after last element", lineno);
    }
  }

  if (with_normals) return PointCloud(std::move(points), std::move(normals));
  return PointCloud(std::move(points));
}

PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_ply(ss.str());
}

std::string format_ply(const PointCloud& cloud, int precision) {
  std::string out;
  out += "ply\nformat ascii 1.0\ncomment frame " + cloud.frame_id() + "\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals()) {
    out += "property double nx\nproperty double ny\nproperty double nz\n";
  }
  out += "end_header\n";
  char buf[64];
  const auto normals = cloud.normals();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud[i];
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, a == 0 ? "%.*g" : " %.*g", precision, p[a]);
      out += buf;
    }
    if (cloud.has_normals()) {
      for (int a = 0; a < 3; ++a) {
        std::snprintf(buf, sizeof buf, " %.*g", precision, normals[i][a]);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path,
              int precision) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << format_ply(cloud, precision);
  if (!f) throw Error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Downsampling

PointCloud voxel_downsample(const PointCloud& cloud, double cell) {
  if (!(cell > 0.0) || !std::isfinite(cell)) {
    throw InvalidArgument("voxel cell size must be positive");
  }
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (std::int64_t v : {k.x, k.y, k.z}) {
        h ^= static_cast<std::uint64_t>(v);
        h *= 1099511628211ull;
      }
      return static_cast<std::size_t>(h);
    }
  };
  struct Acc {
    Vec3 sum = Vec3::Zero();
    Vec3 nsum = Vec3::Zero();
    std::size_t n = 0;
  };
  std::unordered_map<Key, std::size_t, KeyHash> slot;
  std::vector<Acc> acc;
  const auto normals = cloud.normals();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud[i];
    const Key k{static_cast<std::int64_t>(std::floor(p.x() / cell)),
                static_cast<std::int64_t>(std::floor(p.y() / cell)),
                static_cast<std::int64_t>(std::floor(p.z() / cell))};
    auto [it, inserted] = slot.try_emplace(k, acc.size());
    if (inserted) acc.emplace_back();
    Acc& a = acc[it->second];
    a.sum += p;
    if (cloud.has_normals()) a.nsum += normals[i];
    ++a.n;
  }
  std::vector<Vec3> pts;
  std::vector<Vec3> nrm;
  pts.reserve(acc.size());
  for (const auto& a : acc) {
    pts.push_back(a.n == 1 ? a.sum : Vec3(a.sum / static_cast<double>(a.n)));
    if (cloud.has_normals()) {
      const double len = a.nsum.norm();
      nrm.push_back(len > 0.0 ? Vec3(a.nsum / len) : Vec3::UnitZ());
    }
  }
  if (cloud.has_normals()) {
    return PointCloud(std::move(pts), std::move(nrm), cloud.frame_id());
  }
  return PointCloud(std::move(pts), std::nullopt, cloud.frame_id());
}

std::uint64_t cloud_hash(const PointCloud& cloud) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : cloud.points()) {
    for (int a = 0; a < 3; ++a) {
      unsigned char bytes[sizeof(double)];
      const double v = p[a];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace contactseg
