#include "contactseg/serialize.hpp"

#include <fstream>
#include <sstream>

namespace contactseg {

namespace {

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad ") + what + ": " + e.what());
  }
}

}  // namespace

Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected [x, y, z]");
  return guarded("vector", [&] {
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  });
}

Json vec2_to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

Vec2 vec2_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("expected [u, v]");
  return guarded("vector", [&] { return Vec2(j[0].get<double>(), j[1].get<double>()); });
}

Json to_json(const PcaFrame& frame) {
  Json j;
  j["origin"] = vec_to_json(frame.origin);
  j["u"] = vec_to_json(frame.u);
  j["v"] = vec_to_json(frame.v);
  j["w"] = vec_to_json(frame.w);
  return j;
}

PcaFrame frame_from_json(const Json& j) {
  return guarded("frame", [&] {
    PcaFrame f;
    f.origin = vec_from_json(j.at("origin"));
    f.u = vec_from_json(j.at("u"));
    f.v = vec_from_json(j.at("v"));
    f.w = vec_from_json(j.at("w"));
    return f;
  });
}

Json to_json(const ShapeModel& model) {
  Json j;
  j["kind"] = to_string(model.kind());
  j["complexity"] = model.complexity();
  Json p;
  switch (model.kind()) {
    case ShapeKind::Line:
      p["point"] = vec_to_json(model.line().point);
      p["direction"] = vec_to_json(model.line().direction);
      break;
    case ShapeKind::Plane:
      p["normal"] = vec_to_json(model.plane().normal);
      p["offset"] = model.plane().offset;
      p["frame"] = to_json(model.plane().frame);
      break;
    case ShapeKind::Sphere:
      p["center"] = vec_to_json(model.sphere().center);
      p["radius"] = model.sphere().radius;
      break;
    case ShapeKind::Poly2:
    case ShapeKind::Poly3:
      p["frame"] = to_json(model.poly().frame);
      p["coefficients"] = model.poly().coefficients;
      break;
  }
  j["params"] = std::move(p);
  return j;
}

ShapeModel model_from_json(const Json& j) {
  return guarded("model", [&] {
    const ShapeKind kind = parse_kind(j.at("kind").get<std::string>());
    const double d_m = j.at("complexity").get<double>();
    const Json& p = j.at("params");
    switch (kind) {
      case ShapeKind::Line:
        return ShapeModel(kind,
                          LineParams{vec_from_json(p.at("point")),
                                     vec_from_json(p.at("direction"))},
                          d_m);
      case ShapeKind::Plane:
        return ShapeModel(kind,
                          PlaneParams{vec_from_json(p.at("normal")),
                                      p.at("offset").get<double>(),
                                      frame_from_json(p.at("frame"))},
                          d_m);
      case ShapeKind::Sphere:
        return ShapeModel(kind,
                          SphereParams{vec_from_json(p.at("center")),
                                       p.at("radius").get<double>()},
                          d_m);
      default:
        return ShapeModel(kind,
                          PolyParams{kind == ShapeKind::Poly2 ? 2 : 3,
                                     frame_from_json(p.at("frame")),
                                     p.at("coefficients").get<std::vector<double>>()},
                          d_m);
    }
  });
}

Json rle_to_json(const PointIndexSet& set) {
  Json j = Json::array();
  for (const auto& [start, len] : set.runs()) j.push_back(Json::array({start, len}));
  return j;
}

PointIndexSet rle_from_json(const Json& j) {
  return guarded("run-length list", [&] {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> runs;
    for (const auto& r : j) {
      if (!r.is_array() || r.size() != 2) throw InvalidArgument("run must be [start, len]");
      runs.emplace_back(r[0].get<std::uint32_t>(), r[1].get<std::uint32_t>());
    }
    return PointIndexSet::from_runs(runs);
  });
}

Json to_json(const SegmentationConfig& config) {
  Json j;
  j["tau"] = config.tau;
  Json c;
  for (ShapeKind k : kAllKinds) c[std::string(to_string(k))] = config.complexity_of(k);
  j["complexity"] = std::move(c);
  j["sample_size"] = config.sample_size;
  j["rng_seed"] = config.rng_seed;
  Json kinds = Json::array();
  for (ShapeKind k : config.kinds_enabled) kinds.push_back(to_string(k));
  j["kinds_enabled"] = std::move(kinds);
  return j;
}

SegmentationConfig config_from_json(const Json& j) {
  SegmentationConfig c = guarded("configuration", [&] {
    if (!j.is_object()) throw InvalidArgument("configuration must be an object");
    SegmentationConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key == "tau") {
        c.tau = value.get<double>();
      } else if (key == "complexity") {
        for (const auto& [kind, d_m] : value.items()) {
          c.complexity[static_cast<std::size_t>(parse_kind(kind))] = d_m.get<double>();
        }
      } else if (key == "sample_size") {
        c.sample_size = value.get<std::size_t>();
      } else if (key == "rng_seed") {
        c.rng_seed = value.get<std::uint64_t>();
      } else if (key == "kinds_enabled") {
        c.kinds_enabled.clear();
        for (const auto& k : value) c.kinds_enabled.push_back(parse_kind(k.get<std::string>()));
      } else {
        throw InvalidArgument("unknown configuration field '" + key + "'");
      }
    }
    return c;
  });
  c.validate();
  return c;
}

Json to_json(const SegmentationSnapshot& s) {
  Json j;
  j["t"] = s.t;
  j["cp_revision"] = s.cp_revision;
  j["kind"] = to_string(s.kind);
  j["model"] = to_json(s.model);
  j["score"] = s.score;
  j["op_count"] = s.op_count;
  j["cp_count"] = s.cp_count;
  j["oi"] = rle_to_json(*s.object_inliers);
  Json ci = Json::array();
  for (std::uint32_t i : *s.contact_inliers) ci.push_back(i);
  j["ci"] = std::move(ci);
  return j;
}

SegmentationSnapshot snapshot_from_json(const Json& j) {
  return guarded("snapshot", [&] {
    SegmentationSnapshot s{.model = model_from_json(j.at("model")),
                           .object_inliers = nullptr,
                           .contact_inliers = nullptr};
    s.t = j.at("t").get<std::uint64_t>();
    s.cp_revision = j.at("cp_revision").get<std::uint64_t>();
    s.kind = parse_kind(j.at("kind").get<std::string>());
    if (s.kind != s.model.kind()) throw InvalidArgument("snapshot kind differs from model");
    s.score = j.at("score").get<double>();
    s.op_count = j.at("op_count").get<std::size_t>();
    s.cp_count = j.at("cp_count").get<std::size_t>();
    s.object_inliers = std::make_shared<const PointIndexSet>(rle_from_json(j.at("oi")));
    s.contact_inliers = std::make_shared<const PointIndexSet>(
        PointIndexSet::from_sorted(j.at("ci").get<std::vector<std::uint32_t>>()));
    return s;
  });
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace contactseg
