#include "contactseg/session_log.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace contactseg {

namespace {

CpSource parse_source(const std::string& s) {
  if (s == "selected") return CpSource::Selected;
  if (s == "demonstrated") return CpSource::Demonstrated;
  throw InvalidArgument("unknown contact source '" + s + "'");
}

// Applies one record to the log under construction.
void apply_record(SessionLog& log, const Json& r,
                  std::map<std::uint64_t, std::shared_ptr<const PointIndexSet>>& oi_by_t) {
  const std::string type = r.at("type").get<std::string>();
  if (log.records == 0 && type != "session") {
    throw InvalidArgument("first record must be the session header");
  }
  if (type == "session") {
    if (log.records != 0) throw InvalidArgument("repeated session header");
    if (r.at("version").get<int>() != 1) throw InvalidArgument("unsupported log version");
    log.id = r.at("id").get<std::string>();
    log.config = config_from_json(r.at("config"));
  } else if (type == "config") {
    log.config = config_from_json(r.at("config"));
  } else if (type == "cloud") {
    CloudSource c;
    const std::string source = r.at("source").get<std::string>();
    if (source == "path") {
      c.path = r.at("path").get<std::string>();
    } else if (source == "inline") {
      c.inline_ply = r.at("ply").get<std::string>();
    } else {
      throw InvalidArgument("unknown cloud source '" + source + "'");
    }
    c.points = r.at("points").get<std::size_t>();
    c.hash = std::stoull(r.at("hash").get<std::string>(), nullptr, 16);
    log.cloud = std::move(c);
  } else if (type == "cp") {
    log.events.push_back(cp_event_from_json(r));
  } else if (type == "snapshot") {
    Json body = r;
    std::shared_ptr<const PointIndexSet> shared;
    if (body.at("oi").is_object()) {
      const auto ref = body.at("oi").at("same_as").get<std::uint64_t>();
      const auto it = oi_by_t.find(ref);
      if (it == oi_by_t.end()) throw InvalidArgument("snapshot refers to an unknown set");
      shared = it->second;
      body["oi"] = Json::array();
    }
    SegmentationSnapshot s = snapshot_from_json(body);
    if (shared) s.object_inliers = shared;
    oi_by_t[s.t] = s.object_inliers;
    log.snapshot_ticks.push_back(r.at("tick").get<std::uint64_t>());
    log.snapshots.push_back(std::move(s));
  } else if (type == "stop") {
    log.stop_tick = r.at("tick").get<std::uint64_t>();
    log.support = support_options_from_json(r.at("support"));
  } else if (type == "crop") {
    EditOp op;
    op.kind = EditOp::Kind::Crop;
    op.edit = crop_edit_from_json(r.at("edit"));
    log.edits.push_back(std::move(op));
  } else if (type == "truncate") {
    EditOp op;
    op.kind = EditOp::Kind::Truncate;
    op.keep = r.at("keep").get<std::size_t>();
    log.edits.push_back(std::move(op));
  } else if (type == "plan") {
    log.plan = coverage_config_from_json(r.at("config"));
  } else if (type == "trajectory") {
    log.trajectory = trajectory_from_json(r.at("trajectory"));
  } else if (type == "export") {
    // Export targets are informational for replay.
  } else {
    throw InvalidArgument("unknown record type '" + type + "'");
  }
  ++log.records;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

Json to_json(const CpEvent& e) {
  Json j;
  j["tick"] = e.at_tick;
  j["op"] = e.op == CpEvent::Op::Add ? "add" : "undo";
  if (e.op == CpEvent::Op::Add) {
    Json pos = Json::array();
    for (const auto& p : e.positions) pos.push_back(vec_to_json(p));
    j["positions"] = std::move(pos);
    j["source"] = e.source == CpSource::Demonstrated ? "demonstrated" : "selected";
  }
  return j;
}

CpEvent cp_event_from_json(const Json& r) {
  CpEvent e;
  e.at_tick = r.value("tick", std::uint64_t{0});
  const std::string op = r.value("op", std::string("add"));
  if (op == "add") {
    e.op = CpEvent::Op::Add;
    for (const auto& p : r.at("positions")) e.positions.push_back(vec_from_json(p));
    if (e.positions.empty()) throw InvalidArgument("cp add event without positions");
    e.source = parse_source(r.value("source", std::string("selected")));
  } else if (op == "undo") {
    e.op = CpEvent::Op::Undo;
  } else {
    throw InvalidArgument("unknown cp op '" + op + "'");
  }
  return e;
}

std::vector<CpEvent> cp_events_from_json(const Json& j) {
  const Json& list = j.is_object() ? j.at("events") : j;
  if (!list.is_array()) throw InvalidArgument("contact points must be an array or {events}");
  std::vector<CpEvent> out;
  if (!list.empty() && list.front().is_array()) {
    CpEvent e;
    for (const auto& p : list) e.positions.push_back(vec_from_json(p));
    out.push_back(std::move(e));
    return out;
  }
  std::size_t batches = 0;
  for (const auto& r : list) {
    out.push_back(cp_event_from_json(r));
    if (out.size() > 1 && out.back().at_tick < out[out.size() - 2].at_tick) {
      throw InvalidArgument("cp events are not ordered by tick");
    }
    if (out.back().op == CpEvent::Op::Add) {
      ++batches;
    } else if (batches-- == 0) {
      throw InvalidArgument("cp undo without a batch to remove");
    }
  }
  return out;
}

Json cp_events_to_json(const std::vector<CpEvent>& events) {
  Json list = Json::array();
  for (const auto& e : events) list.push_back(to_json(e));
  Json j;
  j["events"] = std::move(list);
  return j;
}

Json to_json(const SupportOptions& o) {
  Json j;
  j["cell"] = o.cell;
  j["dilation"] = o.dilation;
  j["max_hole_cells"] = o.max_hole_cells;
  return j;
}

SupportOptions support_options_from_json(const Json& j) {
  SupportOptions o;
  o.cell = j.value("cell", o.cell);
  o.dilation = j.value("dilation", o.dilation);
  o.max_hole_cells = j.value("max_hole_cells", o.max_hole_cells);
  if (!(o.cell > 0.0) || o.dilation < 0) throw InvalidArgument("invalid support options");
  return o;
}

SessionLogWriter::SessionLogWriter(const std::filesystem::path& path) : path_(path) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) {
    throw Error("cannot open session log " + path.string() + ": " + std::strerror(errno));
  }
}

SessionLogWriter::~SessionLogWriter() {
  if (file_) std::fclose(file_);
}

void SessionLogWriter::write(const Json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
    throw Error("cannot write session log " + path_.string());
  }
}

Json snapshot_record(const SegmentationSnapshot& snapshot, std::uint64_t tick,
                     const SegmentationSnapshot* previous) {
  Json r;
  r["type"] = "snapshot";
  r["tick"] = tick;
  const Json body = to_json(snapshot);
  for (auto& [key, value] : body.items()) r[key] = value;
  if (previous && previous->object_inliers == snapshot.object_inliers) {
    r["oi"] = Json{{"same_as", previous->t}};
  }
  return r;
}

Json cloud_record(const CloudSource& source) {
  Json r;
  r["type"] = "cloud";
  if (source.inline_ply.empty()) {
    r["source"] = "path";
    r["path"] = source.path;
  } else {
    r["source"] = "inline";
    r["ply"] = source.inline_ply;
  }
  r["points"] = source.points;
  r["hash"] = hex64(source.hash);
  return r;
}

SessionLog parse_session_log(const std::string& text) {
  SessionLog log;
  std::map<std::uint64_t, std::shared_ptr<const PointIndexSet>> oi_by_t;
  std::size_t line_no = 0;
  std::size_t last_valid = 0;
  std::string last_type = "none";
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    const bool terminated = end != std::string::npos;
    if (!terminated) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      if (!terminated) throw InvalidArgument("record is not newline-terminated");
      const Json r = Json::parse(line);
      apply_record(log, r, oi_by_t);
      last_type = r.at("type").get<std::string>();
    } catch (const std::exception& e) {
      std::string where = last_valid == 0 ? std::string("no valid record")
                                          : "last valid record is line " +
                                                std::to_string(last_valid) + " (" + last_type + ")";
      throw LogError("session log line " + std::to_string(line_no) + " is truncated or invalid (" +
                         e.what() + "); " + where,
                     last_valid);
    }
    last_valid = line_no;
  }
  if (log.records == 0) throw LogError("session log is empty", 0);
  return log;
}

SessionLog load_session_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open session log " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_session_log(text.str());
}

PointCloud load_log_cloud(const SessionLog& log) {
  if (!log.cloud) throw Error("session log has no cloud");
  PointCloud cloud =
      log.cloud->inline_ply.empty() ? load_ply(log.cloud->path) : parse_ply(log.cloud->inline_ply);
  if (cloud_hash(cloud) != log.cloud->hash) {
    throw Error("cloud does not match the hash recorded in the session log");
  }
  return cloud;
}

ReplayResult replay_session(const SessionLog& log, const PointCloud& cloud) {
  if (log.snapshots.empty()) throw Error("no model");
  const std::uint64_t stop_tick = log.stop_tick ? *log.stop_tick : log.snapshot_ticks.back() + 1;
  const SessionRun run = run_session(cloud, log.config, log.events, stop_after(stop_tick));

  ReplayResult out{run.last, false, std::nullopt, std::nullopt, false};
  out.snapshot_matches = to_json(run.last).dump() == to_json(log.snapshots.back()).dump();
  if (!log.stop_tick) return out;

  const SurfacePatch base = build_patch(run.last.model, cloud, *run.last.object_inliers, log.support);
  std::vector<CropEdit> applied;
  SurfacePatch patch = base;
  for (const EditOp& op : log.edits) {
    if (op.kind == EditOp::Kind::Crop) {
      CropResult r = apply_crop(patch, op.edit);
      patch = std::move(r.patch);
      applied = patch.edits;
    } else {
      applied.resize(std::min(op.keep, applied.size()));
      patch = base;
      for (const CropEdit& e : applied) patch = apply_crop(patch, e).patch;
    }
  }
  out.patch = patch;
  if (log.plan) {
    out.trajectory = plan_coverage(patch, *log.plan);
    out.trajectory_matches =
        log.trajectory && to_json(*out.trajectory).dump() == to_json(*log.trajectory).dump();
  }
  return out;
}

}  // namespace contactseg
