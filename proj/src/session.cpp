#include "contactseg/session.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

namespace contactseg {

namespace {

using Clock = std::chrono::steady_clock;

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const char* code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  const char* code() const noexcept { return code_; }

 private:
  const char* code_;
};

[[noreturn]] void fail(const char* code, const std::string& message) {
  throw ProtocolError(code, message);
}

std::string new_uuid() {
  static std::mutex mutex;
  static std::mt19937_64 gen{std::random_device{}() ^
                             static_cast<std::uint64_t>(Clock::now().time_since_epoch().count())};
  std::uint64_t hi, lo;
  {
    std::lock_guard lock(mutex);
    hi = gen();
    lo = gen();
  }
  hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-%04llx-%04llx-%012llx",
                static_cast<unsigned long long>(hi >> 32),
                static_cast<unsigned long long>((hi >> 16) & 0xffff),
                static_cast<unsigned long long>(hi & 0xffff),
                static_cast<unsigned long long>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xffffffffffffULL));
  return buf;
}

std::vector<Vec3> positions_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) fail(error_code::kBadPayload, "positions must be a non-empty array");
  std::vector<Vec3> out;
  out.reserve(j.size());
  for (const auto& p : j) {
    Vec3 v = vec_from_json(p);
    if (!v.allFinite()) fail(error_code::kBadPayload, "positions must be finite");
    out.push_back(v);
  }
  return out;
}

void require_phase(Phase actual, std::initializer_list<Phase> allowed, const char* what) {
  for (Phase p : allowed) {
    if (p == actual) return;
  }
  fail(error_code::kPhase, std::string(what) + " is not allowed in phase " + to_string(actual));
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Loading: return "loading";
    case Phase::Segmenting: return "segmenting";
    case Phase::Editing: return "editing";
    case Phase::Planning: return "planning";
    case Phase::Done: return "done";
  }
  return "?";
}

std::string trajectory_artifact(const Trajectory& trajectory, const std::string& format) {
  if (format == "json") return to_json(trajectory).dump(2) + "\n";
  if (format == "csv") return trajectory_csv(trajectory);
  throw InvalidArgument("unknown export format '" + format + "'");
}

Json mesh_to_json(const Mesh& mesh) {
  Json j;
  Json v = Json::array();
  for (const auto& p : mesh.vertices) v.push_back(vec_to_json(p));
  Json n = Json::array();
  for (const auto& p : mesh.normals) n.push_back(vec_to_json(p));
  Json t = Json::array();
  for (const auto& f : mesh.triangles) t.push_back(Json::array({f[0], f[1], f[2]}));
  j["vertices"] = std::move(v);
  j["normals"] = std::move(n);
  j["triangles"] = std::move(t);
  return j;
}

namespace {

Json patch_payload(const std::string& session, const SurfacePatch& patch) {
  Json p;
  p["session"] = session;
  p["patch"] = to_json(patch);
  p["mesh"] = mesh_to_json(patch.mesh);
  p["hash"] = patch_hash(patch);
  return p;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

struct Service::Connection {
  ConnectionId id = 0;
  MessageSink sink;
  std::mutex receive_mutex;
  std::optional<std::uint64_t> last_seq;
  std::string session;

  std::mutex send_mutex;
  std::uint64_t out_seq = 0;
  bool open = true;

  std::mutex throttle_mutex;
  std::optional<std::pair<SegmentationSnapshot, std::uint64_t>> pending;
  std::string pending_session;
  Clock::time_point last_snapshot{};

  void send(const std::string& kind, const Json& payload) {
    std::lock_guard lock(send_mutex);
    if (!open) return;
    Json m;
    m["kind"] = kind;
    m["seq"] = ++out_seq;
    m["payload"] = payload;
    try {
      sink(m.dump());
    } catch (const std::exception&) {
      open = false;
    }
  }

  void send_snapshot(const std::string& session_id, const SegmentationSnapshot& s,
                     std::uint64_t tick) {
    Json p;
    p["session"] = session_id;
    p["tick"] = tick;
    p["snapshot"] = to_json(s);
    send("snapshot", p);
  }
};

struct Service::Session {
  std::string id;
  std::mutex mutex;
  Phase phase = Phase::Loading;
  SegmentationConfig config;
  SupportOptions support;
  std::shared_ptr<const PointCloud> cloud;
  std::unique_ptr<SpatialIndex> index;
  std::unique_ptr<Engine> engine;
  std::size_t batches = 0;
  bool any_cp = false;
  std::optional<SurfacePatch> base_patch;
  std::optional<SurfacePatch> patch;
  std::optional<Trajectory> trajectory;
  std::uint64_t next_edit_seq = 1;

  std::mutex log_mutex;
  std::unique_ptr<SessionLogWriter> log;

  std::mutex worker_mutex;
  std::condition_variable worker_cv;
  std::vector<CpEvent> pending;
  bool stop_requested = false;
  std::thread worker;
  ContactPointSet cps;
  std::uint64_t tick = 0;
  std::optional<SegmentationSnapshot> latest;
  std::uint64_t latest_tick = 0;
  std::optional<SegmentationSnapshot> logged;

  std::mutex members_mutex;
  std::vector<std::weak_ptr<Connection>> members;
  ConnectionId operator_id = 0;
};

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  options_.segmentation.validate();
  if (!options_.log_dir.empty()) std::filesystem::create_directories(options_.log_dir);
  pump_thread_ = std::thread([this] { pump(); });
}

Service::~Service() {
  {
    std::lock_guard lock(pump_mutex_);
    shutting_down_ = true;
  }
  pump_cv_.notify_all();
  pump_thread_.join();
  std::vector<std::shared_ptr<Session>> sessions;
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, s] : sessions_) sessions.push_back(s);
  }
  for (auto& s : sessions) stop_worker(*s);
}

std::size_t Service::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

ConnectionId Service::connect(MessageSink sink) {
  auto c = std::make_shared<Connection>();
  c->sink = std::move(sink);
  std::lock_guard lock(mutex_);
  c->id = next_connection_++;
  connections_[c->id] = c;
  return c->id;
}

void Service::disconnect(ConnectionId id) {
  std::shared_ptr<Connection> c;
  {
    std::lock_guard lock(mutex_);
    auto it = connections_.find(id);
    if (it == connections_.end()) return;
    c = it->second;
    connections_.erase(it);
  }
  {
    std::lock_guard lock(c->send_mutex);
    c->open = false;
  }
  std::lock_guard lock(c->receive_mutex);
  if (auto s = find_session(c->session)) {
    std::lock_guard m(s->members_mutex);
    if (s->operator_id == c->id) s->operator_id = 0;
  }
}

std::shared_ptr<Service::Connection> Service::find_connection(ConnectionId id) const {
  std::lock_guard lock(mutex_);
  auto it = connections_.find(id);
  return it == connections_.end() ? nullptr : it->second;
}

std::shared_ptr<Service::Session> Service::find_session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void Service::receive(ConnectionId id, const std::string& line) {
  auto conn = find_connection(id);
  if (!conn) return;
  std::lock_guard lock(conn->receive_mutex);

  auto error = [&](const char* code, const std::string& message, const Json& seq) {
    Json p;
    p["code"] = code;
    p["message"] = message;
    p["seq"] = seq;
    conn->send("error", p);
  };

  Json msg;
  try {
    msg = Json::parse(line);
  } catch (const std::exception& e) {
    error(error_code::kBadPayload, std::string("message is not JSON: ") + e.what(), nullptr);
    return;
  }
  if (!msg.is_object() || !msg.contains("seq") || !msg["seq"].is_number_unsigned()) {
    error(error_code::kBadPayload, "message needs a non-negative integer seq",
          msg.is_object() && msg.contains("seq") ? msg["seq"] : Json(nullptr));
    return;
  }
  const auto seq = msg["seq"].get<std::uint64_t>();
  if (conn->last_seq && seq <= *conn->last_seq) {
    error(error_code::kSeq,
          "seq " + std::to_string(seq) + " does not follow " + std::to_string(*conn->last_seq), seq);
    return;
  }
  conn->last_seq = seq;
  if (!msg.contains("kind") || !msg["kind"].is_string()) {
    error(error_code::kBadPayload, "message needs a string kind", seq);
    return;
  }
  const Json payload = msg.contains("payload") ? msg["payload"] : Json::object();
  if (!payload.is_object()) {
    error(error_code::kBadPayload, "payload must be an object", seq);
    return;
  }
  try {
    dispatch(*conn, msg["kind"].get<std::string>(), seq, payload);
  } catch (const ProtocolError& e) {
    error(e.code(), e.what(), seq);
  } catch (const nlohmann::json::exception& e) {
    error(error_code::kBadPayload, e.what(), seq);
  } catch (const InvalidArgument& e) {
    error(error_code::kBadPayload, e.what(), seq);
  } catch (const std::exception& e) {
    error(error_code::kInternal, e.what(), seq);
  }
}

void Service::dispatch(Connection& conn, const std::string& kind, std::uint64_t seq,
                       const Json& payload) {
  static const char* const kKinds[] = {
      "create_session", "resume_session", "load_cloud", "configure",
      "add_contact_points", "add_contact_click", "undo_contact_batch", "stop_segmentation",
      "crop", "truncate_edits", "plan", "export"};
  if (std::find(std::begin(kKinds), std::end(kKinds), kind) == std::end(kKinds)) {
    fail(error_code::kUnknownKind, "unknown message kind '" + kind + "'");
  }

  Json result;
  Deferred after;
  std::shared_ptr<Session> keep;
  if (kind == "create_session") {
    result = create_session(conn, payload);
  } else if (kind == "resume_session") {
    result = resume_session(conn, payload, after);
  } else {
    auto s = find_session(conn.session);
    if (!s) fail(error_code::kNoSession, "no session; send create_session or resume_session");
    {
      std::lock_guard m(s->members_mutex);
      if (s->operator_id != conn.id) fail(error_code::kRole, kind + " needs the operator role");
    }
    keep = s;
    std::lock_guard lock(s->mutex);
    if (kind == "load_cloud") result = load_cloud(*s, payload);
    else if (kind == "configure") result = configure(*s, payload);
    else if (kind == "add_contact_points") result = add_contact_points(*s, payload);
    else if (kind == "add_contact_click") result = add_contact_click(*s, payload);
    else if (kind == "undo_contact_batch") result = undo_contact_batch(*s);
    else if (kind == "stop_segmentation") result = stop_segmentation(*s, payload, after);
    else if (kind == "crop") result = crop(*s, payload, after);
    else if (kind == "truncate_edits") result = truncate_edits(*s, payload, after);
    else if (kind == "plan") result = plan(*s, payload, after);
    else result = export_artifact(*s, payload);
    result["phase"] = to_string(s->phase);
  }
  Json ack;
  ack["seq"] = seq;
  for (auto& [k, v] : result.items()) ack[k] = v;
  conn.send("ack", ack);
  for (auto& f : after) f();
}

void Service::log_record(Session& s, const Json& record) {
  std::lock_guard lock(s.log_mutex);
  if (s.log) s.log->write(record);
}

void Service::broadcast(Session& s, const std::string& kind, const Json& payload) {
  std::vector<std::shared_ptr<Connection>> members;
  {
    std::lock_guard lock(s.members_mutex);
    for (auto& w : s.members) {
      if (auto c = w.lock()) members.push_back(std::move(c));
    }
  }
  for (auto& c : members) c->send(kind, payload);
}

Json Service::create_session(Connection& conn, const Json& payload) {
  auto s = std::make_shared<Session>();
  s->id = new_uuid();
  s->config = options_.segmentation;
  s->support = options_.support;
  if (payload.contains("config")) s->config = config_from_json(payload["config"]);
  if (payload.contains("support")) s->support = support_options_from_json(payload["support"]);
  if (!options_.log_dir.empty()) {
    try {
      s->log = std::make_unique<SessionLogWriter>(options_.log_dir / (s->id + ".jsonl"));
    } catch (const Error& e) {
      fail(error_code::kIo, e.what());
    }
  }
  Json header;
  header["type"] = "session";
  header["id"] = s->id;
  header["version"] = 1;
  header["config"] = to_json(s->config);
  log_record(*s, header);

  if (auto old = find_session(conn.session)) {
    std::lock_guard m(old->members_mutex);
    if (old->operator_id == conn.id) old->operator_id = 0;
  }
  {
    std::lock_guard m(s->members_mutex);
    s->members.push_back(find_connection(conn.id));
    s->operator_id = conn.id;
  }
  conn.session = s->id;
  {
    std::lock_guard lock(mutex_);
    sessions_[s->id] = s;
  }
  Json r;
  r["session"] = s->id;
  r["role"] = "operator";
  r["phase"] = to_string(s->phase);
  if (s->log) r["log"] = s->log->path().string();
  return r;
}

Json Service::resume_session(Connection& conn, const Json& payload, Deferred& after) {
  const std::string id = payload.at("session").get<std::string>();
  auto s = find_session(id);
  if (!s) fail(error_code::kNoSession, "unknown session " + id);
  const std::string wanted = payload.value("role", std::string("operator"));
  if (wanted != "operator" && wanted != "observer") {
    fail(error_code::kBadPayload, "role must be operator or observer");
  }
  if (auto old = find_session(conn.session); old && old != s) {
    std::lock_guard m(old->members_mutex);
    if (old->operator_id == conn.id) old->operator_id = 0;
  }
  bool is_operator = false;
  {
    std::lock_guard m(s->members_mutex);
    if (wanted == "operator") {
      if (s->operator_id != 0 && s->operator_id != conn.id) {
        fail(error_code::kRole, "session already has an operator");
      }
      s->operator_id = conn.id;
      is_operator = true;
    } else if (s->operator_id == conn.id) {
      s->operator_id = 0;
    }
    bool present = false;
    for (auto& w : s->members) {
      if (auto c = w.lock(); c && c->id == conn.id) present = true;
    }
    if (!present) s->members.push_back(find_connection(conn.id));
  }
  conn.session = s->id;

  std::lock_guard lock(s->mutex);
  Json r;
  r["session"] = s->id;
  r["role"] = is_operator ? "operator" : "observer";
  r["phase"] = to_string(s->phase);
  r["config"] = to_json(s->config);
  r["cp_batches"] = s->batches;
  if (s->cloud) {
    r["points"] = s->cloud->size();
    r["hash"] = hex64(cloud_hash(*s->cloud));
  }
  // The latest state follows the ack so a client can rebuild its view.
  std::optional<SegmentationSnapshot> latest;
  std::uint64_t latest_tick = 0;
  {
    std::lock_guard w(s->worker_mutex);
    latest = s->latest;
    latest_tick = s->latest_tick;
  }
  std::optional<Json> patch = s->patch ? std::optional(patch_payload(s->id, *s->patch)) : std::nullopt;
  std::optional<Json> trajectory;
  if (s->trajectory) {
    Json p;
    p["session"] = s->id;
    p["trajectory"] = to_json(*s->trajectory);
    trajectory = std::move(p);
  }
  after.push_back([&conn, id = s->id, latest, latest_tick, patch, trajectory] {
    if (latest) {
      {
        std::lock_guard t(conn.throttle_mutex);
        conn.pending.reset();
        conn.last_snapshot = Clock::now();
      }
      conn.send_snapshot(id, *latest, latest_tick);
    }
    if (patch) conn.send("patch_update", *patch);
    if (trajectory) conn.send("trajectory", *trajectory);
  });
  return r;
}

Json Service::load_cloud(Session& s, const Json& payload) {
  require_phase(s.phase, {Phase::Loading}, "load_cloud");
  CloudSource source;
  PointCloud cloud;
  try {
    if (payload.contains("path")) {
      source.path = payload["path"].get<std::string>();
      cloud = load_ply(source.path);
    } else if (payload.contains("ply")) {
      source.inline_ply = payload["ply"].get<std::string>();
      cloud = parse_ply(source.inline_ply);
    } else {
      fail(error_code::kBadPayload, "load_cloud needs path or ply");
    }
  } catch (const InvalidArgument& e) {
    fail(error_code::kBadPayload, e.what());
  } catch (const ProtocolError&) {
    throw;
  } catch (const Error& e) {
    fail(error_code::kIo, e.what());
  }
  if (cloud.size() == 0) fail(error_code::kBadPayload, "cloud has no points");
  source.points = cloud.size();
  source.hash = cloud_hash(cloud);
  log_record(s, cloud_record(source));
  s.cloud = std::make_shared<const PointCloud>(std::move(cloud));
  s.index = std::make_unique<SpatialIndex>(*s.cloud, 0.01);
  s.phase = Phase::Segmenting;
  Json r;
  r["points"] = source.points;
  r["hash"] = hex64(source.hash);
  return r;
}

Json Service::configure(Session& s, const Json& payload) {
  require_phase(s.phase, {Phase::Loading, Phase::Segmenting}, "configure");
  if (s.any_cp) fail(error_code::kPhase, "configure is only allowed before the first contact point");
  Json merged = to_json(s.config);
  const Json& update = payload.contains("config") ? payload["config"] : payload;
  for (auto& [k, v] : update.items()) {
    if (!merged.contains(k)) fail(error_code::kBadPayload, "unknown config field '" + k + "'");
    merged[k] = v;
  }
  s.config = config_from_json(merged);
  if (payload.contains("support")) s.support = support_options_from_json(payload["support"]);
  Json rec;
  rec["type"] = "config";
  rec["config"] = to_json(s.config);
  log_record(s, rec);
  Json r;
  r["config"] = to_json(s.config);
  return r;
}

void Service::queue_event(Session& s, CpEvent event) {
  if (!s.engine) {
    s.engine = std::make_unique<Engine>(*s.cloud, s.config);
    s.any_cp = true;
  }
  {
    std::lock_guard lock(s.worker_mutex);
    s.pending.push_back(std::move(event));
  }
  s.worker_cv.notify_all();
  if (!s.worker.joinable()) start_worker(s);
}

Json Service::add_contact_points(Session& s, const Json& payload) {
  require_phase(s.phase, {Phase::Segmenting}, "add_contact_points");
  CpEvent e;
  e.op = CpEvent::Op::Add;
  e.positions = positions_from_json(payload.at("positions"));
  const std::string source = payload.value("source", std::string("selected"));
  if (source == "demonstrated") e.source = CpSource::Demonstrated;
  else if (source != "selected") fail(error_code::kBadPayload, "unknown source '" + source + "'");
  const std::size_t n = e.positions.size();
  queue_event(s, std::move(e));
  ++s.batches;
  Json r;
  r["added"] = n;
  r["cp_batches"] = s.batches;
  return r;
}

Json Service::add_contact_click(Session& s, const Json& payload) {
  require_phase(s.phase, {Phase::Segmenting}, "add_contact_click");
  std::uint32_t index = 0;
  if (payload.contains("ray")) {
    const Json& ray = payload["ray"];
    const Vec3 origin = vec_from_json(ray.at("origin"));
    const Vec3 direction = vec_from_json(ray.at("direction"));
    const double tolerance = payload.value("tolerance", 0.005);
    auto hit = pick_along_ray(*s.cloud, origin, direction, tolerance);
    if (!hit) fail(error_code::kMiss, "no point within tolerance of the ray");
    index = *hit;
  } else if (payload.contains("position")) {
    const Vec3 p = vec_from_json(payload["position"]);
    if (!p.allFinite()) fail(error_code::kBadPayload, "position must be finite");
    index = nearest_point(*s.index, p);
  } else {
    fail(error_code::kBadPayload, "add_contact_click needs ray or position");
  }
  CpEvent e;
  e.op = CpEvent::Op::Add;
  const Vec3 snapped = s.cloud->points()[index];
  e.positions = {snapped};
  queue_event(s, std::move(e));
  ++s.batches;
  Json r;
  r["index"] = index;
  r["position"] = vec_to_json(snapped);
  r["cp_batches"] = s.batches;
  return r;
}

Json Service::undo_contact_batch(Session& s) {
  require_phase(s.phase, {Phase::Segmenting}, "undo_contact_batch");
  if (s.batches == 0) fail(error_code::kPhase, "no contact batch to undo");
  CpEvent e;
  e.op = CpEvent::Op::Undo;
  queue_event(s, std::move(e));
  --s.batches;
  Json r;
  r["cp_batches"] = s.batches;
  return r;
}

void Service::start_worker(Session& s) {
  {
    std::lock_guard lock(s.worker_mutex);
    s.stop_requested = false;
  }
  s.worker = std::thread([this, ps = &s] { worker_loop(ps); });
}

void Service::stop_worker(Session& s) {
  {
    std::lock_guard lock(s.worker_mutex);
    s.stop_requested = true;
  }
  s.worker_cv.notify_all();
  if (s.worker.joinable()) s.worker.join();
}

void Service::worker_loop(Session* ps) {
  Session& s = *ps;
  bool waiting = false;
  try {
    while (true) {
      std::vector<CpEvent> events;
      bool stop = false;
      {
        std::unique_lock lock(s.worker_mutex);
        if (waiting) s.worker_cv.wait(lock, [&] { return !s.pending.empty() || s.stop_requested; });
        events.swap(s.pending);
        stop = s.stop_requested;
      }
      for (CpEvent& e : events) {
        e.at_tick = s.tick;
        if (e.op == CpEvent::Op::Add) {
          s.cps.add(e.positions, e.source);
        } else {
          s.cps.undo_last_batch();
        }
        Json rec;
        rec["type"] = "cp";
        rec["revision"] = s.cps.revision();
        const Json body = to_json(e);
        for (auto& [k, v] : body.items()) rec[k] = v;
        log_record(s, rec);
      }
      if (stop) break;
      const std::uint64_t tick = s.tick++;
      StepResult r = s.engine->step(s.cps);
      waiting = r.status == StepStatus::WaitingForInput;
      if (r.snapshot) publish_snapshot(s, *r.snapshot, tick);
    }
  } catch (const std::exception& e) {
    Json p;
    p["code"] = error_code::kInternal;
    p["message"] = std::string("segmentation worker failed: ") + e.what();
    p["seq"] = nullptr;
    broadcast(s, "error", p);
  }
}

void Service::publish_snapshot(Session& s, const SegmentationSnapshot& snapshot,
                               std::uint64_t tick) {
  log_record(s, snapshot_record(snapshot, tick, s.logged ? &*s.logged : nullptr));
  s.logged = snapshot;
  {
    std::lock_guard lock(s.worker_mutex);
    s.latest = snapshot;
    s.latest_tick = tick;
  }
  std::vector<std::shared_ptr<Connection>> members;
  {
    std::lock_guard lock(s.members_mutex);
    for (auto& w : s.members) {
      if (auto c = w.lock()) members.push_back(std::move(c));
    }
  }
  const auto now = Clock::now();
  for (auto& c : members) {
    bool send_now = false;
    {
      std::lock_guard lock(c->throttle_mutex);
      if (c->session != s.id) continue;
      if (!c->pending && now - c->last_snapshot >= options_.snapshot_interval) {
        c->last_snapshot = now;
        send_now = true;
      } else {
        c->pending.emplace(snapshot, tick);
        c->pending_session = s.id;
      }
    }
    if (send_now) c->send_snapshot(s.id, snapshot, tick);
  }
}

void Service::pump() {
  const auto period = std::max(options_.snapshot_interval / 10, std::chrono::milliseconds(1));
  std::unique_lock lock(pump_mutex_);
  while (!shutting_down_) {
    pump_cv_.wait_for(lock, period, [&] { return shutting_down_; });
    if (shutting_down_) break;
    lock.unlock();
    std::vector<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard g(mutex_);
      for (auto& [id, c] : connections_) conns.push_back(c);
    }
    const auto now = Clock::now();
    for (auto& c : conns) {
      std::optional<std::pair<SegmentationSnapshot, std::uint64_t>> due;
      std::string session;
      {
        std::lock_guard t(c->throttle_mutex);
        if (c->pending && now - c->last_snapshot >= options_.snapshot_interval) {
          due = std::move(c->pending);
          c->pending.reset();
          session = c->pending_session;
          c->last_snapshot = now;
        }
      }
      if (due) c->send_snapshot(session, due->first, due->second);
    }
    lock.lock();
  }
}

Json Service::stop_segmentation(Session& s, const Json& payload, Deferred& after) {
  require_phase(s.phase, {Phase::Segmenting}, "stop_segmentation");
  if (!s.engine) fail(error_code::kPhase, "no contact points yet");
  SupportOptions support = s.support;
  if (payload.contains("support")) support = support_options_from_json(payload["support"]);
  stop_worker(s);
  const auto& best = s.engine->best();
  auto resume = [&](const char* code, const std::string& message) {
    start_worker(s);
    fail(code, message);
  };
  if (!best) resume(error_code::kPhase, "no snapshot yet");
  if (best->kind == ShapeKind::Line || best->kind == ShapeKind::Sphere) {
    resume(error_code::kModel, "best model is a " + std::string(to_string(best->kind)) +
                                   ", which has no patch parametrisation; segmentation continues");
  }
  std::optional<SurfacePatch> built;
  try {
    built.emplace(build_patch(best->model, *s.cloud, *best->object_inliers, support));
  } catch (const InvalidArgument& e) {
    resume(error_code::kModel, std::string(e.what()) + "; segmentation continues");
  }
  s.support = support;
  Json rec;
  rec["type"] = "stop";
  rec["tick"] = s.tick;
  rec["support"] = to_json(support);
  log_record(s, rec);
  s.base_patch = built;
  s.patch = std::move(built);
  s.phase = Phase::Editing;

  after.push_back([this, &s, p = patch_payload(s.id, *s.patch)] { broadcast(s, "patch_update", p); });

  Json r;
  r["tick"] = s.tick;
  r["t"] = best->t;
  r["kind"] = to_string(best->kind);
  r["score"] = best->score;
  r["hash"] = patch_hash(*s.patch);
  return r;
}

Json Service::crop(Session& s, const Json& payload, Deferred& after) {
  require_phase(s.phase, {Phase::Editing, Phase::Planning}, "crop");
  CropEdit edit;
  if (payload.contains("polygon")) {
    for (const auto& p : payload["polygon"]) edit.polygon.push_back(vec2_from_json(p));
  }
  if (payload.contains("cells")) {
    for (const auto& c : payload["cells"]) edit.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  }
  if (edit.polygon.empty() && edit.cells.empty()) {
    fail(error_code::kBadPayload, "crop needs a polygon or cells");
  }
  edit.seq = s.next_edit_seq;
  CropResult result = apply_crop(*s.patch, edit);
  ++s.next_edit_seq;
  Json rec;
  rec["type"] = "crop";
  rec["edit"] = to_json(edit);
  rec["status"] = to_string(result.status);
  rec["cleared"] = result.cleared;
  log_record(s, rec);
  s.patch = std::move(result.patch);
  if (s.phase == Phase::Planning) {
    s.trajectory.reset();
    s.phase = Phase::Editing;
  }
  after.push_back([this, &s, p = patch_payload(s.id, *s.patch)] { broadcast(s, "patch_update", p); });
  Json r;
  r["edit"] = edit.seq;
  r["status"] = to_string(result.status);
  r["cleared"] = result.cleared;
  r["edits"] = s.patch->edits.size();
  return r;
}

Json Service::truncate_edits(Session& s, const Json& payload, Deferred& after) {
  require_phase(s.phase, {Phase::Editing, Phase::Planning}, "truncate_edits");
  const auto keep = payload.at("keep").get<std::size_t>();
  if (keep > s.patch->edits.size()) {
    fail(error_code::kBadPayload, "keep exceeds the " + std::to_string(s.patch->edits.size()) +
                                      " applied edits");
  }
  std::vector<CropEdit> kept(s.patch->edits.begin(), s.patch->edits.begin() + keep);
  SurfacePatch patch = *s.base_patch;
  for (const CropEdit& e : kept) patch = apply_crop(patch, e).patch;
  Json rec;
  rec["type"] = "truncate";
  rec["keep"] = keep;
  log_record(s, rec);
  s.patch = std::move(patch);
  if (s.phase == Phase::Planning) {
    s.trajectory.reset();
    s.phase = Phase::Editing;
  }
  after.push_back([this, &s, p = patch_payload(s.id, *s.patch)] { broadcast(s, "patch_update", p); });
  Json r;
  r["edits"] = s.patch->edits.size();
  return r;
}

Json Service::plan(Session& s, const Json& payload, Deferred& after) {
  require_phase(s.phase, {Phase::Editing, Phase::Planning}, "plan");
  const CoverageConfig config =
      coverage_config_from_json(payload.contains("config") ? payload["config"] : Json::object());
  Trajectory trajectory = plan_coverage(*s.patch, config);
  Json rec;
  rec["type"] = "plan";
  rec["config"] = to_json(config);
  rec["patch_hash"] = patch_hash(*s.patch);
  log_record(s, rec);
  Json trec;
  trec["type"] = "trajectory";
  trec["trajectory"] = to_json(trajectory);
  log_record(s, trec);
  s.trajectory = std::move(trajectory);
  s.phase = Phase::Planning;
  Json p;
  p["session"] = s.id;
  p["trajectory"] = to_json(*s.trajectory);
  after.push_back([this, &s, p] { broadcast(s, "trajectory", p); });
  Json r;
  r["poses"] = s.trajectory->poses.size();
  r["lane_count"] = s.trajectory->lane_count;
  r["contact_length"] = s.trajectory->contact_length;
  return r;
}

Json Service::export_artifact(Session& s, const Json& payload) {
  const std::string target = payload.at("target").get<std::string>();
  const std::string artifact = payload.value("artifact", std::string("trajectory"));
  const std::string format = payload.value("format", std::string("json"));
  std::string text;
  if (artifact == "trajectory") {
    require_phase(s.phase, {Phase::Planning, Phase::Done}, "export of a trajectory");
    if (format != "json" && format != "csv") fail(error_code::kBadPayload, "format must be json or csv");
    text = trajectory_artifact(*s.trajectory, format);
  } else if (artifact == "patch") {
    require_phase(s.phase, {Phase::Editing, Phase::Planning, Phase::Done}, "export of a patch");
    if (format == "json") text = to_json(*s.patch).dump(2) + "\n";
    else if (format == "ply") text = format_mesh_ply(s.patch->mesh);
    else fail(error_code::kBadPayload, "patch format must be json or ply");
  } else {
    fail(error_code::kBadPayload, "artifact must be trajectory or patch");
  }
  {
    std::ofstream out(target, std::ios::binary);
    out << text;
    if (!out) fail(error_code::kIo, "cannot write " + target);
  }
  Json rec;
  rec["type"] = "export";
  rec["target"] = target;
  rec["artifact"] = artifact;
  rec["format"] = format;
  log_record(s, rec);
  if (artifact == "trajectory") s.phase = Phase::Done;
  Json r;
  r["target"] = target;
  r["bytes"] = text.size();
  return r;
}

}  // namespace contactseg
