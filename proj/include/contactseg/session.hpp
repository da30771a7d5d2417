#pragma once

// Session host: a message-level service that owns segmentation sessions,
// runs one engine worker per session and fans results out to connections.
// Transport is separate (see server.hpp); a connection is any sink that
// accepts one serialised message per call.
//
// Every message is {kind, seq, payload}. Client seq must increase strictly
// per connection; the service numbers its own messages per connection from 1.
//
// Phases advance loading -> segmenting -> editing -> planning -> done.
// Editing needs a stopped session with a patch, planning needs a patch and
// done follows an export. Cropping while planning returns to editing.

#include "contactseg/coverage.hpp"
#include "contactseg/segmentation.hpp"
#include "contactseg/serialize.hpp"
#include "contactseg/session_log.hpp"
#include "contactseg/surface.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace contactseg {

enum class Phase { Loading, Segmenting, Editing, Planning, Done };

const char* to_string(Phase phase);

/// Error codes carried by error messages.
namespace error_code {
inline constexpr const char* kPhase = "phase";
inline constexpr const char* kSeq = "seq";
inline constexpr const char* kUnknownKind = "unknown_kind";
inline constexpr const char* kBadPayload = "bad_payload";
inline constexpr const char* kRole = "role";
inline constexpr const char* kNoSession = "no_session";
inline constexpr const char* kMiss = "miss";
inline constexpr const char* kModel = "model";
inline constexpr const char* kIo = "io";
inline constexpr const char* kInternal = "internal";
}  // namespace error_code

struct ServiceOptions {
  /// Directory for session logs (<id>.jsonl); empty disables persistence.
  std::filesystem::path log_dir;
  /// Minimum spacing of snapshot messages per connection.
  std::chrono::milliseconds snapshot_interval{100};
  /// Default segmentation config of new sessions.
  SegmentationConfig segmentation;
  /// Default patch support options used by stop_segmentation.
  SupportOptions support;
};

/// Receives the serialised outgoing messages of one connection. Called with
/// the connection's send lock held, never concurrently for one connection.
using MessageSink = std::function<void(const std::string&)>;

using ConnectionId = std::uint64_t;

class Service {
 public:
  explicit Service(ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ConnectionId connect(MessageSink sink);
  /// Handles one client message; replies go to the connection's sink.
  void receive(ConnectionId connection, const std::string& line);
  /// Releases the connection's role; its session keeps running.
  void disconnect(ConnectionId connection);

  const ServiceOptions& options() const noexcept { return options_; }
  std::size_t session_count() const;

 private:
  struct Connection;
  struct Session;

  std::shared_ptr<Connection> find_connection(ConnectionId id) const;
  std::shared_ptr<Session> find_session(const std::string& id) const;
  void dispatch(Connection& conn, const std::string& kind, std::uint64_t seq,
                const Json& payload);
  void pump();

  /// Messages that must follow the ack of the message being handled.
  using Deferred = std::vector<std::function<void()>>;

  // Handlers return the ack payload or throw a protocol error.
  Json create_session(Connection& conn, const Json& payload);
  Json resume_session(Connection& conn, const Json& payload, Deferred& after);
  Json load_cloud(Session& s, const Json& payload);
  Json configure(Session& s, const Json& payload);
  Json add_contact_points(Session& s, const Json& payload);
  Json add_contact_click(Session& s, const Json& payload);
  Json undo_contact_batch(Session& s);
  Json stop_segmentation(Session& s, const Json& payload, Deferred& after);
  Json crop(Session& s, const Json& payload, Deferred& after);
  Json truncate_edits(Session& s, const Json& payload, Deferred& after);
  Json plan(Session& s, const Json& payload, Deferred& after);
  Json export_artifact(Session& s, const Json& payload);

  void queue_event(Session& s, CpEvent event);
  void start_worker(Session& s);
  void stop_worker(Session& s);
  void worker_loop(Session* s);
  void publish_snapshot(Session& s, const SegmentationSnapshot& snapshot, std::uint64_t tick);
  void broadcast(Session& s, const std::string& kind, const Json& payload);
  void log_record(Session& s, const Json& record);

  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::map<ConnectionId, std::shared_ptr<Connection>> connections_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  ConnectionId next_connection_ = 1;

  std::mutex pump_mutex_;
  std::condition_variable pump_cv_;
  bool shutting_down_ = false;
  std::thread pump_thread_;
};

/// The artifact text written by `export`, shared with the command-line tool:
/// "json" is the trajectory JSON indented by two spaces plus a newline,
/// "csv" is trajectory_csv.
std::string trajectory_artifact(const Trajectory& trajectory, const std::string& format);

/// {vertices, normals, triangles} of a patch mesh.
Json mesh_to_json(const Mesh& mesh);

}  // namespace contactseg
