#pragma once

// Session logs: one JSON record per line, appended as the session runs, and
// the replay that re-derives the final snapshot, patch and trajectory from
// them.
//
// Record types, in the order they can appear:
//   session    {id, version, config}                first record
//   config     {config}                              reconfiguration before any CP
//   cloud      {source: "path" | "inline", path?, ply?, points, hash}
//   cp         {tick, op: "add" | "undo", revision, positions?, source?}
//   snapshot   {tick, <snapshot fields>}             oi may be {"same_as": t}
//   stop       {tick, support: {cell, dilation, max_hole_cells}}
//   crop       {edit: {seq, polygon, cells}, status, cleared}
//   truncate   {keep}
//   plan       {config, patch_hash}
//   trajectory {trajectory}
//   export     {target, format}

#include "contactseg/coverage.hpp"
#include "contactseg/segmentation.hpp"
#include "contactseg/serialize.hpp"
#include "contactseg/surface.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace contactseg {

/// Raised for unreadable or truncated logs.
class LogError : public Error {
 public:
  LogError(const std::string& message, std::size_t last_valid_line)
      : Error(message), last_valid_line_(last_valid_line) {}
  /// 1-based line of the last record that parsed; 0 when none did.
  std::size_t last_valid_line() const noexcept { return last_valid_line_; }

 private:
  std::size_t last_valid_line_;
};

/// Appends records as single lines and flushes after each one.
class SessionLogWriter {
 public:
  explicit SessionLogWriter(const std::filesystem::path& path);
  ~SessionLogWriter();
  SessionLogWriter(const SessionLogWriter&) = delete;
  SessionLogWriter& operator=(const SessionLogWriter&) = delete;

  void write(const Json& record);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
};

/// Snapshot record; the object inliers are written as a reference when they
/// are the same set as in `previous`.
Json snapshot_record(const SegmentationSnapshot& snapshot, std::uint64_t tick,
                     const SegmentationSnapshot* previous);

struct CloudSource {
  std::string path;
  /// PLY text when the cloud was sent inline.
  std::string inline_ply;
  std::size_t points = 0;
  std::uint64_t hash = 0;
};

Json cloud_record(const CloudSource& source);

/// Contact-point events in the form of the log's cp records:
/// {tick, op: "add" | "undo", positions?, source?}.
Json to_json(const CpEvent& event);
CpEvent cp_event_from_json(const Json& j);
/// Accepts a bare array of positions (one batch at tick 0), an array of
/// event objects, or {"events": [...]}. Events must be ordered by tick.
std::vector<CpEvent> cp_events_from_json(const Json& j);
Json cp_events_to_json(const std::vector<CpEvent>& events);

Json to_json(const SupportOptions& options);
SupportOptions support_options_from_json(const Json& j);

struct EditOp {
  enum class Kind { Crop, Truncate };
  Kind kind = Kind::Crop;
  CropEdit edit;
  std::size_t keep = 0;
};

struct SessionLog {
  std::string id;
  SegmentationConfig config;
  std::optional<CloudSource> cloud;
  std::vector<CpEvent> events;
  std::vector<SegmentationSnapshot> snapshots;
  std::vector<std::uint64_t> snapshot_ticks;
  std::optional<std::uint64_t> stop_tick;
  SupportOptions support;
  std::vector<EditOp> edits;
  std::optional<CoverageConfig> plan;
  std::optional<Trajectory> trajectory;
  std::size_t records = 0;
};

/// Throws LogError naming the last valid record when a line does not parse.
SessionLog load_session_log(const std::filesystem::path& path);
SessionLog parse_session_log(const std::string& text);

/// The cloud a log refers to, checked against the recorded hash.
PointCloud load_log_cloud(const SessionLog& log);

struct ReplayResult {
  SegmentationSnapshot final_snapshot;
  /// Replayed final snapshot serialises to the same bytes as the logged one.
  bool snapshot_matches = false;
  std::optional<SurfacePatch> patch;
  std::optional<Trajectory> trajectory;
  /// Replayed trajectory serialises to the same bytes as the logged one.
  bool trajectory_matches = false;
};

/// Re-runs the engine with every CP event at its recorded tick, stops at the
/// recorded stop tick (or after the last logged snapshot), then re-applies
/// the edit log and the plan.
ReplayResult replay_session(const SessionLog& log, const PointCloud& cloud);

}  // namespace contactseg
