// Headless front end: runs the same code paths as the session service.
//
// Exit status: 0 on success, 1 for input errors (bad flags, unreadable or
// invalid input files), 2 for internal errors.

#include "contactseg/coverage.hpp"
#include "contactseg/segmentation.hpp"
#include "contactseg/serialize.hpp"
#include "contactseg/server.hpp"
#include "contactseg/session.hpp"
#include "contactseg/session_log.hpp"
#include "contactseg/surface.hpp"
#include "contactseg/synth.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

using namespace contactseg;

namespace {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs `f`, reporting any failure as an input error about `what`.
template <class F>
auto input(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw InputError(what + ": " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Json read_json(const std::string& path) {
  const std::string text = read_text(path);
  return input(path, [&] { return Json::parse(text); });
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path);
}

/// CONTACTSEG_SEED wins over --seed.
std::optional<std::uint64_t> effective_seed(const std::optional<std::uint64_t>& flag) {
  if (const char* env = std::getenv("CONTACTSEG_SEED"); env && *env) {
    return input("CONTACTSEG_SEED", [&] {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument("not an integer");
      return v;
    });
  }
  return flag;
}

SegmentationConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  SegmentationConfig c;
  if (!path.empty()) c = input(path, [&] { return config_from_json(read_json(path)); });
  if (auto s = effective_seed(seed)) c.rng_seed = *s;
  return c;
}

PointCloud load_cloud(const std::string& path) {
  PointCloud cloud = input(path, [&] { return load_ply(path); });
  if (cloud.size() == 0) throw InputError(path + ": cloud has no points");
  return cloud;
}

std::string kind_name(ShapeKind k) { return std::string(to_string(k)); }

int run_segment(const std::string& cloud_path, const std::string& cp_path,
                const std::string& config_path, std::uint64_t steps,
                const std::optional<std::uint64_t>& seed, const std::string& out,
                const std::string& patch_out, const std::string& mesh_out,
                const std::string& support_path) {
  const SegmentationConfig config = load_config(config_path, seed);
  const PointCloud cloud = load_cloud(cloud_path);
  const auto events = input(cp_path, [&] { return cp_events_from_json(read_json(cp_path)); });
  SupportOptions support;
  if (!support_path.empty()) {
    support = input(support_path, [&] { return support_options_from_json(read_json(support_path)); });
  }

  const SessionRun run = run_session(cloud, config, events, stop_after(steps));
  Json transitions = Json::array();
  std::optional<ShapeKind> prev;
  for (const auto& s : run.history) {
    if (!prev || *prev != s.kind) {
      transitions.push_back(Json{{"t", s.t}, {"kind", kind_name(s.kind)}});
      prev = s.kind;
    }
  }
  Json j;
  j["ticks"] = run.ticks;
  j["snapshots"] = run.history.size();
  j["config"] = to_json(config);
  j["transitions"] = std::move(transitions);
  j["snapshot"] = to_json(run.last);
  write_json_file(j, out);
  std::cerr << "best model " << to_string(run.last.kind) << " score " << run.last.score
            << " after " << run.ticks << " ticks\n";

  if (!patch_out.empty() || !mesh_out.empty()) {
    const SurfacePatch patch = build_patch(run.last.model, cloud, *run.last.object_inliers, support);
    if (!patch_out.empty()) write_json_file(to_json(patch), patch_out);
    if (!mesh_out.empty()) write_text(mesh_out, format_mesh_ply(patch.mesh));
  }
  return 0;
}

int run_crop(const std::string& patch_path, const std::string& edits_path, const std::string& out) {
  SurfacePatch patch = input(patch_path, [&] { return patch_from_json(read_json(patch_path)); });
  const Json edits = read_json(edits_path);
  if (!edits.is_array()) throw InputError(edits_path + ": expected an array of edits");
  std::uint64_t seq = patch.edits.empty() ? 0 : patch.edits.back().seq;
  for (const auto& e : edits) {
    CropEdit edit = input(edits_path, [&] { return crop_edit_from_json(e); });
    if (!e.contains("seq")) edit.seq = seq + 1;
    seq = edit.seq;
    const CropResult r = input(edits_path, [&] { return apply_crop(patch, edit); });
    std::cerr << "edit " << edit.seq << ": " << to_string(r.status) << ", " << r.cleared
              << " cells cleared\n";
    patch = r.patch;
  }
  write_json_file(to_json(patch), out);
  return 0;
}

int run_plan(const std::string& patch_path, const std::string& config_path, const std::string& out,
             const std::string& format) {
  const SurfacePatch patch = input(patch_path, [&] { return patch_from_json(read_json(patch_path)); });
  CoverageConfig config;
  if (!config_path.empty()) {
    config = input(config_path, [&] { return coverage_config_from_json(read_json(config_path)); });
  }
  const Trajectory t = plan_coverage(patch, config);
  write_text(out, trajectory_artifact(t, format));
  std::cerr << t.poses.size() << " poses on " << t.lane_count << " lanes\n";
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& benchmark,
              const std::optional<std::uint64_t>& seed_flag, const std::string& out,
              const std::string& labels_out, const std::string& cp_out,
              const std::string& spec_out) {
  const auto seed = effective_seed(seed_flag);
  SceneSpec spec;
  std::optional<DemoPath> demo;
  if (!spec_path.empty()) {
    spec = input(spec_path, [&] { return scene_spec_from_json(read_json(spec_path)); });
    if (seed) spec.seed = *seed;
  } else {
    const std::uint64_t s = seed.value_or(0);
    if (benchmark == "composite") {
      spec = composite_benchmark(s);
      demo = composite_demo(s);
    } else if (benchmark == "two_plane") {
      spec = two_plane_benchmark(s);
    } else if (benchmark == "flat_to_curved") {
      spec = flat_to_curved_benchmark(s);
    } else {
      throw InputError("unknown benchmark '" + benchmark + "'");
    }
  }
  input("scene spec", [&] { spec.validate(); return 0; });
  const Scene scene = generate_scene(spec);
  save_ply(scene.cloud, out);
  if (!labels_out.empty()) write_json_file(Json(scene.labels), labels_out, -1);
  if (!spec_out.empty()) write_json_file(to_json(spec), spec_out);
  if (!cp_out.empty()) {
    if (!demo) throw InputError("--cp-out needs a benchmark with a demonstration");
    const DemoStream stream = simulate_demo(spec, *demo);
    write_json_file(cp_events_to_json(demo_events(stream, 0, 5)), cp_out);
  }
  std::cerr << scene.cloud.size() << " points\n";
  return 0;
}

int run_baseline(const std::string& cloud_path, const std::string& config_path,
                 std::size_t iterations, std::size_t min_inliers,
                 const std::optional<std::uint64_t>& seed, const std::string& out) {
  BaselineConfig config;
  config.segmentation = load_config(config_path, seed);
  config.max_iterations = iterations;
  config.min_inliers = min_inliers;
  const PointCloud cloud = load_cloud(cloud_path);
  const BaselineResult r = classical_ransac_baseline(cloud, config);
  Json j;
  j["kind"] = to_string(r.model.kind());
  j["model"] = to_json(r.model);
  j["score"] = r.score;
  j["iterations"] = r.iterations;
  j["inliers"] = r.inliers;
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(j, out);
  }
  return 0;
}

int run_replay(const std::string& log_path, const std::string& out,
               const std::string& trajectory_out) {
  const SessionLog log = input(log_path, [&] { return load_session_log(log_path); });
  const PointCloud cloud = input(log_path, [&] { return load_log_cloud(log); });
  const ReplayResult r = replay_session(log, cloud);
  if (!out.empty()) write_json_file(to_json(r.final_snapshot), out);
  if (!trajectory_out.empty() && r.trajectory) {
    write_text(trajectory_out, trajectory_artifact(*r.trajectory, "json"));
  }
  std::cerr << "final snapshot " << (r.snapshot_matches ? "matches" : "DIFFERS");
  if (log.trajectory) std::cerr << ", trajectory " << (r.trajectory_matches ? "matches" : "DIFFERS");
  std::cerr << '\n';
  const bool ok = r.snapshot_matches && (!log.trajectory || r.trajectory_matches);
  return ok ? 0 : 2;
}

volatile std::sig_atomic_t g_stop = 0;

int run_serve(const std::string& host, std::uint16_t port, const std::string& log_dir,
              const std::string& config_path, int interval_ms,
              const std::optional<std::uint64_t>& seed) {
  ServiceOptions options;
  options.log_dir = log_dir;
  options.segmentation = load_config(config_path, seed);
  options.snapshot_interval = std::chrono::milliseconds(interval_ms);
  Service service(options);
  TcpServer server(service, host, port);
  std::cerr << "listening on " << host << ":" << server.port() << std::endl;
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  server.start();
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contact-point guided segmentation and coverage planning"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string cloud, cp, config, out, patch_out, mesh_out, support, patch, edits, format = "json";
  std::string spec, benchmark, labels_out, cp_out, spec_out, log, trajectory_out;
  std::string host = "127.0.0.1", log_dir;
  std::uint64_t steps = 600;
  std::size_t iterations = 1000, min_inliers = 0;
  std::uint16_t port = 7878;
  int interval_ms = 100;

  auto* segment = app.add_subcommand("segment", "Run the guided segmentation loop");
  segment->add_option("--cloud", cloud, "Point cloud (PLY)")->required();
  segment->add_option("--cp", cp, "Contact points or contact-point events (JSON)")->required();
  segment->add_option("--config", config, "Segmentation config (JSON)");
  segment->add_option("--steps", steps, "Loop ticks to run")->check(CLI::PositiveNumber);
  segment->add_option("--seed", seed, "RNG seed");
  segment->add_option("--out", out, "Result (JSON)")->required();
  segment->add_option("--patch-out", patch_out, "Surface patch of the final model (JSON)");
  segment->add_option("--mesh-out", mesh_out, "Patch mesh (PLY)");
  segment->add_option("--support", support, "Patch support options (JSON)");

  auto* crop = app.add_subcommand("crop", "Apply crop edits to a patch");
  crop->add_option("--patch", patch, "Surface patch (JSON)")->required();
  crop->add_option("--edits", edits, "Array of {polygon} or {cells} edits (JSON)")->required();
  crop->add_option("--out", out, "Cropped patch (JSON)")->required();

  auto* plan = app.add_subcommand("plan", "Plan a coverage trajectory over a patch");
  plan->add_option("--patch", patch, "Surface patch (JSON)")->required();
  plan->add_option("--config", config, "Coverage config (JSON)");
  plan->add_option("--out", out, "Trajectory")->required();
  plan->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic scene");
  auto* spec_opt = synth->add_option("--spec", spec, "Scene spec (JSON)");
  synth->add_option("--benchmark", benchmark, "composite, two_plane or flat_to_curved")
      ->excludes(spec_opt);
  synth->add_option("--seed", seed, "Scene seed");
  synth->add_option("--out", out, "Point cloud (PLY)")->required();
  synth->add_option("--labels-out", labels_out, "Per-point patch labels (JSON)");
  synth->add_option("--cp-out", cp_out, "Demonstration contact-point events (JSON)");
  synth->add_option("--spec-out", spec_out, "Effective scene spec (JSON)");

  auto* baseline = app.add_subcommand("baseline", "Classical RANSAC over the object points");
  baseline->add_option("--cloud", cloud, "Point cloud (PLY)")->required();
  baseline->add_option("--config", config, "Segmentation config (JSON)");
  baseline->add_option("--iterations", iterations, "Iterations")->check(CLI::PositiveNumber);
  baseline->add_option("--min-inliers", min_inliers, "Fail below this many inliers");
  baseline->add_option("--seed", seed, "RNG seed");
  baseline->add_option("--out", out, "Result (JSON); stdout when omitted");

  auto* serve = app.add_subcommand("serve", "Run the session service over TCP");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port; 0 picks a free one");
  serve->add_option("--log-dir", log_dir, "Directory for session logs");
  serve->add_option("--config", config, "Default segmentation config (JSON)");
  serve->add_option("--snapshot-interval-ms", interval_ms, "Snapshot throttle per connection")
      ->check(CLI::NonNegativeNumber);
  serve->add_option("--seed", seed, "Default RNG seed");

  auto* replay = app.add_subcommand("replay", "Replay a session log and check the final state");
  replay->add_option("--log", log, "Session log (JSONL)")->required();
  replay->add_option("--out", out, "Replayed final snapshot (JSON)");
  replay->add_option("--trajectory-out", trajectory_out, "Replayed trajectory (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*segment) {
      return run_segment(cloud, cp, config, steps, seed, out, patch_out, mesh_out, support);
    }
    if (*crop) return run_crop(patch, edits, out);
    if (*plan) return run_plan(patch, config, out, format);
    if (*synth) {
      if (spec.empty() && benchmark.empty()) throw InputError("synth needs --spec or --benchmark");
      return run_synth(spec, benchmark, seed, out, labels_out, cp_out, spec_out);
    }
    if (*baseline) return run_baseline(cloud, config, iterations, min_inliers, seed, out);
    if (*serve) return run_serve(host, port, log_dir, config, interval_ms, seed);
    if (*replay) return run_replay(log, out, trajectory_out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
