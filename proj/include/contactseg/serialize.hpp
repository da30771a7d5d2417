#pragma once

// JSON forms of models, configurations and snapshots. Objects use a fixed
// field order; doubles are written in shortest round-trip form, so a value
// read back compares equal to the value written.

#include "contactseg/segmentation.hpp"

#include <json.hpp>

namespace contactseg {

using Json = nlohmann::ordered_json;

Json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const Json& j);
Json vec2_to_json(const Vec2& v);
Vec2 vec2_from_json(const Json& j);

Json to_json(const PcaFrame& frame);
PcaFrame frame_from_json(const Json& j);

/// {kind, complexity, params}. Params per kind:
///   line   {point, direction}
///   plane  {normal, offset, frame}
///   sphere {center, radius}
///   poly2/poly3 {frame, coefficients}
Json to_json(const ShapeModel& model);
ShapeModel model_from_json(const Json& j);

/// Run-length form: [[start, len], ...] over strictly increasing indices.
Json rle_to_json(const PointIndexSet& set);
PointIndexSet rle_from_json(const Json& j);

/// {tau, complexity: {kind: d_m}, sample_size, rng_seed, kinds_enabled}.
Json to_json(const SegmentationConfig& config);
/// Missing fields keep their defaults; the result is validated.
SegmentationConfig config_from_json(const Json& j);

/// {t, cp_revision, kind, model, score, op_count, cp_count, oi: RLE, ci: list}
Json to_json(const SegmentationSnapshot& snapshot);
SegmentationSnapshot snapshot_from_json(const Json& j);

/// Reads a whole file as JSON; I/O and syntax failures raise Error.
Json read_json_file(const std::filesystem::path& path);
/// Writes `j.dump(indent)` plus a trailing newline.
void write_json_file(const Json& j, const std::filesystem::path& path, int indent = 2);

}  // namespace contactseg
