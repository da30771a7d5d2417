#pragma once

// Contact-point guided segmentation: a user-terminated RANSAC loop that
// samples from the contact points, lets every primitive kind compete on the
// combined object/contact inlier score, and publishes per-iteration
// snapshots of the best model.

#include "contactseg/cloud.hpp"
#include "contactseg/primitives.hpp"
#include "contactseg/simd/residual_kernels.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace contactseg {

struct SegmentationConfig {
  double tau = 0.002;
  std::array<double, 5> complexity = {1.0, 2.0, 2.0, 2.5, 3.0};
  std::size_t sample_size = 12;
  std::uint64_t rng_seed = 0;
  std::vector<ShapeKind> kinds_enabled{kAllKinds.begin(), kAllKinds.end()};

  double complexity_of(ShapeKind k) const {
    return complexity[static_cast<std::size_t>(k)];
  }
  bool enabled(ShapeKind k) const;
  /// Smallest MinSampleTable entry over the enabled kinds.
  std::size_t min_enabled_sample() const;
  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

enum class CpSource { Selected, Demonstrated };

/// Time-varying contact points. Every mutation bumps the revision by one.
class ContactPointSet {
 public:
  std::size_t size() const noexcept { return positions_.size(); }
  bool empty() const noexcept { return positions_.empty(); }
  std::uint64_t revision() const noexcept { return revision_; }
  std::span<const Vec3> positions() const noexcept { return positions_; }
  std::span<const CpSource> sources() const noexcept { return sources_; }
  const PointBlock& block() const noexcept { return block_; }
  std::size_t batch_count() const noexcept { return batch_ends_.size(); }

  /// Appends one batch (one revision).
  void add(std::span<const Vec3> positions, CpSource source = CpSource::Selected);
  /// Removes the most recent batch (one revision). Throws if none.
  void undo_last_batch();

 private:
  std::vector<Vec3> positions_;
  std::vector<CpSource> sources_;
  std::vector<std::size_t> batch_ends_;
  std::uint64_t revision_ = 0;
  PointBlock block_;
};

struct SegmentationSnapshot {
  std::uint64_t t = 0;
  ShapeKind kind = ShapeKind::Plane;
  ShapeModel model;
  double score = 0.0;
  std::shared_ptr<const PointIndexSet> object_inliers;
  std::shared_ptr<const PointIndexSet> contact_inliers;
  std::uint64_t cp_revision = 0;
  std::size_t op_count = 0;
  std::size_t cp_count = 0;
};

/// ((oi / op) + (ci / cp)) / d_m
double score(std::size_t oi_count, std::size_t op_count, std::size_t ci_count,
             std::size_t cp_count, double d_m);

struct InlierSets {
  PointIndexSet object;
  PointIndexSet contact;
};

/// Indices with error < tau over the cloud and over the contact points.
InlierSets classify_inliers(const ShapeModel& model, const PointCloud& cloud,
                            const ContactPointSet& cps, double tau,
                            simd::Isa isa = simd::active_isa());

/// Indices of `block` with error < tau.
PointIndexSet classify_block(const ShapeModel& model, const PointBlock& block,
                             double tau, simd::Isa isa = simd::active_isa());

enum class SampleSource {
  ContactPoints,  // guided: S drawn from CP, object and contact terms
  ObjectPoints,   // classical baseline: S drawn from OP, object term only
};

enum class StepStatus { Snapshot, WaitingForInput, NoCandidate };

struct StepResult {
  StepStatus status = StepStatus::WaitingForInput;
  std::optional<SegmentationSnapshot> snapshot;
};

/// Draws k distinct indices from [0, n) (Floyd's algorithm), in draw order.
std::vector<std::uint32_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                      std::size_t k);

/// Mutable state of one segmentation run over a fixed cloud.
class Engine {
 public:
  Engine(const PointCloud& cloud, SegmentationConfig config,
         SampleSource source = SampleSource::ContactPoints,
         simd::Isa isa = simd::active_isa());

  /// One full iteration against the current contact points.
  StepResult step(const ContactPointSet& cps);

  const SegmentationConfig& config() const noexcept { return config_; }
  const PointCloud& cloud() const noexcept { return *cloud_; }
  std::uint64_t iteration() const noexcept { return t_; }
  const std::optional<SegmentationSnapshot>& best() const noexcept { return best_; }

 private:
  struct Candidate {
    ShapeModel model;
    std::shared_ptr<const PointIndexSet> oi;
    std::shared_ptr<const PointIndexSet> ci;
    double score;
  };

  Candidate evaluate(ShapeModel model, const ContactPointSet& cps);
  double candidate_score(std::size_t oi, std::size_t ci, std::size_t cp,
                         double d_m) const;

  const PointCloud* cloud_;
  SegmentationConfig config_;
  SampleSource source_;
  simd::Isa isa_;
  Rng rng_;
  std::uint64_t t_ = 0;
  std::optional<SegmentationSnapshot> best_;
  std::vector<std::uint32_t> scratch_;
};

/// A contact-point mutation folded in before loop tick `at_tick`.
struct CpEvent {
  enum class Op { Add, Undo };
  std::uint64_t at_tick = 0;
  Op op = Op::Add;
  std::vector<Vec3> positions;
  CpSource source = CpSource::Selected;
};

struct SessionRun {
  SegmentationSnapshot last;
  std::vector<SegmentationSnapshot> history;
  std::uint64_t ticks = 0;
};

/// Called before every loop tick; returning true ends the session.
using StopSignal = std::function<bool(std::uint64_t tick,
                                      const std::optional<SegmentationSnapshot>&)>;

/// Loops step() until `stop` fires, applying each event at its tick.
/// Throws Error("no model") if no snapshot was produced.
SessionRun run_session(const PointCloud& cloud, const SegmentationConfig& config,
                       std::span<const CpEvent> events, const StopSignal& stop);

/// Stop after exactly `ticks` loop iterations.
StopSignal stop_after(std::uint64_t ticks);

}  // namespace contactseg
