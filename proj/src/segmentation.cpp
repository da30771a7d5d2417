#include "contactseg/segmentation.hpp"

#include <algorithm>
#include <unordered_set>

namespace contactseg {

bool SegmentationConfig::enabled(ShapeKind k) const {
  return std::find(kinds_enabled.begin(), kinds_enabled.end(), k) !=
         kinds_enabled.end();
}

std::size_t SegmentationConfig::min_enabled_sample() const {
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (ShapeKind k : kinds_enabled) m = std::min(m, min_sample_size(k));
  return m;
}

void SegmentationConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be > 0");
  for (double d : complexity) {
    if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument("D_M must be > 0");
  }
  if (kinds_enabled.empty()) throw InvalidArgument("no shape kinds enabled");
  std::size_t need = 0;
  for (ShapeKind k : kinds_enabled) need = std::max(need, min_sample_size(k));
  if (sample_size < need) {
    throw InvalidArgument("sample_size " + std::to_string(sample_size) +
                          " is below the largest enabled minimum " +
                          std::to_string(need));
  }
}

// ---------------------------------------------------------------------------

void ContactPointSet::add(std::span<const Vec3> positions, CpSource source) {
  for (const auto& p : positions) {
    if (!all_finite(p)) throw InvalidArgument("non-finite contact point");
  }
  positions_.insert(positions_.end(), positions.begin(), positions.end());
  sources_.insert(sources_.end(), positions.size(), source);
  batch_ends_.push_back(positions_.size());
  ++revision_;
  block_ = PointBlock::from(positions_);
}

void ContactPointSet::undo_last_batch() {
  if (batch_ends_.empty()) throw InvalidArgument("no contact batch to undo");
  batch_ends_.pop_back();
  const std::size_t keep = batch_ends_.empty() ? 0 : batch_ends_.back();
  positions_.resize(keep);
  sources_.resize(keep);
  ++revision_;
  block_ = PointBlock::from(positions_);
}

// ---------------------------------------------------------------------------

double score(std::size_t oi_count, std::size_t op_count, std::size_t ci_count,
             std::size_t cp_count, double d_m) {
  if (op_count == 0 || cp_count == 0) {
    throw InvalidArgument("score needs non-empty object and contact point sets");
  }
  if (!(d_m > 0.0)) throw InvalidArgument("D_M must be positive");
  if (oi_count > op_count || ci_count > cp_count) {
    throw InvalidArgument("inlier count exceeds point count");
  }
  const double object_ratio =
      static_cast<double>(oi_count) / static_cast<double>(op_count);
  const double contact_ratio =
      static_cast<double>(ci_count) / static_cast<double>(cp_count);
  return (object_ratio + contact_ratio) / d_m;
}

PointIndexSet classify_block(const ShapeModel& model, const PointBlock& block,
                             double tau, simd::Isa isa) {
  std::vector<std::uint32_t> idx(block.size());
  const auto prog = simd::compile(model);
  const std::size_t n = simd::classify(prog, block.x.data(), block.y.data(),
                                       block.z.data(), block.size(), tau,
                                       idx.data(), isa);
  idx.resize(n);
  return PointIndexSet::from_sorted(std::move(idx));
}

InlierSets classify_inliers(const ShapeModel& model, const PointCloud& cloud,
                            const ContactPointSet& cps, double tau,
                            simd::Isa isa) {
  return {classify_block(model, cloud.block(), tau, isa),
          classify_block(model, cps.block(), tau, isa)};
}

std::vector<std::uint32_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                      std::size_t k) {
  if (k > n) throw InvalidArgument("sample larger than population");
  std::vector<std::uint32_t> out;
  out.reserve(k);
  std::unordered_set<std::uint32_t> seen;
  for (std::size_t j = n - k; j < n; ++j) {
    auto t = static_cast<std::uint32_t>(rng.below(j + 1));
    if (!seen.insert(t).second) {
      t = static_cast<std::uint32_t>(j);
      seen.insert(t);
    }
    out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------

Engine::Engine(const PointCloud& cloud, SegmentationConfig config,
               SampleSource source, simd::Isa isa)
    : cloud_(&cloud),
      config_(std::move(config)),
      source_(source),
      isa_(isa),
      rng_(config_.rng_seed) {
  config_.validate();
  if (cloud.empty()) throw InvalidArgument("segmentation needs a non-empty cloud");
  scratch_.resize(cloud.size());
}

double Engine::candidate_score(std::size_t oi, std::size_t ci, std::size_t cp,
                               double d_m) const {
  if (source_ == SampleSource::ObjectPoints) {
    return (static_cast<double>(oi) / static_cast<double>(cloud_->size())) / d_m;
  }
  return score(oi, cloud_->size(), ci, cp, d_m);
}

Engine::Candidate Engine::evaluate(ShapeModel model, const ContactPointSet& cps) {
  const auto prog = simd::compile(model);
  const auto& b = cloud_->block();
  const std::size_t n = simd::classify(prog, b.x.data(), b.y.data(), b.z.data(),
                                       b.size(), config_.tau, scratch_.data(), isa_);
  auto oi = std::make_shared<const PointIndexSet>(PointIndexSet::from_sorted(
      std::vector<std::uint32_t>(scratch_.begin(), scratch_.begin() + n)));
  auto ci = std::make_shared<const PointIndexSet>(
      classify_block(model, cps.block(), config_.tau, isa_));
  const double s = candidate_score(oi->size(), ci->size(), cps.size(), model.complexity());
  return {std::move(model), std::move(oi), std::move(ci), s};
}

StepResult Engine::step(const ContactPointSet& cps) {
  const bool guided = source_ == SampleSource::ContactPoints;
  const std::size_t population = guided ? cps.size() : cloud_->size();
  const std::size_t k = std::min(config_.sample_size, population);
  if (k < config_.min_enabled_sample()) return {StepStatus::WaitingForInput, {}};
  if (guided && cps.empty()) return {StepStatus::WaitingForInput, {}};

  const auto picks = sample_without_replacement(rng_, population, k);
  std::vector<Vec3> sample;
  sample.reserve(k);
  const auto src = guided ? cps.positions() : cloud_->points();
  for (std::uint32_t i : picks) sample.push_back(src[i]);

  std::optional<Candidate> challenger;
  for (ShapeKind kind : kAllKinds) {
    if (!config_.enabled(kind) || min_sample_size(kind) > k) continue;
    std::optional<ShapeModel> model;
    try {
      model = fit(kind, sample, config_.complexity_of(kind));
    } catch (const DegenerateError&) {
      continue;
    }
    Candidate c = evaluate(std::move(*model), cps);
    if (!challenger || c.score > challenger->score ||
        (c.score == challenger->score &&
         c.model.complexity() < challenger->model.complexity())) {
      // Equal score and D_M keeps the earlier kind in Line..Poly3 order.
      challenger = std::move(c);
    }
  }

  // The incumbent's object inliers are fixed for the session cloud; only the
  // contact term moves with the CP revision.
  std::optional<Candidate> incumbent;
  if (best_) {
    auto ci = std::make_shared<const PointIndexSet>(
        classify_block(best_->model, cps.block(), config_.tau, isa_));
    const double s = candidate_score(best_->object_inliers->size(), ci->size(),
                                     cps.size(), best_->model.complexity());
    incumbent = Candidate{best_->model, best_->object_inliers, std::move(ci), s};
  }

  if (challenger && (!incumbent || challenger->score > incumbent->score)) {
    Candidate installed = *challenger;
    if (challenger->oi->size() >= min_sample_size(challenger->model.kind())) {
      std::vector<Vec3> support;
      support.reserve(challenger->oi->size());
      for (std::uint32_t i : *challenger->oi) support.push_back((*cloud_)[i]);
      try {
        Candidate refined = evaluate(refit(challenger->model, support), cps);
        if (refined.score >= challenger->score) installed = std::move(refined);
      } catch (const DegenerateError&) {
      }
    }
    incumbent = std::move(installed);
  }

  if (!incumbent) return {StepStatus::NoCandidate, {}};

  ++t_;
  best_ = SegmentationSnapshot{t_,
                               incumbent->model.kind(),
                               incumbent->model,
                               incumbent->score,
                               incumbent->oi,
                               incumbent->ci,
                               cps.revision(),
                               cloud_->size(),
                               cps.size()};
  return {StepStatus::Snapshot, best_};
}

// ---------------------------------------------------------------------------

SessionRun run_session(const PointCloud& cloud, const SegmentationConfig& config,
                       std::span<const CpEvent> events, const StopSignal& stop) {
  Engine engine(cloud, config);
  ContactPointSet cps;
  std::vector<SegmentationSnapshot> history;
  std::size_t next_event = 0;
  std::uint64_t tick = 0;
  while (!stop(tick, engine.best())) {
    while (next_event < events.size() && events[next_event].at_tick <= tick) {
      const CpEvent& e = events[next_event++];
      if (e.op == CpEvent::Op::Add) {
        cps.add(e.positions, e.source);
      } else {
        cps.undo_last_batch();
      }
    }
    StepResult r = engine.step(cps);
    if (r.snapshot) history.push_back(std::move(*r.snapshot));
    ++tick;
  }
  if (history.empty()) throw Error("no model");
  SegmentationSnapshot last = history.back();
  return {std::move(last), std::move(history), tick};
}

StopSignal stop_after(std::uint64_t ticks) {
  return [ticks](std::uint64_t tick, const std::optional<SegmentationSnapshot>&) {
    return tick >= ticks;
  };
}

}  // namespace contactseg
