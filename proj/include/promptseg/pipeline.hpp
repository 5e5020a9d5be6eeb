#pragma once

// The outer loop. Each iteration proposes candidates on the current image,
// mines the vocabulary with counterfactual scoring, segments the selected
// label, and dims everything outside the new mask before the next round.
// The final answer is the iteration mask closest to the mean of all of them.

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "promptseg/backends.hpp"
#include "promptseg/candidates.hpp"
#include "promptseg/core.hpp"
#include "promptseg/mask_generation.hpp"
#include "promptseg/negative_mining.hpp"
#include "promptseg/patching.hpp"

namespace promptseg {

/// [accumulate] carries every earlier candidate into later vocabularies;
/// [reset] scores only the current iteration's candidates.
enum class CandidatePolicy { accumulate, reset };

struct PipelineConfig {
  int iterations = 5;
  double blend_weight = 0.3;
  PatchScheme patch_scheme = PatchScheme::original_halve_quarters;
  std::string task_prompt;
  std::uint64_t seed = 0;
  std::string backend = "simulated";
  PromptTemplates templates;
  CandidatePolicy candidate_policy = CandidatePolicy::accumulate;
  bool clamp_negative = true;
  LedgerOptions ledger;
  double similarity_threshold = 0.05;
  AggregationMode aggregation = AggregationMode::coverage;
  int n_points = 1;
  /// Binarization level for turning the previous mask into an inpaint region.
  double region_threshold = kDefaultBinarizeThreshold;
  /// Wall-clock budget per image; zero disables the guard.
  double max_seconds = 0.0;

  void validate() const {
    if (iterations < 1) throw Error(Errc::invalid_argument, "iterations must be >= 1");
    if (!(blend_weight >= 0.0 && blend_weight <= 1.0)) {
      throw Error(Errc::invalid_argument, "blend_weight must be in [0,1]");
    }
    if (!(similarity_threshold >= 0.0 && similarity_threshold <= 1.0)) {
      throw Error(Errc::invalid_argument, "similarity_threshold must be in [0,1]");
    }
    if (n_points < 1) throw Error(Errc::invalid_argument, "n_points must be >= 1");
    if (!(region_threshold >= 0.0 && region_threshold < 1.0)) {
      throw Error(Errc::invalid_argument, "region_threshold must be in [0,1)");
    }
    if (!(ledger.floor >= 0.0 && ledger.floor < 1.0)) {
      throw Error(Errc::invalid_argument, "ledger_floor must be in [0,1)");
    }
    if (!(max_seconds >= 0.0)) throw Error(Errc::invalid_argument, "max_seconds must be >= 0");
  }
};

/// w (X * M) + (1 - w) X per pixel and channel, evaluated as X - w X (1 - M)
/// so that M = 1 leaves X bit-identical.
inline Image blend_image(const Image& image, const SoftMask& mask, double w) {
  require_same_size(image.size(), mask.size(), "blend_image");
  if (!(w >= 0.0 && w <= 1.0)) throw Error(Errc::invalid_argument, "blend_image: weight outside [0,1]");
  Image out = image;
  auto m = mask.values();
  auto px = out.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (int c = 0; c < Image::kChannels; ++c) {
      double& x = px[i * Image::kChannels + c];
      x -= w * x * (1.0 - m[i]);
    }
  }
  return out;
}

struct StageSkip {
  std::string stage;
  int patch_id = 0;
  std::string reason;
};

struct IterationRecord {
  int iteration = 1;
  Image input;
  CandidateSet candidates;  // vocabulary is the merged one that was scored
  std::vector<DiffVector> diffs;
  std::map<int, InpaintRegion::Provenance> provenance;  // patches that were inpainted
  LabelScores raw_scores;
  ScoreLedger ledger;
  Label selected;
  std::vector<PatchMaskRecord> mask_records;
  std::vector<StageSkip> skipped;
  SoftMask mask;
};

struct IterationState {
  int iteration = 1;
  Image image;
  ScoreLedger ledger;
  std::optional<CandidateSet> carry;
  std::optional<SoftMask> previous_mask;
};

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(Errc::stage, stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

using Clock = std::chrono::steady_clock;
using StageTimes = std::map<std::string, double>;

namespace detail {

class StageTimer {
 public:
  StageTimer(StageTimes* times, const char* stage) : times_(times), stage_(stage), start_(Clock::now()) {}
  ~StageTimer() {
    if (times_) (*times_)[stage_] += std::chrono::duration<double>(Clock::now() - start_).count();
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  StageTimes* times_;
  const char* stage_;
  Clock::time_point start_;
};

template <typename F>
auto run_stage(const char* stage, StageTimes* times, F&& f) {
  StageTimer timer(times, stage);
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline bool any_positive(const SoftMask& m) {
  for (double v : m.values())
    if (v > 0.0) return true;
  return false;
}

}  // namespace detail

/// One full iteration on [state]. Does not advance [state]; run_pipeline does.
inline IterationRecord run_iteration(const IterationState& state, const Backends& backends,
                                     const PipelineConfig& config, StageTimes* times = nullptr) {
  if (!backends.complete()) throw Error(Errc::invalid_argument, "run_iteration: incomplete backends");
  IterationRecord rec;
  rec.iteration = state.iteration;
  rec.input = state.image;
  const int it = state.iteration;

  const PatchSet patches = detail::run_stage("patching", times, [&] {
    return build_patch_set(state.image, config.patch_scheme);
  });

  const CandidateSet current = detail::run_stage("candidate_generation", times, [&] {
    return generate_candidates(patches, config.task_prompt, *backends.vlm, it, config.templates);
  });
  for (const auto& s : current.skipped) rec.skipped.push_back({"candidate_generation", s.patch_id, s.reason});
  rec.candidates =
      config.candidate_policy == CandidatePolicy::accumulate ? merge_candidates(current, state.carry) : current;
  const std::vector<Label>& vocab = rec.candidates.vocabulary;

  // An all-zero previous mask carries no location; fall back to candidate boxes.
  std::optional<SoftMask> previous = state.previous_mask;
  if (previous && !detail::any_positive(*previous)) previous.reset();

  detail::run_stage("negative_mining", times, [&] {
    for (const Patch& patch : patches.patches) {
      const CallContext ctx{it, patch.id};
      try {
        const CandidatePrompt* cand = current.for_patch(patch.id);
        if (!cand) cand = &current.candidates.front();
        const ScoredVocabulary original = backends.vlm->score_query(patch.view, vocab, ctx);
        const auto region = build_inpaint_region(patch, previous, cand, config.region_threshold);
        if (!region) {
          rec.diffs.push_back(contrastive_diffs(original, original, patch.id, it));
          continue;
        }
        const Image cf = counterfactual_view(patch, *region, cand->fore, cand->back, config.task_prompt,
                                             *backends.inpainter, ctx);
        const ScoredVocabulary masked = backends.vlm->score_query(cf, vocab, ctx);
        rec.diffs.push_back(contrastive_diffs(original, masked, patch.id, it));
        rec.provenance[patch.id] = region->provenance;
      } catch (const std::exception& e) {
        rec.skipped.push_back({"negative_mining", patch.id, e.what()});
      }
    }
    if (rec.diffs.empty()) throw Error(Errc::backend, "every patch failed counterfactual scoring");
    rec.raw_scores = iteration_scores(rec.diffs, config.clamp_negative);
    rec.ledger = progressive_update(state.ledger, rec.raw_scores, config.ledger);
    rec.selected = select_prompt(rec.ledger);
    return 0;
  });

  detail::run_stage("mask_generation", times, [&] {
    const PatchDetections det = detect_boxes(patches, rec.selected, *backends.detector, it);
    for (const auto& s : det.skipped) rec.skipped.push_back({"mask_generation", s.patch_id, s.reason});
    for (const Patch& patch : patches.patches) {
      const auto found = det.boxes.find(patch.id);
      if (found == det.boxes.end()) continue;
      const CallContext ctx{it, patch.id};
      try {
        const std::vector<Point> points = spatial_points(rec.selected, patch, *backends.scorer, config.n_points, ctx);
        const auto local = generate_patch_mask(patch, found->second, points, *backends.mask_generator, ctx);
        if (!local) continue;
        PatchMaskRecord r;
        r.patch_id = patch.id;
        r.mask = lift_mask(*local, patch, patches.canvas);
        r.raw_similarity = score_mask(r.mask, state.image, rec.selected, *backends.scorer, ctx);
        r.coverage = patch.footprint();
        rec.mask_records.push_back(std::move(r));
      } catch (const std::exception& e) {
        rec.skipped.push_back({"mask_generation", patch.id, e.what()});
      }
    }
    if (rec.mask_records.empty()) {
      rec.mask = SoftMask(patches.canvas);
    } else {
      rec.mask_records = weight_records(std::move(rec.mask_records), 0.0);
      rec.mask = aggregate_masks(rec.mask_records, config.similarity_threshold, config.aggregation);
    }
    return 0;
  });
  return rec;
}

/// Index (1-based) and value of the mask closest in mean L1 to the pixelwise
/// mean of [history]. The earliest index wins ties. Distances are compared
/// as sum |n m_i - sum_j m_j|, which avoids the rounding of a divided mean.
inline std::pair<int, SoftMask> select_final_mask(const std::vector<SoftMask>& history) {
  if (history.empty()) throw Error(Errc::invalid_argument, "select_final_mask: empty history");
  SoftMask total(history.front().size());
  auto acc = total.values();
  for (const SoftMask& m : history) {
    require_same_size(m.size(), total.size(), "select_final_mask");
    auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  const double n = static_cast<double>(history.size());
  auto distance = [&](const SoftMask& m) {
    double d = 0.0;
    auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) d += std::abs(n * v[i] - acc[i]);
    return d;
  };

  std::size_t best = 0;
  double best_d = distance(history[0]);
  for (std::size_t i = 1; i < history.size(); ++i) {
    const double d = distance(history[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return {static_cast<int>(best) + 1, history[best]};
}

struct PipelineResult {
  SoftMask final_mask;
  int chosen_index = 1;
  std::vector<IterationRecord> history;
  /// Seconds per stage. Not part of the deterministic result.
  StageTimes timing;

  std::vector<SoftMask> masks() const {
    std::vector<SoftMask> out;
    for (const auto& r : history) out.push_back(r.mask);
    return out;
  }
};

class PipelineError : public StageError {
 public:
  PipelineError(const StageError& cause, std::vector<IterationRecord> partial)
      : StageError(cause.stage(), strip(cause)), history_(std::move(partial)) {}
  const std::vector<IterationRecord>& history() const noexcept { return history_; }

 private:
  static std::string strip(const StageError& e) {
    const std::string w = e.what();
    const std::string prefix = e.stage() + ": ";
    return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
  }
  std::vector<IterationRecord> history_;
};

inline PipelineResult run_pipeline(const Image& image, const PipelineConfig& config, const Backends& backends) {
  config.validate();
  image.validate();
  const auto start = Clock::now();
  PipelineResult result;
  IterationState state;
  state.image = image;

  for (int i = 1; i <= config.iterations; ++i) {
    state.iteration = i;
    try {
      IterationRecord rec = run_iteration(state, backends, config, &result.timing);
      state.ledger = rec.ledger;
      state.carry = rec.candidates;
      state.previous_mask = rec.mask;
      if (i < config.iterations) {
        detail::StageTimer timer(&result.timing, "blend");
        state.image = blend_image(state.image, rec.mask, config.blend_weight);
      }
      result.history.push_back(std::move(rec));
      const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
      if (config.max_seconds > 0.0 && elapsed > config.max_seconds && i < config.iterations) {
        throw StageError("timeout", "exceeded max_seconds after iteration " + std::to_string(i));
      }
    } catch (const StageError& e) {
      throw PipelineError(e, std::move(result.history));
    }
  }
  auto [index, mask] = select_final_mask(result.masks());
  result.chosen_index = index;
  result.final_mask = std::move(mask);
  return result;
}

}  // namespace promptseg
