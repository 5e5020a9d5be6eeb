#pragma once

// Turns the selected label into a canvas mask: per-patch detection, spatial
// point priors, promptable segmentation, semantic scoring of each patch mask
// against the label, and a similarity-weighted aggregate.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/backends.hpp"
#include "promptseg/candidates.hpp"
#include "promptseg/patching.hpp"

namespace promptseg {

struct PatchDetections {
  std::map<int, std::vector<BBox>> boxes;  // patch coordinates
  std::vector<SkippedPatch> skipped;
};

inline PatchDetections detect_boxes(const PatchSet& patchset, const Label& label, const Detector& detector,
                                    int iteration = 1) {
  if (label.empty()) throw Error(Errc::invalid_argument, "detect_boxes: empty label");
  PatchDetections out;
  for (const Patch& patch : patchset.patches) {
    try {
      std::vector<BBox>& dst = out.boxes[patch.id];
      for (const Detection& d : detector.detect(patch.view, label, {iteration, patch.id})) {
        if (!d.box.valid_in(patch.view.size())) {
          throw Error(Errc::backend, "detector returned box " + to_string(d.box) + " outside the view");
        }
        dst.push_back(d.box);
      }
    } catch (const std::exception& e) {
      out.boxes.erase(patch.id);
      out.skipped.push_back({patch.id, e.what()});
    }
  }
  return out;
}

/// Non-maximum suppression radius used by spatial_points.
inline double point_suppression_radius(Size view) {
  return std::max(2.0, std::min(view.width, view.height) / 16.0);
}

/// The [n_points] strongest heatmap locations, at least the suppression radius
/// apart. Equal values resolve in row-major order. Zero-valued pixels never qualify.
inline std::vector<Point> spatial_points(const Label& label, const Patch& patch, const SemanticScorer& scorer,
                                         int n_points, const CallContext& ctx) {
  if (n_points < 1) throw Error(Errc::invalid_argument, "spatial_points: n_points must be >= 1");
  const SoftMask heat = scorer.heatmap(patch.view, label, ctx);
  require_same_size(heat.size(), patch.view.size(), "spatial_points heatmap");

  std::vector<std::size_t> order;
  auto values = heat.values();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] > 0.0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

  const double radius = point_suppression_radius(patch.view.size());
  std::vector<Point> out;
  for (std::size_t i : order) {
    const Point p{static_cast<int>(i % static_cast<std::size_t>(heat.width())),
                  static_cast<int>(i / static_cast<std::size_t>(heat.width()))};
    const bool suppressed = std::any_of(out.begin(), out.end(), [&](const Point& q) {
      return std::hypot(p.x - q.x, p.y - q.y) <= radius;
    });
    if (suppressed) continue;
    out.push_back(p);
    if (static_cast<int>(out.size()) == n_points) break;
  }
  return out;
}

/// Segments each box (or the whole patch when there are points but no boxes)
/// and unions the results by pixelwise max. nullopt when there is no prompt at all.
inline std::optional<SoftMask> generate_patch_mask(const Patch& patch, const std::vector<BBox>& boxes,
                                                   const std::vector<Point>& points, const MaskGenerator& maskgen,
                                                   const CallContext& ctx) {
  if (boxes.empty() && points.empty()) return std::nullopt;
  std::vector<BBox> prompts = boxes;
  if (prompts.empty()) prompts.push_back({0, 0, patch.view.width(), patch.view.height()});

  SoftMask out(patch.view.size());
  for (const BBox& b : prompts) {
    const SoftMask m = maskgen.segment(patch.view, points, b, ctx);
    require_same_size(m.size(), patch.view.size(), "segment output");
    m.validate();
    auto src = m.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::max(dst[i], src[i]);
  }
  return out;
}

/// Similarity between the label and the canvas image restricted to [mask].
inline double score_mask(const SoftMask& mask, const Image& canvas_image, const Label& label,
                         const SemanticScorer& scorer, const CallContext& ctx) {
  const double s = scorer.similarity(apply_mask(canvas_image, mask), label, ctx);
  return std::isfinite(s) ? std::clamp(s, 0.0, 1.0) : 0.0;
}

struct PatchMaskRecord {
  int patch_id = 0;
  SoftMask mask;  // canvas-lifted
  double raw_similarity = 0.0;
  double normalized_similarity = 0.0;
  /// Canvas region the source patch saw; empty means the whole canvas.
  BBox coverage;
};

/// How kept records combine per pixel. [coverage] divides by the weight of
/// the records whose patch covers the pixel, so a patch says nothing about
/// pixels it never saw. [global] is the plain weighted sum.
enum class AggregationMode { coverage, global };

inline std::string_view to_string(AggregationMode m) {
  return m == AggregationMode::coverage ? "coverage" : "global";
}

inline AggregationMode parse_aggregation_mode(std::string_view text) {
  if (text == "coverage") return AggregationMode::coverage;
  if (text == "global") return AggregationMode::global;
  throw Error(Errc::parse, "unknown aggregation mode '" + std::string(text) + "'");
}

/// Normalizes similarities across [records], drops those below [threshold]
/// and renormalizes the survivors. When nothing survives, the single most
/// similar record is kept with weight 1. Output is ordered by patch id.
inline std::vector<PatchMaskRecord> weight_records(std::vector<PatchMaskRecord> records, double threshold) {
  if (records.empty()) throw Error(Errc::invalid_argument, "aggregate_masks: no patch masks");
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.patch_id < b.patch_id; });

  double total = 0.0;
  for (const auto& r : records) total += r.raw_similarity;
  for (auto& r : records) {
    r.normalized_similarity =
        total > 0.0 ? r.raw_similarity / total : 1.0 / static_cast<double>(records.size());
  }

  std::vector<PatchMaskRecord> kept;
  for (const auto& r : records)
    if (r.normalized_similarity >= threshold) kept.push_back(r);
  if (kept.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i)
      if (records[i].raw_similarity > records[best].raw_similarity) best = i;
    kept.push_back(records[best]);
  }

  double kept_total = 0.0;
  for (const auto& r : kept) kept_total += r.normalized_similarity;
  for (auto& r : kept) {
    r.normalized_similarity =
        kept_total > 0.0 ? r.normalized_similarity / kept_total : 1.0 / static_cast<double>(kept.size());
  }
  return kept;
}

/// Similarity-weighted combination of the surviving patch masks, clamped to [0,1].
inline SoftMask aggregate_masks(const std::vector<PatchMaskRecord>& records, double threshold,
                                AggregationMode mode = AggregationMode::global) {
  const std::vector<PatchMaskRecord> kept = weight_records(records, threshold);
  const Size canvas = kept.front().mask.size();
  const BBox full{0, 0, canvas.width, canvas.height};
  SoftMask out(canvas);
  SoftMask coverage(canvas);
  for (const auto& r : kept) {
    require_same_size(r.mask.size(), canvas, "aggregate_masks");
    const BBox cov = r.coverage.empty() ? full : intersect(r.coverage, full);
    for (int y = cov.y_min; y < cov.y_max; ++y) {
      for (int x = cov.x_min; x < cov.x_max; ++x) {
        out.at(x, y) += r.normalized_similarity * r.mask.at(x, y);
        coverage.at(x, y) += r.normalized_similarity;
      }
    }
  }
  auto dst = out.values();
  auto cov = coverage.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (mode == AggregationMode::coverage) dst[i] = cov[i] > 0.0 ? dst[i] / cov[i] : 0.0;
    dst[i] = std::clamp(dst[i], 0.0, 1.0);
  }
  return out;
}

}  // namespace promptseg
