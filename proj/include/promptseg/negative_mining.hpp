#pragma once

// Counterfactual contrastive scoring and the progressive mining ledger.
//
// For every patch the VLM scores the candidate vocabulary twice: on the
// patch and on a counterfactual copy in which the hypothesized object region
// has been inpainted away. A label's per-patch evidence is the drop in its
// softmax score. Per iteration, each label keeps its best patch (negative
// drops clamp to zero), and the ledger multiplies the iteration's scores by
// the normalized product of all earlier iterations. Labels whose evidence is
// sporadic get multiplied by zero sooner or later; labels that respond in
// every iteration keep their share.

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/backends.hpp"
#include "promptseg/candidates.hpp"
#include "promptseg/patching.hpp"

namespace promptseg {

/// Scalars aligned to an ordered vocabulary.
struct LabelScores {
  std::vector<Label> labels;
  std::vector<double> values;

  std::size_t size() const { return labels.size(); }

  double value(const Label& l) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == l) return values[i];
    throw Error(Errc::invalid_argument, "label '" + l.text() + "' not in score vector");
  }
};

struct DiffVector : LabelScores {
  int patch_id = 0;
  int iteration = 1;
};

/// Signed per-label drop: original score minus counterfactual score.
inline DiffVector contrastive_diffs(const ScoredVocabulary& original, const ScoredVocabulary& masked,
                                    int patch_id = 0, int iteration = 1) {
  if (original.size() != masked.size()) {
    throw Error(Errc::invalid_argument, "contrastive_diffs: label sets differ in size");
  }
  DiffVector d;
  d.patch_id = patch_id;
  d.iteration = iteration;
  for (const auto& [label, score] : original.entries()) {
    bool found = false;
    for (const auto& [l2, s2] : masked.entries()) {
      if (l2 == label) {
        d.labels.push_back(label);
        d.values.push_back(score - s2);
        found = true;
        break;
      }
    }
    if (!found) throw Error(Errc::invalid_argument, "contrastive_diffs: '" + label.text() + "' missing");
  }
  return d;
}

/// Index of the largest value; the first index wins ties.
inline std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Label with the largest change in one patch.
inline std::pair<Label, double> patch_pick(const DiffVector& diff) {
  if (diff.labels.empty()) throw Error(Errc::invalid_argument, "patch_pick: empty diff vector");
  const std::size_t i = argmax_first(diff.values);
  return {diff.labels[i], diff.values[i]};
}

/// Per label, the best patch's drop. With [clamp_negative] (default) drops are
/// clamped at zero; otherwise the signed maxima are shifted so the lowest is zero.
inline LabelScores iteration_scores(const std::vector<DiffVector>& diffs, bool clamp_negative = true) {
  if (diffs.empty()) throw Error(Errc::invalid_argument, "iteration_scores: no patch diffs");
  LabelScores out;
  out.labels = diffs.front().labels;
  out.values.assign(out.labels.size(), clamp_negative ? 0.0 : -std::numeric_limits<double>::infinity());
  for (const DiffVector& d : diffs) {
    if (d.labels != out.labels) {
      throw Error(Errc::invalid_argument, "iteration_scores: patches disagree on the vocabulary");
    }
    for (std::size_t i = 0; i < d.values.size(); ++i) out.values[i] = std::max(out.values[i], d.values[i]);
  }
  if (!clamp_negative && !out.values.empty()) {
    const double lo = *std::min_element(out.values.begin(), out.values.end());
    for (double& v : out.values) v -= lo;
  }
  return out;
}

/// Divides by the sum; an all-zero vector maps to the uniform vector.
inline std::vector<double> normalize_scores(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) {
    if (x < 0.0) throw Error(Errc::invalid_argument, "normalize_scores: negative entry");
    sum += x;
  }
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  if (sum == 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(v.size()));
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / sum;
  return out;
}

enum class ZeroSumPolicy { uniform, carry };

struct LedgerOptions {
  ZeroSumPolicy zero_sum = ZeroSumPolicy::uniform;
  /// When positive, prior factors are floored at this value so a suppressed label can recover.
  double floor = 0.0;
};

struct ScoreLedger {
  std::vector<Label> vocabulary;
  /// Raw scores per iteration, aligned to the vocabulary as it was then.
  std::vector<std::vector<double>> per_iteration_raw;
  /// Last effective (raw x prior) vector.
  std::vector<double> effective;
  /// Normalized effective vector; the prior for the next iteration.
  std::vector<double> cumulative;
  int iteration_count = 0;
};

/// Folds one iteration's raw scores into the ledger. Labels new to the ledger
/// enter with the uniform prior 1/|vocabulary|; ledger labels absent from
/// [new_raw] score zero this iteration.
inline ScoreLedger progressive_update(const ScoreLedger& ledger, const LabelScores& new_raw,
                                      const LedgerOptions& options = {}) {
  if (new_raw.labels.size() != new_raw.values.size()) {
    throw Error(Errc::dimension_mismatch, "progressive_update: labels and values differ in length");
  }
  if (ledger.cumulative.size() != ledger.vocabulary.size()) {
    throw Error(Errc::dimension_mismatch, "progressive_update: ledger is inconsistent");
  }
  for (double v : new_raw.values) {
    if (v < 0.0) throw Error(Errc::invalid_argument, "progressive_update: negative raw score");
  }

  ScoreLedger out = ledger;
  for (const Label& l : new_raw.labels) append_unique(out.vocabulary, l);
  const std::size_t n = out.vocabulary.size();
  const double uniform = 1.0 / static_cast<double>(n);

  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 0; i < new_raw.labels.size(); ++i) {
    const auto it = std::find(out.vocabulary.begin(), out.vocabulary.end(), new_raw.labels[i]);
    raw[static_cast<std::size_t>(it - out.vocabulary.begin())] = new_raw.values[i];
  }

  std::vector<double> prior(n, uniform);
  std::copy(ledger.cumulative.begin(), ledger.cumulative.end(), prior.begin());
  if (options.floor > 0.0) {
    for (double& p : prior) p = std::max(p, options.floor);
  }

  out.effective.assign(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.effective[i] = ledger.iteration_count == 0 ? raw[i] : raw[i] * prior[i];
    sum += out.effective[i];
  }
  if (sum > 0.0 || options.zero_sum == ZeroSumPolicy::uniform || ledger.iteration_count == 0) {
    out.cumulative = normalize_scores(out.effective);
  } else {
    out.cumulative = normalize_scores(prior);
  }
  out.per_iteration_raw.push_back(std::move(raw));
  out.iteration_count = ledger.iteration_count + 1;
  return out;
}

/// Argmax of the cumulative vector, ties to vocabulary order.
inline Label select_prompt(const ScoreLedger& ledger) {
  if (ledger.iteration_count < 1 || ledger.vocabulary.empty()) {
    throw Error(Errc::invalid_argument, "select_prompt: ledger has no iterations");
  }
  return ledger.vocabulary[argmax_first(ledger.cumulative)];
}

// ---------------------------------------------------------------------------
// Counterfactual views

struct InpaintRegion {
  enum class Provenance { previous_mask, candidate_box };
  BinaryMask region;  // patch coordinates
  Provenance provenance = Provenance::candidate_box;
};

inline std::string_view to_string(InpaintRegion::Provenance p) {
  return p == InpaintRegion::Provenance::previous_mask ? "previous_mask" : "candidate_box";
}

/// Region to inpaint in [patch]: the previous canvas mask cropped and
/// binarized when one exists, otherwise the candidate's boxes. nullopt means
/// there is nothing to occlude and the patch gets all-zero diffs.
inline std::optional<InpaintRegion> build_inpaint_region(const Patch& patch, const std::optional<SoftMask>& previous,
                                                         const CandidatePrompt* candidate,
                                                         double threshold = kDefaultBinarizeThreshold) {
  InpaintRegion r;
  if (previous) {
    r.region = binarize(crop_to_patch(*previous, patch), threshold);
    r.provenance = InpaintRegion::Provenance::previous_mask;
  } else {
    r.region = BinaryMask(patch.view.size());
    r.provenance = InpaintRegion::Provenance::candidate_box;
    if (candidate) {
      for (const BBox& b : candidate->boxes) r.region.fill(global_to_patch(b, patch));
    }
  }
  if (!r.region.any()) return std::nullopt;
  return r;
}

inline constexpr std::string_view kPositivePromptTemplate =
    "{back}, high quality, detailed, and well-integrated with the original image";
inline constexpr std::string_view kNegativePromptTemplate = "{fore} is not a {task}";

inline std::string positive_prompt(const Label& back) {
  return render_template(kPositivePromptTemplate, "back", back.text());
}

inline std::string negative_prompt(const Label& fore, std::string_view task) {
  return render_template(render_template(kNegativePromptTemplate, "fore", fore.text()), "task", task);
}

/// Inpaints [region] out of the patch, steering the inpainter toward the
/// background label and away from the foreground one. Enforces the inpainter
/// contract that pixels outside the region are untouched.
inline Image counterfactual_view(const Patch& patch, const InpaintRegion& region, const Label& fore,
                                 const Label& back, std::string_view task_prompt, const Inpainter& inpainter,
                                 const CallContext& ctx) {
  require_same_size(region.region.size(), patch.view.size(), "counterfactual_view");
  Image out;
  try {
    out = inpainter.inpaint(patch.view, region.region, positive_prompt(back), negative_prompt(fore, task_prompt),
                            ctx);
  } catch (const Error& e) {
    throw Error(e.code(), "inpainting patch " + std::to_string(patch.id) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::backend, "inpainting patch " + std::to_string(patch.id) + ": " + e.what());
  }
  if (out.size() != patch.view.size()) {
    throw Error(Errc::backend, "inpainter changed the size of patch " + std::to_string(patch.id));
  }
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      if (region.region.test(x, y)) continue;
      for (int c = 0; c < Image::kChannels; ++c) {
        if (out.at(x, y, c) != patch.view.at(x, y, c)) {
          throw Error(Errc::backend,
                      "inpainter modified pixels outside the region in patch " + std::to_string(patch.id));
        }
      }
    }
  }
  return out;
}

}  // namespace promptseg
