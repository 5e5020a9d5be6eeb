#pragma once

// Per-patch VLM queries that produce candidate object names and boxes.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/backends.hpp"
#include "promptseg/patching.hpp"

namespace promptseg {

inline constexpr std::string_view kDefaultBoxTemplate =
    "This image pertains to the {task} detection task, output the bounding box of the {task}.";
inline constexpr std::string_view kDefaultNameTemplate =
    "Output the name of the {task} and its environment in one word.";

/// Replaces every "{task}" in [tmpl].
inline std::string render_template(std::string_view tmpl, std::string_view key, std::string_view value) {
  std::string out;
  const std::string needle = "{" + std::string(key) + "}";
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = tmpl.find(needle, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos));
    out.append(value);
    pos = hit + needle.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

/// Lowercases, trims, collapses inner whitespace and strips trailing punctuation.
inline Label canonicalize_label(std::string_view raw) {
  std::string collapsed;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed.push_back(' ');
    pending_space = false;
    collapsed.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!collapsed.empty() &&
         (std::ispunct(static_cast<unsigned char>(collapsed.back())) || collapsed.back() == ' ')) {
    collapsed.pop_back();
  }
  if (collapsed.empty()) {
    throw Error(Errc::invalid_argument, "label '" + std::string(raw) + "' is empty after normalization");
  }
  return Label::from_canonical(std::move(collapsed));
}

struct CandidatePrompt {
  Label fore;
  Label back;
  std::vector<BBox> boxes;  // canvas coordinates
  int source_patch = 0;
  int iteration = 1;
};

struct SkippedPatch {
  int patch_id = 0;
  std::string reason;
};

struct CandidateSet {
  int iteration = 1;
  std::vector<CandidatePrompt> candidates;
  /// Distinct foreground labels in first-seen order.
  std::vector<Label> vocabulary;
  std::vector<SkippedPatch> skipped;

  const CandidatePrompt* for_patch(int patch_id) const {
    for (const auto& c : candidates)
      if (c.source_patch == patch_id) return &c;
    return nullptr;
  }
};

inline void append_unique(std::vector<Label>& vocab, const Label& label) {
  if (std::find(vocab.begin(), vocab.end(), label) == vocab.end()) vocab.push_back(label);
}

struct PromptTemplates {
  std::string box = std::string(kDefaultBoxTemplate);
  std::string name = std::string(kDefaultNameTemplate);
};

/// Queries the VLM on every patch. A patch whose queries throw is recorded as
/// skipped; the call fails only when every patch was skipped.
inline CandidateSet generate_candidates(const PatchSet& patchset, std::string_view task_prompt,
                                        const PromptingVlm& vlm, int iteration,
                                        const PromptTemplates& templates = {}) {
  if (patchset.patches.empty()) throw Error(Errc::invalid_argument, "generate_candidates: no patches");
  const std::string box_prompt = render_template(templates.box, "task", task_prompt);
  const std::string name_prompt = render_template(templates.name, "task", task_prompt);

  CandidateSet out;
  out.iteration = iteration;
  for (const Patch& patch : patchset.patches) {
    const CallContext ctx{iteration, patch.id};
    try {
      const std::string caption = vlm.caption(patch.view, ctx);
      std::vector<BBox> local = vlm.box_query(patch.view, caption, box_prompt, ctx);
      NameAnswer names = vlm.name_query(patch.view, caption, name_prompt, ctx);

      CandidatePrompt c;
      c.fore = canonicalize_label(names.fore);
      c.back = canonicalize_label(names.back);
      c.source_patch = patch.id;
      c.iteration = iteration;
      const BBox view_rect{0, 0, patch.view.width(), patch.view.height()};
      for (const BBox& b : local) {
        const BBox clipped = intersect(b, view_rect);
        if (!clipped.empty()) c.boxes.push_back(patch_to_global(clipped, patch));
      }
      append_unique(out.vocabulary, c.fore);
      out.candidates.push_back(std::move(c));
    } catch (const std::exception& e) {
      out.skipped.push_back({patch.id, e.what()});
    }
  }
  if (out.candidates.empty()) {
    std::string why = out.skipped.empty() ? std::string("no patches") : out.skipped.front().reason;
    throw Error(Errc::backend, "generate_candidates: every patch failed (" + why + ")");
  }
  return out;
}

/// Ordered union of vocabularies; [carry] labels come first.
inline CandidateSet merge_candidates(const CandidateSet& current, const std::optional<CandidateSet>& carry) {
  if (!carry) return current;
  CandidateSet out;
  out.iteration = current.iteration;
  out.vocabulary = carry->vocabulary;
  for (const Label& l : current.vocabulary) append_unique(out.vocabulary, l);
  out.candidates = carry->candidates;
  out.candidates.insert(out.candidates.end(), current.candidates.begin(), current.candidates.end());
  out.skipped = current.skipped;
  return out;
}

}  // namespace promptseg
