#pragma once

// Multi-scale patch decomposition: the uncut image, its horizontal and
// vertical halves, and its four quarters, plus the mapping of patch-local
// boxes and masks back onto the full canvas.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/core.hpp"

namespace promptseg {

enum class PatchTag {
  original,
  halve_h_top,
  halve_h_bottom,
  halve_v_left,
  halve_v_right,
  quarter_tl,
  quarter_tr,
  quarter_bl,
  quarter_br,
};

inline std::string_view to_string(PatchTag tag) {
  constexpr std::array<std::string_view, 9> names = {
      "original",   "halve_h_top", "halve_h_bottom", "halve_v_left", "halve_v_right",
      "quarter_tl", "quarter_tr",  "quarter_bl",     "quarter_br"};
  return names[static_cast<std::size_t>(tag)];
}

enum class PatchScheme {
  original,
  original_halve,
  original_halve_quarters,
};

inline std::string_view to_string(PatchScheme s) {
  switch (s) {
    case PatchScheme::original:
      return "original";
    case PatchScheme::original_halve:
      return "original+halve";
    case PatchScheme::original_halve_quarters:
      break;
  }
  return "original+halve+quarters";
}

inline PatchScheme parse_patch_scheme(std::string_view text) {
  if (text == "original") return PatchScheme::original;
  if (text == "original+halve") return PatchScheme::original_halve;
  if (text == "original+halve+quarters") return PatchScheme::original_halve_quarters;
  throw Error(Errc::parse, "unknown patch scheme '" + std::string(text) + "'");
}

struct Patch {
  int id = 0;
  PatchTag tag = PatchTag::original;
  int origin_x = 0;
  int origin_y = 0;
  Image view;

  /// Footprint of the patch in canvas coordinates.
  BBox footprint() const {
    return {origin_x, origin_y, origin_x + view.width(), origin_y + view.height()};
  }
};

struct PatchSet {
  Size canvas;
  std::vector<Patch> patches;

  const Patch& by_id(int id) const {
    for (const auto& p : patches)
      if (p.id == id) return p;
    throw Error(Errc::invalid_argument, "patch id " + std::to_string(id) + " not in set");
  }
};

/// Canvas rectangle covered by [tag]. Split lines sit at floor(W/2) and
/// floor(H/2), so odd dimensions give the extra pixel to the right/bottom.
inline BBox patch_rect(PatchTag tag, Size canvas) {
  const int w = canvas.width;
  const int h = canvas.height;
  const int mx = w / 2;
  const int my = h / 2;
  switch (tag) {
    case PatchTag::original:
      return {0, 0, w, h};
    case PatchTag::halve_h_top:
      return {0, 0, w, my};
    case PatchTag::halve_h_bottom:
      return {0, my, w, h};
    case PatchTag::halve_v_left:
      return {0, 0, mx, h};
    case PatchTag::halve_v_right:
      return {mx, 0, w, h};
    case PatchTag::quarter_tl:
      return {0, 0, mx, my};
    case PatchTag::quarter_tr:
      return {mx, 0, w, my};
    case PatchTag::quarter_bl:
      return {0, my, mx, h};
    case PatchTag::quarter_br:
      break;
  }
  return {mx, my, w, h};
}

inline std::vector<PatchTag> scheme_tags(PatchScheme scheme) {
  using enum PatchTag;
  switch (scheme) {
    case PatchScheme::original:
      return {original};
    case PatchScheme::original_halve:
      return {original, halve_h_top, halve_h_bottom, halve_v_left, halve_v_right};
    case PatchScheme::original_halve_quarters:
      break;
  }
  return {original,   halve_h_top, halve_h_bottom, halve_v_left, halve_v_right,
          quarter_tl, quarter_tr,  quarter_bl,     quarter_br};
}

/// Patches are ordered by tag and numbered 0..n-1 in that order.
inline PatchSet build_patch_set(const Image& image, PatchScheme scheme) {
  if (scheme != PatchScheme::original && (image.width() < 2 || image.height() < 2)) {
    throw Error(Errc::invalid_argument,
                "build_patch_set: splitting needs at least 2x2, got " + to_string(image.size()));
  }
  PatchSet set{image.size(), {}};
  int id = 0;
  for (PatchTag tag : scheme_tags(scheme)) {
    const BBox r = patch_rect(tag, image.size());
    set.patches.push_back(Patch{id++, tag, r.x_min, r.y_min,
                                tag == PatchTag::original ? image : image.crop(r)});
  }
  return set;
}

inline BBox patch_to_global(const BBox& box, const Patch& patch) {
  if (!box.valid_in(patch.view.size())) {
    throw Error(Errc::invalid_argument, "patch_to_global: box " + to_string(box) +
                                            " outside patch " + std::string(to_string(patch.tag)));
  }
  return {box.x_min + patch.origin_x, box.y_min + patch.origin_y, box.x_max + patch.origin_x,
          box.y_max + patch.origin_y};
}

/// Canvas box clipped to the patch and shifted into patch coordinates; empty
/// when the two do not overlap.
inline BBox global_to_patch(const BBox& box, const Patch& patch) {
  BBox c = intersect(box, patch.footprint());
  if (c.empty()) return {};
  return {c.x_min - patch.origin_x, c.y_min - patch.origin_y, c.x_max - patch.origin_x,
          c.y_max - patch.origin_y};
}

/// Places a patch-sized mask onto a zero canvas at the patch origin.
inline SoftMask lift_mask(const SoftMask& patch_mask, const Patch& patch, Size canvas) {
  require_same_size(patch_mask.size(), patch.view.size(), "lift_mask");
  if (!patch.footprint().valid_in(canvas)) {
    throw Error(Errc::dimension_mismatch, "lift_mask: patch does not fit canvas");
  }
  SoftMask out(canvas);
  for (int y = 0; y < patch_mask.height(); ++y)
    for (int x = 0; x < patch_mask.width(); ++x)
      out.at(x + patch.origin_x, y + patch.origin_y) = patch_mask.at(x, y);
  return out;
}

/// Inverse of lift_mask: the canvas mask restricted to the patch footprint.
template <typename Mask>
Mask crop_to_patch(const Mask& canvas_mask, const Patch& patch) {
  const BBox f = patch.footprint();
  if (!f.valid_in(canvas_mask.size())) {
    throw Error(Errc::dimension_mismatch, "crop_to_patch: patch does not fit canvas");
  }
  Mask out(f.width(), f.height());
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) out.at(x, y) = canvas_mask.at(x + f.x_min, y + f.y_min);
  return out;
}

}  // namespace promptseg
