#pragma once

// Deterministic simulated world implementing all five model contracts.
//
// A world plants one target object in a textured canvas. Pixels are encoded
// by channel ratio, so the class of a pixel survives the multiplicative
// blending the pipeline applies between iterations:
//   background  (v, 0.90 v, 0.55 v)
//   target      (v, 0.55 v, 0.90 v)
//   inpaint fill (0.5, 0.5, 0.5)
// Every simulated call is a pure function of (world, inputs, call context).
//
// Score model: the target's logit is proportional to the visible fraction of
// its footprint. Each distractor flips a seeded coin per iteration; when it
// lands heads the distractor gets a large logit on any view without inpainted
// pixels and collapses to the floor once something has been inpainted. That
// is the sporadic "responds to occlusion in some iterations only" behaviour
// that progressive mining is meant to suppress.

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptseg/backends.hpp"
#include "promptseg/core.hpp"

namespace promptseg::sim {

// ---------------------------------------------------------------------------
// Seeded hashing

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x51ed270b27a4f3c1ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

inline std::uint64_t hash_text(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

/// Uniform double in [0, 1) from a hash.
inline double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

enum Stream : std::uint64_t {
  kTexture = 1,
  kShape,
  kFlicker,
  kNameHallucination,
  kNamePick,
  kBoxNoise,
  kBoxHallucination,
  kDetectorJitter,
  kSegmentNoise,
  kLowSimilarity,
};

// ---------------------------------------------------------------------------
// Pixel encoding

enum class PixelClass { dark, background, target, fill };

inline constexpr double kTargetGreen = 0.55;
inline constexpr double kTargetBlue = 0.90;
inline constexpr double kBackgroundGreen = 0.90;
inline constexpr double kBackgroundBlue = 0.55;
inline constexpr double kFillValue = 0.5;
inline constexpr double kVisibleIntensity = 0.02;

inline PixelClass classify(double r, double g, double b) {
  if (r <= kVisibleIntensity) return PixelClass::dark;
  const double gr = g / r;
  const double br = b / r;
  if (std::abs(gr - 1.0) < 0.03 && std::abs(br - 1.0) < 0.03) return PixelClass::fill;
  if (std::abs(gr - kTargetGreen) < 0.1 && std::abs(br - kTargetBlue) < 0.1) return PixelClass::target;
  return PixelClass::background;
}

inline PixelClass classify(const Image& img, int x, int y) {
  return classify(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
}

/// Pixels of [img] carrying the target encoding.
inline BinaryMask target_pixels(const Image& img) {
  BinaryMask out(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.set(x, y, classify(img, x, y) == PixelClass::target);
  return out;
}

// ---------------------------------------------------------------------------
// World description

struct Distractor {
  Label label;
  double flicker_probability = 0.0;
  double magnitude = 0.0;
};

/// Behavioural knobs shared by generated and image-derived worlds.
struct SimSettings {
  double target_magnitude = 1.0;
  /// Multiplies every logit before the softmax.
  double logit_scale = 4.0;
  /// Logit weight of labels with no evidence.
  double score_floor = 0.05;
  /// VLM box edges move by up to this fraction of the box size.
  double box_noise = 0.0;
  /// Detector box edges move by up to this many pixels.
  int detector_jitter = 0;
  /// Probability of flipping a footprint-boundary pixel in a segmentation.
  double segment_noise = 0.0;
  /// Probability the VLM names a distractor although the target is visible.
  double hallucination = 0.0;
  /// Visible share of the footprint needed for the VLM to name the target.
  double name_visibility = 0.5;
};

struct TargetShape {
  enum class Kind { rectangle, ellipse };
  Kind kind = Kind::rectangle;
  BBox bounds;

  BinaryMask rasterize(Size canvas) const {
    BinaryMask m(canvas);
    const double cx = 0.5 * (bounds.x_min + bounds.x_max);
    const double cy = 0.5 * (bounds.y_min + bounds.y_max);
    const double rx = 0.5 * bounds.width();
    const double ry = 0.5 * bounds.height();
    BBox b = intersect(bounds, {0, 0, canvas.width, canvas.height});
    for (int y = b.y_min; y < b.y_max; ++y) {
      for (int x = b.x_min; x < b.x_max; ++x) {
        if (kind == Kind::rectangle) {
          m.set(x, y);
        } else {
          const double dx = (x + 0.5 - cx) / rx;
          const double dy = (y + 0.5 - cy) / ry;
          m.set(x, y, dx * dx + dy * dy <= 1.0);
        }
      }
    }
    return m;
  }
};

struct WorldConfig {
  Size canvas{64, 64};
  std::string target_label = "frog";
  std::string background_label = "grass";
  std::vector<Distractor> distractors;
  /// Drawn from the seed when absent.
  std::optional<TargetShape> target;
  SimSettings settings;
};

class SimulatedWorld {
 public:
  /// Renders a fresh world; the target shape is drawn from [seed] unless fixed in [config].
  static SimulatedWorld create(const WorldConfig& config, std::uint64_t seed) {
    if (config.canvas.width < 8 || config.canvas.height < 8) {
      throw Error(Errc::invalid_argument, "simulated world needs at least 8x8");
    }
    const TargetShape shape = config.target ? *config.target : random_shape(config.canvas, seed);
    BinaryMask region = shape.rasterize(config.canvas);
    if (!region.any()) throw Error(Errc::invalid_argument, "simulated world: empty target region");

    Image canvas(config.canvas);
    for (int y = 0; y < canvas.height(); ++y) {
      for (int x = 0; x < canvas.width(); ++x) {
        const double v = 0.35 + 0.4 * unit(hash_combine({seed, kTexture, std::uint64_t(x), std::uint64_t(y)}));
        if (region.test(x, y)) {
          canvas.set_pixel(x, y, v, kTargetGreen * v, kTargetBlue * v);
        } else {
          canvas.set_pixel(x, y, v, kBackgroundGreen * v, kBackgroundBlue * v);
        }
      }
    }
    return SimulatedWorld(config, seed, std::move(canvas), std::move(region));
  }

  /// Adopts an existing rendering; the footprint is recovered from the pixel encoding.
  static SimulatedWorld from_image(const WorldConfig& config, const Image& image, std::uint64_t seed) {
    BinaryMask region = target_pixels(image);
    if (!region.any()) {
      throw Error(Errc::invalid_argument, "simulated world: image has no target-encoded pixels");
    }
    WorldConfig c = config;
    c.canvas = image.size();
    return SimulatedWorld(c, seed, image, std::move(region));
  }

  static TargetShape random_shape(Size canvas, std::uint64_t seed) {
    auto u = [&](std::uint64_t k) { return unit(hash_combine({seed, kShape, k})); };
    const int min_w = std::max(4, canvas.width / 6);
    const int min_h = std::max(4, canvas.height / 6);
    const int max_w = std::max(min_w, canvas.width * 2 / 5);
    const int max_h = std::max(min_h, canvas.height * 2 / 5);
    const int w = min_w + static_cast<int>(u(1) * (max_w - min_w + 1));
    const int h = min_h + static_cast<int>(u(2) * (max_h - min_h + 1));
    const int x0 = 1 + static_cast<int>(u(3) * (canvas.width - w - 1));
    const int y0 = 1 + static_cast<int>(u(4) * (canvas.height - h - 1));
    TargetShape s;
    s.kind = u(5) < 0.5 ? TargetShape::Kind::rectangle : TargetShape::Kind::ellipse;
    s.bounds = {x0, y0, x0 + w, y0 + h};
    return s;
  }

  const Image& canvas() const { return canvas_; }
  const BinaryMask& target_region() const { return region_; }
  std::size_t target_area() const { return area_; }
  const Label& target_label() const { return target_label_; }
  const Label& background_label() const { return background_label_; }
  const std::vector<Distractor>& distractors() const { return config_.distractors; }
  const SimSettings& settings() const { return config_.settings; }
  std::uint64_t seed() const { return seed_; }
  Size size() const { return canvas_.size(); }

  /// Whether distractor [index] responds to occlusion during [iteration].
  bool distractor_active(std::size_t index, int iteration) const {
    const auto& d = config_.distractors.at(index);
    return unit(hash_combine({seed_, kFlicker, index, static_cast<std::uint64_t>(iteration)})) <
           d.flicker_probability;
  }

  /// Index into distractors(), or -1.
  int distractor_index(const Label& label) const {
    for (std::size_t i = 0; i < config_.distractors.size(); ++i)
      if (config_.distractors[i].label == label) return static_cast<int>(i);
    return -1;
  }

 private:
  SimulatedWorld(WorldConfig config, std::uint64_t seed, Image canvas, BinaryMask region)
      : config_(std::move(config)),
        seed_(seed),
        canvas_(std::move(canvas)),
        region_(std::move(region)),
        area_(region_.count()),
        target_label_(Label::from_canonical(config_.target_label)),
        background_label_(Label::from_canonical(config_.background_label)) {
    const auto& s = config_.settings;
    if (!(s.target_magnitude >= 0.0 && s.target_magnitude <= 1.0)) {
      throw Error(Errc::invalid_argument, "simulated world: target magnitude outside [0,1]");
    }
    for (const auto& d : config_.distractors) {
      if (!(d.flicker_probability >= 0.0 && d.flicker_probability <= 1.0) ||
          !(d.magnitude >= 0.0 && d.magnitude <= 1.0)) {
        throw Error(Errc::invalid_argument,
                    "simulated world: distractor '" + d.label.text() + "' parameters outside [0,1]");
      }
      if (d.label == target_label_) {
        throw Error(Errc::invalid_argument, "simulated world: distractor equals target label");
      }
    }
  }

  WorldConfig config_;
  std::uint64_t seed_;
  Image canvas_;
  BinaryMask region_;
  std::size_t area_;
  Label target_label_;
  Label background_label_;
};

inline SimulatedWorld sim_world_new(const WorldConfig& config, std::uint64_t seed) {
  return SimulatedWorld::create(config, seed);
}

// ---------------------------------------------------------------------------
// Backends

/// What the simulated models can "see" in a view.
struct ViewStats {
  std::size_t visible = 0;
  std::size_t support = 0;  // pixels with any intensity
  bool has_fill = false;
  BBox target_box;
  double sum_x = 0.0;
  double sum_y = 0.0;

  static ViewStats of(const Image& view) {
    ViewStats s;
    int x0 = view.width(), y0 = view.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < view.height(); ++y) {
      for (int x = 0; x < view.width(); ++x) {
        const double r = view.at(x, y, 0), g = view.at(x, y, 1), b = view.at(x, y, 2);
        if (r > 0.0 || g > 0.0 || b > 0.0) ++s.support;
        switch (classify(r, g, b)) {
          case PixelClass::target:
            ++s.visible;
            s.sum_x += x;
            s.sum_y += y;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
            break;
          case PixelClass::fill:
            s.has_fill = true;
            break;
          default:
            break;
        }
      }
    }
    if (s.visible > 0) s.target_box = {x0, y0, x1 + 1, y1 + 1};
    return s;
  }
};

/// Inpainting prompts seen by a simulated inpainter, for inspection in tests.
class PromptLog {
 public:
  struct Entry {
    CallContext ctx;
    std::string positive;
    std::string negative;
  };

  void record(const CallContext& ctx, std::string_view positive, std::string_view negative) {
    std::lock_guard lock(mutex_);
    entries_.push_back({ctx, std::string(positive), std::string(negative)});
  }
  std::vector<Entry> entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
};

class SimulatedBackends final : public PromptingVlm,
                                public Inpainter,
                                public Detector,
                                public MaskGenerator,
                                public SemanticScorer {
 public:
  explicit SimulatedBackends(std::shared_ptr<const SimulatedWorld> world,
                             std::shared_ptr<PromptLog> log = nullptr)
      : world_(std::move(world)), log_(std::move(log)) {}

  const SimulatedWorld& world() const { return *world_; }

  // -- PromptingVlm --------------------------------------------------------

  std::string caption(const Image& view, const CallContext&) const override {
    const ViewStats s = ViewStats::of(view);
    std::string c = "a patch of " + world_->background_label().text();
    if (s.visible > 0) c += " with something hidden in it";
    return c;
  }

  std::vector<BBox> box_query(const Image& view, std::string_view, std::string_view,
                              const CallContext& ctx) const override {
    const ViewStats s = ViewStats::of(view);
    const auto key = [&](std::uint64_t stream, std::uint64_t k) {
      return unit(hash_combine({world_->seed(), stream, std::uint64_t(ctx.iteration),
                                std::uint64_t(ctx.patch_id), k}));
    };
    if (s.visible == 0) {
      // Hallucinated location somewhere in the view.
      const int w = std::max(1, static_cast<int>(view.width() * (0.25 + 0.25 * key(kBoxHallucination, 0))));
      const int h = std::max(1, static_cast<int>(view.height() * (0.25 + 0.25 * key(kBoxHallucination, 1))));
      const int x = static_cast<int>(key(kBoxHallucination, 2) * (view.width() - w + 1));
      const int y = static_cast<int>(key(kBoxHallucination, 3) * (view.height() - h + 1));
      return {BBox{x, y, x + w, y + h}};
    }
    const double noise = world_->settings().box_noise;
    BBox b = s.target_box;
    if (noise > 0.0) {
      const double w = b.width();
      const double h = b.height();
      auto shift = [&](std::uint64_t k, double size) {
        return static_cast<int>(std::lround((2.0 * key(kBoxNoise, k) - 1.0) * noise * size));
      };
      b.x_min += shift(0, w);
      b.x_max += shift(1, w);
      b.y_min += shift(2, h);
      b.y_max += shift(3, h);
    }
    return {clip_nonempty(b, view.size())};
  }

  NameAnswer name_query(const Image& view, std::string_view, std::string_view,
                        const CallContext& ctx) const override {
    const ViewStats s = ViewStats::of(view);
    const double seen = static_cast<double>(s.visible) / static_cast<double>(world_->target_area());
    const auto u = [&](std::uint64_t stream) {
      return hash_combine({world_->seed(), stream, std::uint64_t(ctx.iteration), std::uint64_t(ctx.patch_id)});
    };
    const auto& settings = world_->settings();
    const bool recognized = seen >= settings.name_visibility && unit(u(kNameHallucination)) >= settings.hallucination;
    // Raw VLM style text; the pipeline canonicalizes it.
    std::string back = capitalize(world_->background_label().text()) + ".";
    if (recognized) return {capitalize(world_->target_label().text()) + ".", back};
    const auto& ds = world_->distractors();
    if (ds.empty()) return {capitalize(world_->background_label().text()), back};
    return {ds[u(kNamePick) % ds.size()].label.text(), back};
  }

  ScoredVocabulary score_query(const Image& view, std::span<const Label> vocabulary,
                               const CallContext& ctx) const override {
    if (vocabulary.empty()) throw Error(Errc::invalid_argument, "score_query: empty vocabulary");
    const ViewStats s = ViewStats::of(view);
    const auto& settings = world_->settings();
    std::vector<double> logits;
    logits.reserve(vocabulary.size());
    for (const Label& label : vocabulary) {
      logits.push_back(settings.logit_scale * weight(label, s, ctx));
    }
    return ScoredVocabulary::softmax(vocabulary, logits);
  }

  /// Pre-softmax weight of [label] for a view with statistics [s].
  double weight(const Label& label, const ViewStats& s, const CallContext& ctx) const {
    const auto& settings = world_->settings();
    if (label == world_->target_label()) {
      const double visible = static_cast<double>(s.visible) / static_cast<double>(world_->target_area());
      return std::max(settings.score_floor, settings.target_magnitude * visible);
    }
    const int d = world_->distractor_index(label);
    if (d >= 0 && !s.has_fill && world_->distractor_active(static_cast<std::size_t>(d), ctx.iteration)) {
      return world_->distractors()[static_cast<std::size_t>(d)].magnitude;
    }
    return settings.score_floor;
  }

  // -- Inpainter -----------------------------------------------------------

  Image inpaint(const Image& view, const BinaryMask& region, std::string_view positive_prompt,
                std::string_view negative_prompt, const CallContext& ctx) const override {
    require_same_size(view.size(), region.size(), "sim inpaint");
    if (log_) log_->record(ctx, positive_prompt, negative_prompt);
    Image out = view;
    for (int y = 0; y < view.height(); ++y)
      for (int x = 0; x < view.width(); ++x)
        if (region.test(x, y)) out.set_pixel(x, y, kFillValue, kFillValue, kFillValue);
    return out;
  }

  // -- Detector ------------------------------------------------------------

  std::vector<Detection> detect(const Image& view, const Label& label,
                                const CallContext& ctx) const override {
    if (label != world_->target_label()) return {};
    const ViewStats s = ViewStats::of(view);
    if (s.visible == 0) return {};
    BBox b = s.target_box;
    const int j = world_->settings().detector_jitter;
    if (j > 0) {
      auto shift = [&](std::uint64_t k) {
        const double u = unit(hash_combine({world_->seed(), kDetectorJitter, std::uint64_t(ctx.iteration),
                                            std::uint64_t(ctx.patch_id), k}));
        return static_cast<int>(std::floor(u * (2 * j + 1))) - j;
      };
      b.x_min += shift(0);
      b.y_min += shift(1);
      b.x_max += shift(2);
      b.y_max += shift(3);
      b = clip_nonempty(b, view.size());
    }
    return {{b, static_cast<double>(s.visible) / static_cast<double>(world_->target_area())}};
  }

  // -- MaskGenerator -------------------------------------------------------

  SoftMask segment(const Image& view, std::span<const Point> points, const BBox& box,
                   const CallContext& ctx) const override {
    if (!box.valid_in(view.size())) {
      throw Error(Errc::invalid_argument, "sim segment: box " + to_string(box) + " invalid in view");
    }
    const BinaryMask fp = target_pixels(view);
    bool anchored = false;
    for (const Point& p : points) {
      if (p.x >= 0 && p.y >= 0 && p.x < view.width() && p.y < view.height() && fp.test(p.x, p.y)) {
        anchored = true;
        break;
      }
    }
    SoftMask out(view.size());
    if (!anchored) {
      for (int y = box.y_min; y < box.y_max; ++y)
        for (int x = box.x_min; x < box.x_max; ++x) out.at(x, y) = 0.5;
      return out;
    }
    const double noise = world_->settings().segment_noise;
    for (int y = box.y_min; y < box.y_max; ++y) {
      for (int x = box.x_min; x < box.x_max; ++x) {
        bool v = fp.test(x, y);
        if (noise > 0.0 && on_boundary(fp, x, y) &&
            unit(hash_combine({world_->seed(), kSegmentNoise, std::uint64_t(ctx.iteration),
                               std::uint64_t(ctx.patch_id), std::uint64_t(x), std::uint64_t(y)})) < noise) {
          v = !v;
        }
        out.at(x, y) = v ? 1.0 : 0.0;
      }
    }
    return out;
  }

  // -- SemanticScorer ------------------------------------------------------

  double similarity(const Image& view, const Label& label, const CallContext& ctx) const override {
    if (label != world_->target_label()) {
      return 0.2 * unit(hash_combine({world_->seed(), kLowSimilarity, hash_text(label.text()),
                                      std::uint64_t(ctx.iteration), std::uint64_t(ctx.patch_id)}));
    }
    // IoU of the view's non-zero support with the footprint.
    const ViewStats s = ViewStats::of(view);
    const double inter = static_cast<double>(s.visible);
    const double uni = static_cast<double>(s.support + world_->target_area()) - inter;
    return uni <= 0.0 ? 0.0 : std::clamp(inter / uni, 0.0, 1.0);
  }

  SoftMask heatmap(const Image& view, const Label& label, const CallContext&) const override {
    SoftMask out(view.size());
    if (label != world_->target_label()) return out;
    const ViewStats s = ViewStats::of(view);
    if (s.visible == 0) return out;
    // Peak at the visible target pixel nearest the centroid, decaying linearly.
    const double cx = s.sum_x / static_cast<double>(s.visible);
    const double cy = s.sum_y / static_cast<double>(s.visible);
    const BinaryMask fp = target_pixels(view);
    Point peak{-1, -1};
    double best = 0.0;
    for (int y = 0; y < view.height(); ++y) {
      for (int x = 0; x < view.width(); ++x) {
        if (!fp.test(x, y)) continue;
        const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (peak.x < 0 || d < best) {
          best = d;
          peak = {x, y};
        }
      }
    }
    const double radius = std::max(2.0, std::sqrt(static_cast<double>(s.visible)));
    for (int y = 0; y < view.height(); ++y) {
      for (int x = 0; x < view.width(); ++x) {
        const double d = std::hypot(x - peak.x, y - peak.y);
        out.at(x, y) = std::max(0.0, 1.0 - d / radius);
      }
    }
    return out;
  }

 private:
  static std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
  }

  static BBox clip_nonempty(BBox b, Size s) {
    b.x_min = std::clamp(b.x_min, 0, s.width - 1);
    b.y_min = std::clamp(b.y_min, 0, s.height - 1);
    b.x_max = std::clamp(b.x_max, b.x_min + 1, s.width);
    b.y_max = std::clamp(b.y_max, b.y_min + 1, s.height);
    return b;
  }

  static bool on_boundary(const BinaryMask& m, int x, int y) {
    const bool v = m.test(x, y);
    const int dx[] = {1, -1, 0, 0};
    const int dy[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
      if (m.test(nx, ny) != v) return true;
    }
    return false;
  }

  std::shared_ptr<const SimulatedWorld> world_;
  std::shared_ptr<PromptLog> log_;
};

inline Backends make_simulated_backends(std::shared_ptr<const SimulatedWorld> world,
                                        std::shared_ptr<PromptLog> log = nullptr) {
  auto sim = std::make_shared<const SimulatedBackends>(std::move(world), std::move(log));
  return {sim, sim, sim, sim, sim};
}

}  // namespace promptseg::sim
