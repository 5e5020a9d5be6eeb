#pragma once

// Model contracts consumed by the pipeline. Each call carries a CallContext
// (iteration, patch) so deterministic test backends can vary their behaviour
// across iterations reproducibly; model adapters are free to ignore it.

#include <cctype>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptseg/core.hpp"

namespace promptseg {

/// Canonical label text: non-empty, lowercase, no surrounding whitespace.
class Label {
 public:
  Label() = default;

  /// Wraps already-canonical text; throws if [text] is not canonical.
  static Label from_canonical(std::string text) {
    if (text.empty() || std::isspace(static_cast<unsigned char>(text.front())) ||
        std::isspace(static_cast<unsigned char>(text.back()))) {
      throw Error(Errc::invalid_argument, "label '" + text + "' is not canonical");
    }
    for (char c : text) {
      if (std::isupper(static_cast<unsigned char>(c))) {
        throw Error(Errc::invalid_argument, "label '" + text + "' is not lowercase");
      }
    }
    Label l;
    l.text_ = std::move(text);
    return l;
  }

  const std::string& text() const { return text_; }
  bool empty() const { return text_.empty(); }

  friend bool operator==(const Label&, const Label&) = default;
  friend auto operator<=>(const Label&, const Label&) = default;

 private:
  std::string text_;
};

inline std::vector<Label> make_labels(std::initializer_list<const char*> names) {
  std::vector<Label> out;
  for (const char* n : names) out.push_back(Label::from_canonical(n));
  return out;
}

/// Softmax-normalized scores over an explicit, ordered vocabulary.
class ScoredVocabulary {
 public:
  static constexpr double kSumTolerance = 1e-6;

  ScoredVocabulary() = default;
  explicit ScoredVocabulary(std::vector<std::pair<Label, double>> entries)
      : entries_(std::move(entries)) {
    if (entries_.empty()) throw Error(Errc::invalid_argument, "scored vocabulary is empty");
    double sum = 0.0;
    for (const auto& [label, score] : entries_) {
      if (!(score >= 0.0 && score <= 1.0)) {
        throw Error(Errc::invalid_argument, "score for '" + label.text() + "' outside [0,1]");
      }
      sum += score;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw Error(Errc::invalid_argument, "scored vocabulary does not sum to 1");
    }
  }

  /// Softmax over raw logits, in vocabulary order.
  static ScoredVocabulary softmax(std::span<const Label> vocabulary, std::span<const double> logits) {
    if (vocabulary.size() != logits.size() || vocabulary.empty()) {
      throw Error(Errc::invalid_argument, "softmax: vocabulary/logit size mismatch");
    }
    double peak = logits[0];
    for (double l : logits) peak = std::max(peak, l);
    std::vector<double> e(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += e[i] = std::exp(logits[i] - peak);
    std::vector<std::pair<Label, double>> entries;
    entries.reserve(vocabulary.size());
    for (std::size_t i = 0; i < vocabulary.size(); ++i) entries.emplace_back(vocabulary[i], e[i] / total);
    return ScoredVocabulary(std::move(entries));
  }

  const std::vector<std::pair<Label, double>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  double score(const Label& label) const {
    for (const auto& [l, s] : entries_)
      if (l == label) return s;
    throw Error(Errc::invalid_argument, "label '" + label.text() + "' not in scored vocabulary");
  }

 private:
  std::vector<std::pair<Label, double>> entries_;
};

struct CallContext {
  int iteration = 1;
  int patch_id = 0;
};

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Raw (uncanonicalized) answer to the naming query.
struct NameAnswer {
  std::string fore;
  std::string back;
};

struct Detection {
  BBox box;
  double confidence = 0.0;
};

class PromptingVlm {
 public:
  virtual ~PromptingVlm() = default;
  virtual std::string caption(const Image& view, const CallContext& ctx) const = 0;
  /// Boxes in [view] coordinates for the task objects named by [prompt].
  virtual std::vector<BBox> box_query(const Image& view, std::string_view caption,
                                      std::string_view prompt, const CallContext& ctx) const = 0;
  virtual NameAnswer name_query(const Image& view, std::string_view caption,
                                std::string_view prompt, const CallContext& ctx) const = 0;
  /// Must be deterministic for identical inputs.
  virtual ScoredVocabulary score_query(const Image& view, std::span<const Label> vocabulary,
                                       const CallContext& ctx) const = 0;
};

class Inpainter {
 public:
  virtual ~Inpainter() = default;
  /// Output has the input's size; pixels outside [region] must be bit-identical to the input.
  virtual Image inpaint(const Image& view, const BinaryMask& region, std::string_view positive_prompt,
                        std::string_view negative_prompt, const CallContext& ctx) const = 0;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const Image& view, const Label& label,
                                        const CallContext& ctx) const = 0;
};

class MaskGenerator {
 public:
  virtual ~MaskGenerator() = default;
  virtual SoftMask segment(const Image& view, std::span<const Point> points, const BBox& box,
                           const CallContext& ctx) const = 0;
};

class SemanticScorer {
 public:
  virtual ~SemanticScorer() = default;
  /// Image-text similarity in [0,1].
  virtual double similarity(const Image& view, const Label& label, const CallContext& ctx) const = 0;
  /// Spatial prior for [label] with the view's dimensions.
  virtual SoftMask heatmap(const Image& view, const Label& label, const CallContext& ctx) const = 0;
};

struct Backends {
  std::shared_ptr<const PromptingVlm> vlm;
  std::shared_ptr<const Inpainter> inpainter;
  std::shared_ptr<const Detector> detector;
  std::shared_ptr<const MaskGenerator> mask_generator;
  std::shared_ptr<const SemanticScorer> scorer;

  bool complete() const { return vlm && inpainter && detector && mask_generator && scorer; }
};

/// Placeholder for model-service adapters. Every call fails with
/// Errc::adapter_not_configured so the wiring can be exercised without weights.
class StubAdapter final : public PromptingVlm,
                          public Inpainter,
                          public Detector,
                          public MaskGenerator,
                          public SemanticScorer {
 public:
  std::string caption(const Image&, const CallContext&) const override { fail("caption"); }
  std::vector<BBox> box_query(const Image&, std::string_view, std::string_view,
                              const CallContext&) const override {
    fail("box_query");
  }
  NameAnswer name_query(const Image&, std::string_view, std::string_view,
                        const CallContext&) const override {
    fail("name_query");
  }
  ScoredVocabulary score_query(const Image&, std::span<const Label>,
                               const CallContext&) const override {
    fail("score_query");
  }
  Image inpaint(const Image&, const BinaryMask&, std::string_view, std::string_view,
                const CallContext&) const override {
    fail("inpaint");
  }
  std::vector<Detection> detect(const Image&, const Label&, const CallContext&) const override {
    fail("detect");
  }
  SoftMask segment(const Image&, std::span<const Point>, const BBox&,
                   const CallContext&) const override {
    fail("segment");
  }
  double similarity(const Image&, const Label&, const CallContext&) const override {
    fail("similarity");
  }
  SoftMask heatmap(const Image&, const Label&, const CallContext&) const override {
    fail("heatmap");
  }

 private:
  [[noreturn]] static void fail(const char* op) {
    throw Error(Errc::adapter_not_configured, std::string("adapter not configured: ") + op);
  }
};

inline Backends make_stub_backends() {
  auto stub = std::make_shared<const StubAdapter>();
  return {stub, stub, stub, stub, stub};
}

}  // namespace promptseg
