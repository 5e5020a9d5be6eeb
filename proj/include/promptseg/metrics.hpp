#pragma once

// Saliency-style evaluation measures for a soft prediction against a binary
// ground truth: mean absolute error, adaptive F-measure, mean enhanced
// alignment (E) measure and structure (S) measure.
//
// Binarizing a prediction at threshold t marks a pixel foreground iff
// pred >= t and pred > 0. The second condition keeps an all-zero prediction
// empty at t = 0, so a perfect prediction scores 1 at every threshold.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "promptseg/core.hpp"

namespace promptseg {

namespace detail {

inline bool foreground_at(double pred, double t) { return pred >= t && pred > 0.0; }

inline void check_pair(const SoftMask& pred, const BinaryMask& gt, const char* op) {
  require_same_size(pred.size(), gt.size(), op);
}

}  // namespace detail

inline double mae(const SoftMask& pred, const BinaryMask& gt) {
  detail::check_pair(pred, gt, "mae");
  auto p = pred.values();
  auto g = gt.values();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - (g[i] ? 1.0 : 0.0));
  return s / static_cast<double>(p.size());
}

/// F-measure with the prediction binarized at min(2 * mean, 1).
inline double adaptive_fmeasure(const SoftMask& pred, const BinaryMask& gt, double beta2 = 0.3) {
  detail::check_pair(pred, gt, "adaptive_fmeasure");
  const double t = std::min(2.0 * pred.mean(), 1.0);
  auto p = pred.values();
  auto g = gt.values();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool f = detail::foreground_at(p[i], t);
    if (f && g[i]) ++tp;
    else if (f) ++fp;
    else if (g[i]) ++fn;
  }
  const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision == 0.0 && recall == 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
}

/// E-measure of a binary foreground map given only its pixel-class counts
/// (n_fg_gt: FM=1,GT=1; n_fg_bg: FM=1,GT=0; n_bg_gt: FM=0,GT=1; n_bg_bg).
inline double emeasure_from_counts(double n_fg_gt, double n_fg_bg, double n_bg_gt, double n_bg_bg) {
  const double n = n_fg_gt + n_fg_bg + n_bg_gt + n_bg_bg;
  const double gt_mean = (n_fg_gt + n_bg_gt) / n;
  const double fm_mean = (n_fg_gt + n_fg_bg) / n;
  if (gt_mean == 0.0) return 1.0 - fm_mean;
  if (gt_mean == 1.0) return fm_mean;
  const auto enhanced = [&](double fm, double g) {
    const double a = g - gt_mean;
    const double b = fm - fm_mean;
    const double xi = 2.0 * a * b / (a * a + b * b + 1e-12);
    return (1.0 + xi) * (1.0 + xi) / 4.0;
  };
  return (n_fg_gt * enhanced(1, 1) + n_fg_bg * enhanced(1, 0) + n_bg_gt * enhanced(0, 1) +
          n_bg_bg * enhanced(0, 0)) /
         n;
}

/// Mean E-measure over thresholds k/255 for k = 0, stride, 2*stride, ... <= 255.
inline double mean_emeasure(const SoftMask& pred, const BinaryMask& gt, int stride = 1) {
  detail::check_pair(pred, gt, "mean_emeasure");
  if (stride < 1 || stride > 255) throw Error(Errc::invalid_argument, "mean_emeasure: stride outside [1,255]");
  // Positive predictions split by gt, sorted so each threshold is a binary search.
  std::vector<double> on_fg, on_bg;
  auto p = pred.values();
  auto g = gt.values();
  std::size_t n_gt = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]) ++n_gt;
    if (p[i] > 0.0) (g[i] ? on_fg : on_bg).push_back(p[i]);
  }
  std::sort(on_fg.begin(), on_fg.end());
  std::sort(on_bg.begin(), on_bg.end());
  const double n = static_cast<double>(p.size());
  const auto at_least = [](const std::vector<double>& v, double t) {
    return static_cast<double>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  };

  double total = 0.0;
  int count = 0;
  for (int k = 0; k <= 255; k += stride) {
    const double t = k / 255.0;
    const double fg_gt = at_least(on_fg, t);
    const double fg_bg = at_least(on_bg, t);
    const double bg_gt = static_cast<double>(n_gt) - fg_gt;
    const double bg_bg = n - static_cast<double>(n_gt) - fg_bg;
    total += emeasure_from_counts(fg_gt, fg_bg, bg_gt, bg_bg);
    ++count;
  }
  return std::clamp(total / count, 0.0, 1.0);
}

namespace detail {

// Object-level similarity of a set of foreground-likelihood values.
inline double object_score(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  if (x.size() > 1) {
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
  }
  return 2.0 * mean / (mean * mean + 1.0 + std::sqrt(var) + 1e-12);
}

inline double s_object(const SoftMask& pred, const BinaryMask& gt, double gt_mean) {
  std::vector<double> fg, bg;
  auto p = pred.values();
  auto g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]) fg.push_back(p[i]);
    else bg.push_back(1.0 - p[i]);
  }
  return gt_mean * object_score(fg) + (1.0 - gt_mean) * object_score(bg);
}

// SSIM-style structural score of pred against gt on [x0,x1) x [y0,y1).
inline double block_ssim(const SoftMask& pred, const BinaryMask& gt, int x0, int x1, int y0, int y1) {
  const double n = static_cast<double>(x1 - x0) * static_cast<double>(y1 - y0);
  if (n <= 0.0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      mx += pred.at(x, y);
      my += gt.test(x, y) ? 1.0 : 0.0;
    }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dx = pred.at(x, y) - mx;
      const double dy = (gt.test(x, y) ? 1.0 : 0.0) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  const double denom = n - 1.0 + DBL_EPSILON;
  sxx /= denom;
  syy /= denom;
  sxy /= denom;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0.0) return alpha / (beta + DBL_EPSILON);
  return beta == 0.0 ? 1.0 : 0.0;
}

inline double s_region(const SoftMask& pred, const BinaryMask& gt) {
  const int w = gt.width();
  const int h = gt.height();
  // Split point: 1-based gt centroid rounded half away from zero, used as a
  // count of leading columns/rows.
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (gt.test(x, y)) {
        total += 1.0;
        sx += x + 1;
        sy += y + 1;
      }
  int cx, cy;
  if (total == 0.0) {
    cx = static_cast<int>(std::lround(w / 2.0));
    cy = static_cast<int>(std::lround(h / 2.0));
  } else {
    cx = static_cast<int>(std::lround(sx / total));
    cy = static_cast<int>(std::lround(sy / total));
  }
  const double area = static_cast<double>(w) * h;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(w - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (h - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(pred, gt, 0, cx, 0, cy) + w2 * block_ssim(pred, gt, cx, w, 0, cy) +
         w3 * block_ssim(pred, gt, 0, cx, cy, h) + w4 * block_ssim(pred, gt, cx, w, cy, h);
}

}  // namespace detail

inline double smeasure(const SoftMask& pred, const BinaryMask& gt, double alpha = 0.5) {
  detail::check_pair(pred, gt, "smeasure");
  pred.validate();
  const double gt_mean = static_cast<double>(gt.count()) / static_cast<double>(gt.pixel_count());
  double s;
  if (gt_mean == 0.0) {
    s = 1.0 - pred.mean();
  } else if (gt_mean == 1.0) {
    s = pred.mean();
  } else {
    s = alpha * detail::s_object(pred, gt, gt_mean) + (1.0 - alpha) * detail::s_region(pred, gt);
  }
  return std::clamp(s, 0.0, 1.0);
}

struct MetricValues {
  double mae = 0.0;
  double f_beta = 0.0;
  double e_phi = 0.0;
  double s_alpha = 0.0;
};

inline MetricValues evaluate_pair(const SoftMask& pred, const BinaryMask& gt, int emeasure_stride = 1) {
  return {mae(pred, gt), adaptive_fmeasure(pred, gt), mean_emeasure(pred, gt, emeasure_stride), smeasure(pred, gt)};
}

struct EvalPair {
  std::string id;
  SoftMask pred;
  BinaryMask gt;
};

struct MetricReport {
  std::map<std::string, MetricValues> per_image;
  MetricValues aggregate;
  std::size_t count = 0;
};

/// Builds a report from already computed per-image values; aggregate is the plain mean.
inline MetricReport summarize(std::map<std::string, MetricValues> per_image) {
  if (per_image.empty()) throw Error(Errc::invalid_argument, "evaluate_dataset: no pairs");
  MetricReport r;
  r.per_image = std::move(per_image);
  r.count = r.per_image.size();
  for (const auto& [id, v] : r.per_image) {
    r.aggregate.mae += v.mae;
    r.aggregate.f_beta += v.f_beta;
    r.aggregate.e_phi += v.e_phi;
    r.aggregate.s_alpha += v.s_alpha;
  }
  const double n = static_cast<double>(r.count);
  r.aggregate.mae /= n;
  r.aggregate.f_beta /= n;
  r.aggregate.e_phi /= n;
  r.aggregate.s_alpha /= n;
  return r;
}

inline MetricReport evaluate_dataset(const std::vector<EvalPair>& pairs, int emeasure_stride = 1) {
  if (pairs.empty()) throw Error(Errc::invalid_argument, "evaluate_dataset: no pairs");
  std::map<std::string, MetricValues> per_image;
  for (const auto& p : pairs) {
    if (per_image.count(p.id)) throw Error(Errc::invalid_argument, "evaluate_dataset: duplicate id " + p.id);
    per_image[p.id] = evaluate_pair(p.pred, p.gt, emeasure_stride);
  }
  return summarize(std::move(per_image));
}

}  // namespace promptseg
