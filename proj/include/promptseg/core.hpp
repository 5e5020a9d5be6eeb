#pragma once

// Image, mask and box types shared by every stage, plus the pixel algebra
// the pipeline is written in. All pixel values are doubles in [0, 1].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace promptseg {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  parse,
  io,
  adapter_not_configured,
  backend,
  stage,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct Size {
  int width = 0;
  int height = 0;
  friend bool operator==(const Size&, const Size&) = default;
};

inline std::string to_string(Size s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height);
}

inline void require_same_size(Size a, Size b, const char* op) {
  if (a != b) {
    throw Error(Errc::dimension_mismatch,
                std::string(op) + ": dimension mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

/// Half-open pixel rectangle [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return empty() ? 0 : static_cast<long>(width()) * height(); }
  bool empty() const { return x_max <= x_min || y_max <= y_min; }
  bool contains(int x, int y) const { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
  bool valid_in(Size s) const {
    return 0 <= x_min && x_min < x_max && x_max <= s.width && 0 <= y_min && y_min < y_max &&
           y_max <= s.height;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline BBox intersect(const BBox& a, const BBox& b) {
  return {std::max(a.x_min, b.x_min), std::max(a.y_min, b.y_min), std::min(a.x_max, b.x_max),
          std::min(a.y_max, b.y_max)};
}

inline std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
         std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ")";
}

namespace detail {

inline void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(Errc::invalid_argument, std::string(what) + ": value outside [0,1]");
  }
}

inline void check_dims(int w, int h, const char* what) {
  if (w < 1 || h < 1) {
    throw Error(Errc::invalid_argument, std::string(what) + ": empty dimensions");
  }
}

}  // namespace detail

/// Row-major scalar plane. Base of SoftMask; not used directly.
template <typename T>
class Plane {
 public:
  Plane() = default;
  Plane(int width, int height, T fill = T{})
      : size_{width, height}, data_(static_cast<std::size_t>(width) * height, fill) {
    detail::check_dims(width, height, "plane");
  }

  int width() const { return size_.width; }
  int height() const { return size_.height; }
  Size size() const { return size_; }
  std::size_t pixel_count() const { return data_.size(); }

  T& at(int x, int y) { return data_[index(x, y)]; }
  const T& at(int x, int y) const { return data_[index(x, y)]; }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 protected:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(size_.width) +
           static_cast<std::size_t>(x);
  }

  Size size_;
  std::vector<T> data_;
};

class SoftMask : public Plane<double> {
 public:
  SoftMask() = default;
  SoftMask(int width, int height, double fill = 0.0) : Plane(width, height, fill) {
    detail::check_unit(fill, "soft mask");
  }
  explicit SoftMask(Size s, double fill = 0.0) : SoftMask(s.width, s.height, fill) {}

  /// Rejects values outside [0,1]; used at trust boundaries (file loads, backend outputs).
  void validate() const {
    for (double v : data_) detail::check_unit(v, "soft mask");
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double mean() const { return sum() / static_cast<double>(data_.size()); }

  friend bool operator==(const SoftMask&, const SoftMask&) = default;
};

class BinaryMask : public Plane<std::uint8_t> {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false) : Plane(width, height, fill ? 1 : 0) {}
  explicit BinaryMask(Size s, bool fill = false) : BinaryMask(s.width, s.height, fill) {}

  bool test(int x, int y) const { return at(x, y) != 0; }
  void set(int x, int y, bool v = true) { at(x, y) = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v != 0;
    return n;
  }
  bool any() const { return count() > 0; }

  /// Fills [box] (clipped to the mask) with true.
  void fill(const BBox& box) {
    BBox b = intersect(box, {0, 0, width(), height()});
    for (int y = b.y_min; y < b.y_max; ++y)
      for (int x = b.x_min; x < b.x_max; ++x) set(x, y);
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Three-channel image, interleaved RGB, values in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : size_{width, height},
        data_(static_cast<std::size_t>(width) * height * kChannels, fill) {
    detail::check_dims(width, height, "image");
    detail::check_unit(fill, "image");
  }
  explicit Image(Size s, double fill = 0.0) : Image(s.width, s.height, fill) {}

  /// Builds from 8-bit interleaved RGB, normalizing by 255.
  static Image from_rgb8(int width, int height, std::span<const std::uint8_t> rgb) {
    Image img(width, height);
    if (rgb.size() != img.data_.size()) {
      throw Error(Errc::dimension_mismatch, "image: rgb buffer size mismatch");
    }
    for (std::size_t i = 0; i < rgb.size(); ++i) img.data_[i] = rgb[i] / 255.0;
    return img;
  }

  int width() const { return size_.width; }
  int height() const { return size_.height; }
  Size size() const { return size_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(size_.width) * size_.height; }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void set_pixel(int x, int y, double r, double g, double b) {
    const std::size_t i = index(x, y, 0);
    data_[i] = r;
    data_[i + 1] = g;
    data_[i + 2] = b;
  }

  void validate() const {
    for (double v : data_) detail::check_unit(v, "image");
  }

  /// Copy of the pixels inside [box], which must lie inside the image.
  Image crop(const BBox& box) const {
    if (!box.valid_in(size_)) {
      throw Error(Errc::invalid_argument, "image crop: box " + to_string(box) + " outside " +
                                              to_string(size_));
    }
    Image out(box.width(), box.height());
    for (int y = 0; y < box.height(); ++y) {
      const auto* src = &data_[index(box.x_min, box.y_min + y, 0)];
      std::copy(src, src + static_cast<std::ptrdiff_t>(box.width()) * kChannels,
                &out.data_[out.index(0, y, 0)]);
    }
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(size_.width) +
            static_cast<std::size_t>(x)) *
               kChannels +
           static_cast<std::size_t>(c);
  }

  Size size_;
  std::vector<double> data_;
};

inline constexpr double kDefaultBinarizeThreshold = 0.5;

/// Pixel is true iff its value is strictly greater than [threshold].
inline BinaryMask binarize(const SoftMask& mask, double threshold = kDefaultBinarizeThreshold) {
  BinaryMask out(mask.size());
  auto src = mask.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > threshold ? 1 : 0;
  return out;
}

inline SoftMask to_soft(const BinaryMask& mask) {
  SoftMask out(mask.size());
  auto src = mask.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 1.0 : 0.0;
  return out;
}

/// Mean absolute per-pixel difference.
inline double mask_l1_distance(const SoftMask& a, const SoftMask& b) {
  require_same_size(a.size(), b.size(), "mask_l1_distance");
  auto va = a.values();
  auto vb = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += std::abs(va[i] - vb[i]);
  return s / static_cast<double>(va.size());
}

inline SoftMask pointwise_product(const SoftMask& a, const SoftMask& b) {
  require_same_size(a.size(), b.size(), "pointwise_product");
  SoftMask out(a.size());
  auto va = a.values();
  auto vb = b.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * vb[i];
  return out;
}

/// Per-channel multiplication of each pixel by the mask value.
inline Image apply_mask(const Image& image, const SoftMask& mask) {
  require_same_size(image.size(), mask.size(), "apply_mask");
  Image out = image;
  auto m = mask.values();
  auto px = out.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (int c = 0; c < Image::kChannels; ++c) px[i * Image::kChannels + c] *= m[i];
  }
  return out;
}

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a.size(), b.size(), "iou");
  auto va = a.values();
  auto vb = b.values();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    inter += (va[i] && vb[i]);
    uni += (va[i] || vb[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace promptseg
