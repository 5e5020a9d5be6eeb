#pragma once

// File I/O: image and mask decoding through OpenCV, atomic PNG mask writes,
// and dataset discovery by filename stem.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "promptseg/core.hpp"

namespace promptseg {

namespace fs = std::filesystem;

/// Decodes PNG or JPEG into 8-bit RGB, normalized to [0,1].
inline Image read_image(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(Errc::io, "cannot decode image '" + path.string() + "'");
  Image img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.set_pixel(x, y, row[x][2] / 255.0, row[x][1] / 255.0, row[x][0] / 255.0);
    }
  }
  return img;
}

/// Decodes a grayscale file into a soft mask with values v/255.
inline SoftMask read_soft_mask(const fs::path& path) {
  const cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw Error(Errc::io, "cannot decode mask '" + path.string() + "'");
  SoftMask m(gray.cols, gray.rows);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) m.at(x, y) = row[x] / 255.0;
  }
  return m;
}

/// Ground truth: grayscale values above 127 are foreground.
inline BinaryMask read_gt_mask(const fs::path& path) {
  const cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw Error(Errc::io, "cannot decode mask '" + path.string() + "'");
  BinaryMask m(gray.cols, gray.rows);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) m.set(x, y, row[x] > 127);
  }
  return m;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline void write_png_atomic(const cv::Mat& mat, const fs::path& path) {
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp.png");
  std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  bool ok = false;
  try {
    ok = cv::imwrite(tmp.string(), mat, params);
  } catch (const cv::Exception& e) {
    throw Error(Errc::io, "cannot write '" + path.string() + "': " + e.what());
  }
  if (!ok) throw Error(Errc::io, "cannot write '" + path.string() + "'");
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::io, "cannot move mask into place at '" + path.string() + "'");
  }
}

}  // namespace detail

/// Writes round(255 * m) as an 8-bit grayscale PNG. The file appears only once complete.
inline void write_mask_png(const SoftMask& mask, const fs::path& path) {
  cv::Mat gray(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = to_byte(mask.at(x, y));
  }
  detail::write_png_atomic(gray, path);
}

inline void write_image_png(const Image& image, const fs::path& path) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      row[x] = {to_byte(image.at(x, y, 2)), to_byte(image.at(x, y, 1)), to_byte(image.at(x, y, 0))};
    }
  }
  detail::write_png_atomic(bgr, path);
}

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Image files in [dir] keyed by stem. Duplicate stems keep the
/// lexicographically first path and add a warning.
inline std::map<std::string, fs::path> list_images(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw Error(Errc::io, "not a directory: '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    if (entry.path().filename().string().starts_with(".")) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, fs::path> out;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    if (!out.emplace(stem, f).second) warnings.push_back("duplicate stem '" + stem + "', ignoring " + f.string());
  }
  return out;
}

struct DatasetEntry {
  std::string id;
  fs::path image_path;
  std::optional<fs::path> gt_path;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;  // sorted by id
  std::vector<std::string> warnings;
};

/// Pairs images with ground truth by stem. Undecodable images are skipped
/// with a warning; ground truth without an image is ignored with a warning.
inline DatasetManifest load_dataset(const fs::path& images_dir, const std::optional<fs::path>& gt_dir) {
  DatasetManifest m;
  const auto images = list_images(images_dir, m.warnings);
  std::map<std::string, fs::path> gts;
  if (gt_dir) gts = list_images(*gt_dir, m.warnings);

  for (const auto& [id, path] : images) {
    if (!cv::haveImageReader(path.string())) {
      m.warnings.push_back("unreadable image '" + path.string() + "', skipped");
      continue;
    }
    DatasetEntry e{id, path, std::nullopt};
    if (gt_dir) {
      if (auto g = gts.find(id); g != gts.end()) e.gt_path = g->second;
      else m.warnings.push_back("no ground truth for '" + id + "'");
    }
    m.entries.push_back(std::move(e));
  }
  for (const auto& [id, path] : gts) {
    if (!images.count(id)) m.warnings.push_back("ground truth '" + path.string() + "' has no image, ignored");
  }
  if (m.entries.empty()) throw Error(Errc::io, "no readable images in '" + images_dir.string() + "'");
  return m;
}

}  // namespace promptseg
