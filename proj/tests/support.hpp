#pragma once

// Shared helpers for the test suites: seeded random inputs, scratch
// directories and canned simulator setups.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "promptseg/core.hpp"
#include "promptseg/harness.hpp"
#include "promptseg/simulator.hpp"

namespace promptseg::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline SoftMask random_soft(Rng& rng, int w, int h) {
  SoftMask m(w, h);
  for (double& v : m.values()) v = uniform(rng);
  return m;
}

/// Soft mask whose values are drawn from a small set, so ties and exact 0/1 occur.
inline SoftMask random_quantized(Rng& rng, int w, int h, int levels = 4) {
  SoftMask m(w, h);
  for (double& v : m.values()) v = uniform_int(rng, 0, levels) / static_cast<double>(levels);
  return m;
}

inline BinaryMask random_binary(Rng& rng, int w, int h, double p = 0.5) {
  BinaryMask m(w, h);
  for (auto& v : m.values()) v = uniform(rng) < p ? 1 : 0;
  return m;
}

inline Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (double& v : img.values()) v = uniform(rng);
  return img;
}

/// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("promptseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// A world with a fixed rectangular target and no distractors.
inline std::shared_ptr<const sim::SimulatedWorld> plain_world(BBox target, std::uint64_t seed = 7,
                                                              Size canvas = {64, 64}) {
  sim::WorldConfig c;
  c.canvas = canvas;
  c.target = sim::TargetShape{sim::TargetShape::Kind::rectangle, target};
  return std::make_shared<const sim::SimulatedWorld>(sim::SimulatedWorld::create(c, seed));
}

inline PipelineConfig default_pipeline() {
  PipelineConfig c;
  c.task_prompt = "camouflaged animal";
  return c;
}

/// Simulation options for the flicker experiment: the defaults plus noisy
/// VLM boxes so that single-iteration selection can be fooled.
inline AppConfig flicker_config() {
  AppConfig c;
  c.pipeline.task_prompt = "camouflaged animal";
  c.simulation.settings.box_noise = 0.6;
  return c;
}

}  // namespace promptseg::testing
