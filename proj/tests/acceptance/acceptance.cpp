// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Optional argv[1]: path to the promptseg CLI, used
// for the worker-pool determinism check.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "promptseg/harness.hpp"
#include "support.hpp"

namespace promptseg {
namespace {

using Rational = boost::multiprecision::cpp_rational;
using testing::Rng;
using testing::ScratchDir;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string config_path(const char* name) { return std::string(PROMPTSEG_SOURCE_DIR) + "/configs/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 -------------------------------------------------------------------------

Verdict ledger_oracle() {
  const auto start = Clock::now();
  Rng rng(2024);
  constexpr int kTrials = 2000;
  int mismatches = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const int n = testing::uniform_int(rng, 1, 6), t = testing::uniform_int(rng, 1, 6);
    std::vector<Label> labels;
    for (int i = 0; i < n; ++i) labels.push_back(Label::from_canonical("label" + std::to_string(i)));
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& r : rows)
      for (double& v : r) v = testing::uniform(rng) < 0.15 ? 0.0 : testing::uniform(rng);

    ScoreLedger ledger;
    for (const auto& r : rows) ledger = progressive_update(ledger, LabelScores{labels, r});

    // Telescoped product in exact arithmetic; an all-zero product restarts from uniform.
    std::vector<Rational> running(static_cast<std::size_t>(n), Rational(1));
    for (const auto& r : rows) {
      std::vector<Rational> next(r.size());
      bool any = false;
      for (std::size_t i = 0; i < r.size(); ++i) {
        next[i] = running[i] * Rational(r[i]);
        any = any || next[i] != 0;
      }
      running = any ? next : std::vector<Rational>(r.size(), Rational(1));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < running.size(); ++i)
      if (running[i] > running[best]) best = i;
    mismatches += select_prompt(ledger) != labels[best];
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && secs < 5.0,
          fmt("%d random ledgers, %d mismatches, %.2f s (limit 5 s)", kTrials, mismatches, secs)};
}

// 2 -------------------------------------------------------------------------

Verdict flicker_suppression() {
  AppConfig config = load_config(config_path("flicker.conf"));
  config.workers = 1;
  const int n = 200;

  // Premise of the experiment, checked on the generated worlds.
  bool premise = config.simulation.settings.target_magnitude >= 0.25;
  for (int i = 0; i < n && premise; ++i) {
    const auto wc = make_world_config(config.simulation, world_seed(config.pipeline.seed, static_cast<std::uint64_t>(i)));
    premise = wc.distractors.size() == 4;
    for (const auto& d : wc.distractors)
      premise = premise && d.flicker_probability <= 0.4 &&
                d.magnitude <= 0.6 * config.simulation.settings.target_magnitude;
  }

  const auto start = Clock::now();
  const SimulationReport rep = cmd_simulate(config, n);
  const double secs = seconds_since(start);
  const double gain = rep.mining_accuracy - rep.ablation_accuracy;
  const bool pass = premise && rep.mining_accuracy >= 0.90 && gain >= 0.10 - 1e-12 && secs < 120.0;
  return {pass, fmt("%d worlds, mining %.3f vs single-iteration %.3f (gain %.3f, need >= 0.10 and >= 0.90), "
                    "premise %s, %.1f s (limit 120 s)",
                    n, rep.mining_accuracy, rep.ablation_accuracy, gain, premise ? "ok" : "violated", secs)};
}

// 3 -------------------------------------------------------------------------

Verdict blend_and_selection() {
  Rng rng(3033);
  int blend_violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int w = testing::uniform_int(rng, 1, 16), h = testing::uniform_int(rng, 1, 16);
    const Image x = testing::random_image(rng, w, h);
    const SoftMask m = trial % 4 ? testing::random_soft(rng, w, h) : testing::random_quantized(rng, w, h, 1);
    const double weight = trial % 10 == 0 ? (trial % 20 ? 0.0 : 1.0) : testing::uniform(rng);
    const Image out = blend_image(x, m, weight);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < 3; ++c) {
          const double in = x.at(xx, yy, c);
          const double lo = std::min(in, in * m.at(xx, yy));
          const double v = out.at(xx, yy, c);
          if (v > in + 1e-9 || v < lo - 1e-9) ++blend_violations;
        }
  }

  int selection_mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = testing::uniform_int(rng, 1, 8), w = testing::uniform_int(rng, 1, 8), h = testing::uniform_int(rng, 1, 8);
    std::vector<SoftMask> hist;
    for (int i = 0; i < n; ++i)
      hist.push_back(trial % 2 ? testing::random_soft(rng, w, h) : testing::random_quantized(rng, w, h, 2));
    std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0.0;
        for (const auto& m : hist) sum += m.at(x, y);
        for (int i = 0; i < n; ++i)
          dist[static_cast<std::size_t>(i)] += std::abs(n * hist[static_cast<std::size_t>(i)].at(x, y) - sum);
      }
    const int expected = static_cast<int>(std::min_element(dist.begin(), dist.end()) - dist.begin()) + 1;
    selection_mismatches += select_final_mask(hist).first != expected;
  }
  return {blend_violations == 0 && selection_mismatches == 0,
          fmt("1000 blend cases, %d bound violations; 500 histories, %d selection mismatches", blend_violations,
              selection_mismatches)};
}

// 4 -------------------------------------------------------------------------

Verdict metric_oracles() {
  int brute_mismatches = 0;
  for (int p = 0; p < 16; ++p) {
    for (int g = 0; g < 16; ++g) {
      SoftMask pred(2, 2);
      BinaryMask gt(2, 2);
      int tp = 0, fp = 0, fn = 0, diff = 0;
      for (int i = 0; i < 4; ++i) {
        const bool pb = (p >> i) & 1, gb = (g >> i) & 1;
        pred.values()[static_cast<std::size_t>(i)] = pb;
        gt.values()[static_cast<std::size_t>(i)] = gb;
        tp += pb && gb;
        fp += pb && !gb;
        fn += !pb && gb;
        diff += pb != gb;
      }
      const double precision = tp + fp ? double(tp) / (tp + fp) : 0.0;
      const double recall = tp + fn ? double(tp) / (tp + fn) : 0.0;
      const double f = precision + recall > 0 ? 1.3 * precision * recall / (0.3 * precision + recall) : 0.0;
      brute_mismatches += mae(pred, gt) != diff / 4.0;
      brute_mismatches += adaptive_fmeasure(pred, gt) != f;
    }
  }

  Rng rng(4044);
  int perfect_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = testing::uniform_int(rng, 2, 64), h = testing::uniform_int(rng, 2, 64);
    BinaryMask gt = testing::random_binary(rng, w, h, testing::uniform(rng, 0.05, 0.95));
    gt.set(testing::uniform_int(rng, 0, w - 1), testing::uniform_int(rng, 0, h - 1));
    const MetricValues v = evaluate_pair(to_soft(gt), gt);
    perfect_failures += !(std::abs(v.mae) <= 1e-6 && std::abs(v.f_beta - 1) <= 1e-6 && std::abs(v.e_phi - 1) <= 1e-6 &&
                          std::abs(v.s_alpha - 1) <= 1e-6);
  }

  int range_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int w = testing::uniform_int(rng, 1, 64), h = testing::uniform_int(rng, 1, 64);
    const SoftMask pred = trial % 3 ? testing::random_soft(rng, w, h) : testing::random_quantized(rng, w, h);
    const double density = trial % 10 == 0 ? (trial % 20 ? 0.0 : 1.0) : testing::uniform(rng);
    const MetricValues v = evaluate_pair(pred, testing::random_binary(rng, w, h, density));
    for (double m : {v.mae, v.f_beta, v.e_phi, v.s_alpha}) range_failures += !(m >= 0.0 && m <= 1.0);
  }
  return {brute_mismatches == 0 && perfect_failures == 0 && range_failures == 0,
          fmt("256 2x2 pairs: %d mismatches; 100 perfect predictions: %d failures; 1000 fuzz cases: %d out of range",
              brute_mismatches, perfect_failures, range_failures)};
}

// 5 -------------------------------------------------------------------------

Verdict patch_integrity() {
  int failures = 0;
  int canvases = 0;
  for (int w = 2; w <= 41; w += 3) {
    for (int h = 2; h <= 37; h += 5) {
      ++canvases;
      const PatchSet ps = build_patch_set(Image(w, h), PatchScheme::original_halve_quarters);
      failures += ps.patches.size() != 9;
      auto lifted = [&](std::initializer_list<PatchTag> tags) {
        SoftMask sum(ps.canvas);
        for (PatchTag t : tags) {
          const Patch& p = ps.patches[static_cast<std::size_t>(t)];
          const SoftMask l = lift_mask(SoftMask(p.view.size(), 1.0), p, ps.canvas);
          for (std::size_t i = 0; i < sum.pixel_count(); ++i) sum.values()[i] += l.values()[i];
        }
        return sum;
      };
      const SoftMask ones(ps.canvas, 1.0);
      using enum PatchTag;
      failures += lifted({original}) != ones;
      failures += lifted({halve_h_top, halve_h_bottom}) != ones;
      failures += lifted({halve_v_left, halve_v_right}) != ones;
      failures += lifted({quarter_tl, quarter_tr, quarter_bl, quarter_br}) != ones;
    }
  }
  return {failures == 0, fmt("%d canvas sizes, 9 patches each, %d tiling failures (tolerance 0)", canvases, failures)};
}

// 6 -------------------------------------------------------------------------

Verdict end_to_end() {
  AppConfig config = load_config(config_path("default.conf"));
  const int n = 50;
  int good = 0, nondeterministic = 0;
  double slowest = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = world_seed(config.pipeline.seed, static_cast<std::uint64_t>(i));
    const auto world = std::make_shared<const sim::SimulatedWorld>(make_world(config.simulation, seed));
    if (world->size() != Size{64, 64}) return {false, "world is not 64x64"};
    const auto start = Clock::now();
    const PipelineResult a = run_pipeline(world->canvas(), config.pipeline, sim::make_simulated_backends(world));
    slowest = std::max(slowest, seconds_since(start));
    const PipelineResult b = run_pipeline(world->canvas(), config.pipeline, sim::make_simulated_backends(world));
    bool same = a.final_mask == b.final_mask && a.chosen_index == b.chosen_index && a.history.size() == b.history.size();
    for (std::size_t k = 0; same && k < a.history.size(); ++k)
      same = a.history[k].mask == b.history[k].mask && a.history[k].ledger.cumulative == b.history[k].ledger.cumulative;
    nondeterministic += !same;
    good += iou(binarize(a.final_mask), world->target_region()) >= 0.9;
  }
  const double share = static_cast<double>(good) / n;
  return {share >= 0.8 && slowest < 10.0 && nondeterministic == 0,
          fmt("%d worlds, I=%d: IoU >= 0.9 in %.0f%% (need 80%%), slowest %.3f s/image (limit 10 s), "
              "%d non-identical reruns",
              n, config.pipeline.iterations, 100 * share, slowest, nondeterministic)};
}

// 7 -------------------------------------------------------------------------

Verdict iteration_trend() {
  std::string detail;
  bool pass = true;
  for (const char* name : {"default.conf", "flicker.conf"}) {
    const AppConfig config = load_config(config_path(name));
    const SimulationReport rep = cmd_simulate(config, 50);
    const auto& m = rep.mean_mae_by_iterations;
    bool monotone = m.size() == 5;
    for (std::size_t k = 1; k < m.size(); ++k) monotone = monotone && m[k] <= m[k - 1] + 0.01;
    pass = pass && monotone;
    detail += std::string(detail.empty() ? "" : "; ") + name + " M by I=1..5:";
    for (double v : m) detail += fmt(" %.5f", v);
  }
  return {pass, "50 worlds, " + detail + " (non-increasing within 0.01)"};
}

// 8 -------------------------------------------------------------------------

Verdict parallel_determinism(const char* cli) {
  ScratchDir dir("accept8");
  AppConfig config = load_config(config_path("flicker.conf"));
  cmd_simulate(config, 12, dir.path());
  const DatasetManifest dataset = load_dataset(dir / "images", std::nullopt);

  std::string how;
  if (cli) {
    how = "CLI";
    for (int workers : {1, 8}) {
      const std::string cmd = std::string("\"") + cli + "\" run --config \"" + config_path("flicker.conf") +
                              "\" --images \"" + (dir / "images").string() + "\" --out \"" +
                              (dir / ("out" + std::to_string(workers))).string() + "\" --workers " +
                              std::to_string(workers) + " > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, "CLI run failed: " + cmd};
    }
  } else {
    how = "library";
    for (int workers : {1, 8}) {
      config.workers = workers;
      cmd_run(config, dataset, dir / ("out" + std::to_string(workers)));
    }
  }
  int files = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(dir / "out1")) {
    ++files;
    const fs::path other = dir / "out8" / entry.path().filename();
    differing += !fs::exists(other) || slurp(entry.path()) != slurp(other);
  }
  int files8 = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir / "out8")) ++files8;
  const int expected = 2 * static_cast<int>(dataset.entries.size()) + 1;
  return {differing == 0 && files == expected && files8 == expected,
          fmt("%s run over %zu images: %d files with 1 worker, %d with 8, %d differing", how.c_str(),
              dataset.entries.size(), files, files8, differing)};
}

}  // namespace
}  // namespace promptseg

int main(int argc, char** argv) {
  using namespace promptseg;
  const char* cli = argc > 1 ? argv[1] : nullptr;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"ledger oracle equivalence", ledger_oracle},
      {"flicker suppression", flicker_suppression},
      {"blend bound and final-mask selection", blend_and_selection},
      {"metric oracles", metric_oracles},
      {"patch-scheme integrity", patch_integrity},
      {"end-to-end simulated pipeline", end_to_end},
      {"iteration trend", iteration_trend},
      {"determinism under parallelism", [cli] { return parallel_determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %zu %s: %s - %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
