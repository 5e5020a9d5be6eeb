#pragma once

// Command implementations behind the CLI: run, evaluate, simulate.
// Everything written to disk is a deterministic function of the inputs and
// the configured seed; wall-clock timing is returned but never written.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include "promptseg/config.hpp"
#include "promptseg/image_io.hpp"
#include "promptseg/metrics.hpp"
#include "promptseg/pipeline.hpp"
#include "promptseg/simulator.hpp"

namespace promptseg {

using Json = nlohmann::ordered_json;

/// Calls fn(i) for i in [0, n) on up to [workers] threads. Exceptions escape
/// fn only as a rethrow of the first one after all threads joined.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error(Errc::io, "cannot write '" + path.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, "cannot move '" + path.string() + "' into place");
}

// ---------------------------------------------------------------------------
// Simulated worlds

inline const std::vector<std::string>& target_label_pool() {
  static const std::vector<std::string> pool{"frog", "gecko", "owl", "crab", "moth", "octopus", "flounder",
                                             "seahorse"};
  return pool;
}

inline const std::vector<std::string>& background_label_pool() {
  static const std::vector<std::string> pool{"grass", "foliage", "seabed", "soil"};
  return pool;
}

inline const std::vector<std::string>& distractor_label_pool() {
  static const std::vector<std::string> pool{"leaf", "rock",   "branch", "shadow", "moss",  "bark",
                                             "sand", "coral",  "stone",  "twig",   "flower", "log"};
  return pool;
}

/// Labels, distractors and settings for the world identified by [world_seed].
inline sim::WorldConfig make_world_config(const SimulationOptions& opts, std::uint64_t world_seed) {
  using namespace sim;
  auto draw = [&](std::uint64_t k) { return unit(hash_combine({world_seed, 0x5eedULL, k})); };
  auto pick = [&](const std::vector<std::string>& pool, std::uint64_t k) {
    return pool[static_cast<std::size_t>(draw(k) * static_cast<double>(pool.size())) % pool.size()];
  };
  WorldConfig c;
  c.canvas = {opts.canvas, opts.canvas};
  c.target_label = pick(target_label_pool(), 0);
  c.background_label = pick(background_label_pool(), 1);
  c.settings = opts.settings;

  std::vector<std::string> pool = distractor_label_pool();
  const int n = std::min<int>(opts.distractors, static_cast<int>(pool.size()));
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(draw(100 + i) * static_cast<double>(pool.size())) % pool.size();
    Distractor d;
    d.label = Label::from_canonical(pool[j]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    d.flicker_probability = opts.flicker_min + (opts.flicker_max - opts.flicker_min) * draw(200 + i);
    d.magnitude = opts.distractor_magnitude_min +
                  (opts.distractor_magnitude_max - opts.distractor_magnitude_min) * draw(300 + i);
    c.distractors.push_back(std::move(d));
  }
  return c;
}

/// Seed of the [index]-th world of a simulation run.
inline std::uint64_t world_seed(std::uint64_t base_seed, std::uint64_t index) {
  return sim::hash_combine({base_seed, 0x77041dULL, index});
}

inline sim::SimulatedWorld make_world(const SimulationOptions& opts, std::uint64_t seed) {
  return sim::SimulatedWorld::create(make_world_config(opts, seed), seed);
}

/// Backends for one image of a run. The simulated backend reads the target
/// footprint from the image's pixel encoding.
inline Backends backends_for_image(const AppConfig& config, const std::string& id, const Image& image) {
  if (config.pipeline.backend == "stub") return make_stub_backends();
  if (config.pipeline.backend != "simulated") {
    throw Error(Errc::invalid_argument, "unknown backend '" + config.pipeline.backend + "'");
  }
  const std::uint64_t seed = sim::hash_combine({config.pipeline.seed, sim::hash_text(id)});
  auto world = std::make_shared<const sim::SimulatedWorld>(
      sim::SimulatedWorld::from_image(make_world_config(config.simulation, seed), image, seed));
  return sim::make_simulated_backends(std::move(world));
}

// ---------------------------------------------------------------------------
// run

inline Json history_json(const std::vector<IterationRecord>& history) {
  Json its = Json::array();
  for (const auto& r : history) {
    Json vocab = Json::array();
    for (const auto& l : r.ledger.vocabulary) vocab.push_back(l.text());
    Json skipped = Json::array();
    for (const auto& s : r.skipped) skipped.push_back({{"stage", s.stage}, {"patch", s.patch_id}, {"reason", s.reason}});
    its.push_back({{"iteration", r.iteration},
                   {"selected", r.selected.text()},
                   {"vocabulary", vocab},
                   {"raw_scores", r.ledger.per_iteration_raw.back()},
                   {"cumulative", r.ledger.cumulative},
                   {"mask_patches", r.mask_records.size()},
                   {"mask_mean", r.mask.mean()},
                   {"skipped", skipped}});
  }
  return its;
}

struct RunOutcome {
  std::string id;
  bool ok = false;
  std::string error;
  int chosen_index = 0;
  std::string final_label;
  double seconds = 0.0;
};

struct RunSummary {
  std::vector<RunOutcome> outcomes;  // manifest order
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](auto& o) { return !o.ok; }));
  }
};

/// Runs the pipeline on every manifest entry and writes <id>_mask.png,
/// <id>_history.json and run_report.json into [out_dir].
inline RunSummary cmd_run(const AppConfig& config, const DatasetManifest& dataset, const fs::path& out_dir) {
  require_task_prompt(config);
  fs::create_directories(out_dir);
  RunSummary summary;
  summary.outcomes.resize(dataset.entries.size());

  parallel_for(dataset.entries.size(), config.workers, [&](std::size_t i) {
    const DatasetEntry& e = dataset.entries[i];
    RunOutcome& o = summary.outcomes[i];
    o.id = e.id;
    const auto start = Clock::now();
    Json record = {{"id", e.id}};
    try {
      const Image image = read_image(e.image_path);
      const Backends backends = backends_for_image(config, e.id, image);
      try {
        const PipelineResult result = run_pipeline(image, config.pipeline, backends);
        write_mask_png(result.final_mask, out_dir / (e.id + "_mask.png"));
        o.ok = true;
        o.chosen_index = result.chosen_index;
        o.final_label = result.history[static_cast<std::size_t>(result.chosen_index - 1)].selected.text();
        record["status"] = "ok";
        record["chosen_iteration"] = o.chosen_index;
        record["final_label"] = o.final_label;
        record["iterations"] = history_json(result.history);
      } catch (const PipelineError& pe) {
        record["iterations"] = history_json(pe.history());
        record["failed_stage"] = pe.stage();
        throw;
      }
    } catch (const std::exception& ex) {
      o.ok = false;
      o.error = ex.what();
      record["status"] = "failed";
      record["error"] = o.error;
    }
    write_text_atomic(out_dir / (e.id + "_history.json"), record.dump(2) + "\n");
    o.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  });

  Json images = Json::array();
  for (const auto& o : summary.outcomes) {
    Json j = {{"id", o.id}, {"status", o.ok ? "ok" : "failed"}};
    if (o.ok) {
      j["chosen_iteration"] = o.chosen_index;
      j["final_label"] = o.final_label;
    } else {
      j["error"] = o.error;
    }
    images.push_back(j);
  }
  const Json report = {{"images", images},
                       {"count", summary.outcomes.size()},
                       {"failures", summary.failures()},
                       {"warnings", dataset.warnings}};
  write_text_atomic(out_dir / "run_report.json", report.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// evaluate

/// Rounds to four significant digits.
inline double sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return std::strtod(buf, nullptr);
}

inline Json metrics_json(const MetricValues& v) {
  return {{"M", sig4(v.mae)}, {"F_beta", sig4(v.f_beta)}, {"E_phi", sig4(v.e_phi)}, {"S_alpha", sig4(v.s_alpha)}};
}

struct EvaluateOutcome {
  std::optional<MetricReport> report;
  std::map<std::string, std::string> errors;
  std::vector<std::string> warnings;
  Json json;
};

/// Prediction stem for image id X is X or X_mask.
inline std::string prediction_id(const std::string& stem) {
  constexpr std::string_view suffix = "_mask";
  if (stem.size() > suffix.size() && stem.ends_with(suffix)) return stem.substr(0, stem.size() - suffix.size());
  return stem;
}

inline EvaluateOutcome cmd_evaluate(const fs::path& pred_dir, const fs::path& gt_dir, int emeasure_stride = 1,
                                    int workers = 1) {
  EvaluateOutcome out;
  std::map<std::string, fs::path> preds;
  for (const auto& [stem, path] : list_images(pred_dir, out.warnings)) {
    const std::string id = prediction_id(stem);
    if (!preds.emplace(id, path).second) out.warnings.push_back("duplicate prediction for '" + id + "'");
  }
  const auto gts = list_images(gt_dir, out.warnings);

  std::vector<std::string> ids;
  for (const auto& [id, path] : preds) {
    if (gts.count(id)) ids.push_back(id);
    else out.warnings.push_back("prediction '" + id + "' has no ground truth");
  }
  for (const auto& [id, path] : gts)
    if (!preds.count(id)) out.warnings.push_back("ground truth '" + id + "' has no prediction");
  if (ids.empty()) throw Error(Errc::invalid_argument, "evaluate: no prediction/ground-truth pairs");

  std::vector<std::optional<MetricValues>> values(ids.size());
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    try {
      values[i] = evaluate_pair(read_soft_mask(preds.at(ids[i])), read_gt_mask(gts.at(ids[i])), emeasure_stride);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::map<std::string, MetricValues> per_image;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (values[i]) per_image[ids[i]] = *values[i];
    else out.errors[ids[i]] = errors[i];
  }
  Json per = Json::object();
  if (!per_image.empty()) {
    out.report = summarize(per_image);
    for (const auto& [id, v] : out.report->per_image) per[id] = metrics_json(v);
  }
  out.json = {{"count", per_image.size()},
              {"aggregate", out.report ? metrics_json(out.report->aggregate) : Json(nullptr)},
              {"per_image", per},
              {"errors", out.errors},
              {"warnings", out.warnings}};
  return out;
}

// ---------------------------------------------------------------------------
// simulate

struct WorldOutcome {
  std::uint64_t seed = 0;
  std::string target;
  std::string final_label;
  std::string ablation_label;
  int chosen_index = 1;
  double final_iou = 0.0;
  double ablation_iou = 0.0;
  /// MAE of the final mask of a run stopped after k iterations, k = 1..I.
  std::vector<double> mae_by_iterations;
  std::vector<std::string> selected_per_iteration;
};

struct SimulationReport {
  std::vector<WorldOutcome> worlds;
  double mining_accuracy = 0.0;
  double ablation_accuracy = 0.0;
  double mean_final_iou = 0.0;
  double mean_ablation_iou = 0.0;
  std::vector<double> mean_mae_by_iterations;
  Json json;
};

inline double footprint_iou(const SoftMask& mask, const BinaryMask& footprint) {
  return iou(binarize(mask), footprint);
}

/// Runs one world. The single-iteration ablation is the first iteration of
/// the same run: iteration k depends only on iterations before it.
inline WorldOutcome simulate_world(const AppConfig& config, std::uint64_t seed) {
  auto world = std::make_shared<const sim::SimulatedWorld>(make_world(config.simulation, seed));
  const Backends backends = sim::make_simulated_backends(world);
  const PipelineResult result = run_pipeline(world->canvas(), config.pipeline, backends);

  WorldOutcome o;
  o.seed = seed;
  o.target = world->target_label().text();
  o.chosen_index = result.chosen_index;
  o.final_label = result.history[static_cast<std::size_t>(result.chosen_index - 1)].selected.text();
  o.ablation_label = result.history.front().selected.text();
  o.final_iou = footprint_iou(result.final_mask, world->target_region());
  o.ablation_iou = footprint_iou(result.history.front().mask, world->target_region());
  const std::vector<SoftMask> masks = result.masks();
  for (std::size_t k = 1; k <= masks.size(); ++k) {
    const std::vector<SoftMask> prefix(masks.begin(), masks.begin() + static_cast<std::ptrdiff_t>(k));
    o.mae_by_iterations.push_back(mae(select_final_mask(prefix).second, world->target_region()));
  }
  for (const auto& r : result.history) o.selected_per_iteration.push_back(r.selected.text());
  return o;
}

inline SimulationReport cmd_simulate(const AppConfig& config, int n, const std::optional<fs::path>& export_dir = {}) {
  if (n < 1) throw Error(Errc::invalid_argument, "simulate: n must be >= 1");
  if (config.pipeline.backend != "simulated") throw Error(Errc::invalid_argument, "simulate needs backend=simulated");
  SimulationReport rep;
  rep.worlds.resize(static_cast<std::size_t>(n));
  if (export_dir) {
    fs::create_directories(*export_dir / "images");
    fs::create_directories(*export_dir / "gt");
  }
  parallel_for(rep.worlds.size(), config.workers, [&](std::size_t i) {
    const std::uint64_t seed = world_seed(config.pipeline.seed, i);
    rep.worlds[i] = simulate_world(config, seed);
    if (export_dir) {
      const auto world = make_world(config.simulation, seed);
      char id[32];
      std::snprintf(id, sizeof id, "world_%04zu", i);
      write_image_png(world.canvas(), *export_dir / "images" / (std::string(id) + ".png"));
      write_mask_png(to_soft(world.target_region()), *export_dir / "gt" / (std::string(id) + ".png"));
    }
  });

  const double count = static_cast<double>(n);
  rep.mean_mae_by_iterations.assign(static_cast<std::size_t>(config.pipeline.iterations), 0.0);
  Json rows = Json::array();
  for (const auto& w : rep.worlds) {
    rep.mining_accuracy += (w.final_label == w.target) / count;
    rep.ablation_accuracy += (w.ablation_label == w.target) / count;
    rep.mean_final_iou += w.final_iou / count;
    rep.mean_ablation_iou += w.ablation_iou / count;
    for (std::size_t k = 0; k < w.mae_by_iterations.size(); ++k) rep.mean_mae_by_iterations[k] += w.mae_by_iterations[k] / count;
    rows.push_back({{"seed", w.seed},
                    {"target", w.target},
                    {"final_label", w.final_label},
                    {"ablation_label", w.ablation_label},
                    {"selected_per_iteration", w.selected_per_iteration},
                    {"chosen_iteration", w.chosen_index},
                    {"final_iou", sig4(w.final_iou)},
                    {"ablation_iou", sig4(w.ablation_iou)},
                    {"M_by_iterations", [&] {
                       Json a = Json::array();
                       for (double v : w.mae_by_iterations) a.push_back(sig4(v));
                       return a;
                     }()}});
  }
  Json trend = Json::array();
  for (double v : rep.mean_mae_by_iterations) trend.push_back(sig4(v));
  rep.json = {{"worlds", n},
              {"iterations", config.pipeline.iterations},
              {"mining_accuracy", sig4(rep.mining_accuracy)},
              {"ablation_accuracy", sig4(rep.ablation_accuracy)},
              {"mean_final_iou", sig4(rep.mean_final_iou)},
              {"mean_ablation_iou", sig4(rep.mean_ablation_iou)},
              {"mean_M_by_iterations", trend},
              {"per_seed", rows}};
  return rep;
}

}  // namespace promptseg
