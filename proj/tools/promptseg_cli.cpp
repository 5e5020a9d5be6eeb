// promptseg command line: run / evaluate / simulate.
//
// Exit status: 0 success, 1 when any image or pair failed, 2 on usage or
// configuration errors. Log verbosity comes from PROMPTSEG_LOG
// (trace, debug, info, warn, error, off; default info). Logs go to stderr.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "promptseg/harness.hpp"

namespace {

using namespace promptseg;

void init_logging() {
  auto logger = spdlog::stderr_color_mt("promptseg");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PROMPTSEG_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

AppConfig config_with_overrides(const std::string& path, const std::optional<std::string>& task_prompt,
                                const std::optional<int>& workers) {
  AppConfig c = load_config(path);
  if (task_prompt) c.pipeline.task_prompt = *task_prompt;
  if (workers) c.workers = *workers;
  detail::validate_app_config(c);
  return c;
}

int do_run(const std::string& config_path, const std::string& images, const std::string& out,
           const std::optional<std::string>& task_prompt, const std::optional<int>& workers) {
  const AppConfig config = config_with_overrides(config_path, task_prompt, workers);
  require_task_prompt(config);
  const DatasetManifest dataset = load_dataset(images, std::nullopt);
  for (const auto& w : dataset.warnings) spdlog::warn("{}", w);
  spdlog::info("running {} image(s) with backend '{}', {} worker(s)", dataset.entries.size(),
               config.pipeline.backend, config.workers);
  const RunSummary summary = cmd_run(config, dataset, out);
  for (const auto& o : summary.outcomes) {
    if (o.ok) {
      spdlog::info("{}: label '{}' from iteration {} ({:.2f}s)", o.id, o.final_label, o.chosen_index, o.seconds);
    } else {
      spdlog::error("{}: {}", o.id, o.error);
    }
  }
  spdlog::info("wrote outputs to {}", out);
  return summary.failures() == 0 ? 0 : 1;
}

int do_evaluate(const std::string& pred, const std::string& gt, const std::optional<std::string>& out, int stride,
                int workers) {
  const EvaluateOutcome result = cmd_evaluate(pred, gt, stride, workers);
  for (const auto& w : result.warnings) spdlog::warn("{}", w);
  for (const auto& [id, e] : result.errors) spdlog::error("{}: {}", id, e);
  const std::string text = result.json.dump(2) + "\n";
  if (out) {
    write_text_atomic(*out, text);
    spdlog::info("wrote report to {}", *out);
  } else {
    std::cout << text;
  }
  return result.errors.empty() ? 0 : 1;
}

int do_simulate(const std::string& config_path, int n, const std::optional<std::string>& out,
                const std::optional<std::string>& export_dir, const std::optional<int>& workers) {
  const AppConfig config = config_with_overrides(config_path, std::nullopt, workers);
  std::optional<fs::path> exp;
  if (export_dir) exp = fs::path(*export_dir);
  const SimulationReport rep = cmd_simulate(config, n, exp);
  spdlog::info("mining accuracy {:.3f}, single-iteration accuracy {:.3f}, mean final IoU {:.3f}",
               rep.mining_accuracy, rep.ablation_accuracy, rep.mean_final_iou);
  const std::string text = rep.json.dump(2) + "\n";
  if (out) {
    write_text_atomic(*out, text);
    spdlog::info("wrote report to {}", *out);
  } else {
    std::cout << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Iterative prompt mining and segmentation with pluggable model backends"};
  app.require_subcommand(1);

  std::string config_path, images, out_dir = "out", pred, gt;
  std::optional<std::string> out_file, task_prompt, export_dir;
  std::optional<int> workers;
  int n = 0;
  int stride = 1;
  int eval_workers = 1;

  auto* run = app.add_subcommand("run", "Segment every image in a directory");
  run->add_option("--config", config_path, "key=value configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("--images", images, "directory of PNG/JPEG images")->required()->check(CLI::ExistingDirectory);
  run->add_option("--out", out_dir, "output directory")->capture_default_str();
  run->add_option("--task-prompt", task_prompt, "overrides task_prompt from the config");
  run->add_option("--workers", workers, "overrides workers from the config")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
  eval->add_option("--pred", pred, "directory of predicted masks")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", gt, "directory of ground-truth masks")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_file, "report file (stdout when omitted)");
  eval->add_option("--emeasure-stride", stride, "threshold stride for the E-measure sweep")->check(CLI::Range(1, 255));
  eval->add_option("--workers", eval_workers, "parallel workers")->check(CLI::PositiveNumber);

  auto* simulate = app.add_subcommand("simulate", "Mining versus single-iteration experiment on simulated worlds");
  simulate->add_option("--config", config_path, "key=value configuration file")->required()->check(CLI::ExistingFile);
  simulate->add_option("--n", n, "number of worlds")->required();
  simulate->add_option("--out", out_file, "report file (stdout when omitted)");
  simulate->add_option("--export", export_dir, "also write rendered images and ground truth here");
  simulate->add_option("--workers", workers, "overrides workers from the config")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return do_run(config_path, images, out_dir, task_prompt, workers);
    if (eval->parsed()) return do_evaluate(pred, gt, out_file, stride, eval_workers);
    return do_simulate(config_path, n, out_file, export_dir, workers);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == Errc::parse || e.code() == Errc::invalid_argument ? 2 : 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
