#pragma once

// Flat key=value configuration. One entry per line, '#' starts a comment,
// whitespace around keys and values is ignored. Unknown keys are errors.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "promptseg/pipeline.hpp"
#include "promptseg/simulator.hpp"

namespace promptseg {

/// Parameters for generated simulator worlds (simulate) and for worlds
/// recovered from rendered images (run with the simulated backend).
struct SimulationOptions {
  int canvas = 64;
  int distractors = 4;
  double flicker_min = 0.2;
  double flicker_max = 0.4;
  double distractor_magnitude_min = 0.4;
  double distractor_magnitude_max = 0.6;
  sim::SimSettings settings;
};

struct AppConfig {
  PipelineConfig pipeline;
  SimulationOptions simulation;
  int workers = 1;
  int emeasure_stride = 1;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

[[noreturn]] inline void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw Error(Errc::parse, "config key '" + std::string(key) + "': cannot parse '" + std::string(value) +
                               "' as " + std::string(expected));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, const char* expected) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) bad_value(key, value, expected);
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean");
}

template <typename T, typename Parse>
T parse_or_rethrow(std::string_view key, std::string_view value, Parse&& parse) {
  try {
    return parse(value);
  } catch (const Error&) {
    bad_value(key, value, "a valid choice");
  }
}

using Setter = std::function<void(AppConfig&, std::string_view key, std::string_view value)>;

inline const std::map<std::string, Setter, std::less<>>& config_setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto real = [&](const char* key, auto member) {
      t[key] = [member](AppConfig& c, std::string_view k, std::string_view v) {
        member(c) = parse_number<double>(k, v, "a number");
      };
    };
    auto integer = [&](const char* key, auto member) {
      t[key] = [member](AppConfig& c, std::string_view k, std::string_view v) {
        member(c) = parse_number<int>(k, v, "an integer");
      };
    };
    auto text = [&](const char* key, auto member) {
      t[key] = [member](AppConfig& c, std::string_view, std::string_view v) { member(c) = std::string(v); };
    };

    integer("iterations", [](AppConfig& c) -> int& { return c.pipeline.iterations; });
    real("blend_weight", [](AppConfig& c) -> double& { return c.pipeline.blend_weight; });
    t["patch_scheme"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      c.pipeline.patch_scheme = parse_or_rethrow<PatchScheme>(k, v, parse_patch_scheme);
    };
    text("task_prompt", [](AppConfig& c) -> std::string& { return c.pipeline.task_prompt; });
    t["seed"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      c.pipeline.seed = parse_number<std::uint64_t>(k, v, "an unsigned integer");
    };
    t["backend"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      if (v != "simulated" && v != "stub") bad_value(k, v, "'simulated' or 'stub'");
      c.pipeline.backend = std::string(v);
    };
    text("prompt_box_template", [](AppConfig& c) -> std::string& { return c.pipeline.templates.box; });
    text("prompt_name_template", [](AppConfig& c) -> std::string& { return c.pipeline.templates.name; });
    t["candidate_policy"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      if (v == "accumulate") c.pipeline.candidate_policy = CandidatePolicy::accumulate;
      else if (v == "reset") c.pipeline.candidate_policy = CandidatePolicy::reset;
      else bad_value(k, v, "'accumulate' or 'reset'");
    };
    t["clamp_negative"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      c.pipeline.clamp_negative = parse_bool(k, v);
    };
    t["zero_sum_policy"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      if (v == "uniform") c.pipeline.ledger.zero_sum = ZeroSumPolicy::uniform;
      else if (v == "carry") c.pipeline.ledger.zero_sum = ZeroSumPolicy::carry;
      else bad_value(k, v, "'uniform' or 'carry'");
    };
    real("ledger_floor", [](AppConfig& c) -> double& { return c.pipeline.ledger.floor; });
    real("similarity_threshold", [](AppConfig& c) -> double& { return c.pipeline.similarity_threshold; });
    t["aggregation"] = [](AppConfig& c, std::string_view k, std::string_view v) {
      c.pipeline.aggregation = parse_or_rethrow<AggregationMode>(k, v, parse_aggregation_mode);
    };
    integer("n_points", [](AppConfig& c) -> int& { return c.pipeline.n_points; });
    real("region_threshold", [](AppConfig& c) -> double& { return c.pipeline.region_threshold; });
    real("max_seconds", [](AppConfig& c) -> double& { return c.pipeline.max_seconds; });
    integer("workers", [](AppConfig& c) -> int& { return c.workers; });
    integer("emeasure_stride", [](AppConfig& c) -> int& { return c.emeasure_stride; });

    integer("sim_canvas", [](AppConfig& c) -> int& { return c.simulation.canvas; });
    integer("sim_distractors", [](AppConfig& c) -> int& { return c.simulation.distractors; });
    real("sim_flicker_min", [](AppConfig& c) -> double& { return c.simulation.flicker_min; });
    real("sim_flicker_max", [](AppConfig& c) -> double& { return c.simulation.flicker_max; });
    real("sim_distractor_magnitude_min",
         [](AppConfig& c) -> double& { return c.simulation.distractor_magnitude_min; });
    real("sim_distractor_magnitude_max",
         [](AppConfig& c) -> double& { return c.simulation.distractor_magnitude_max; });
    real("sim_target_magnitude", [](AppConfig& c) -> double& { return c.simulation.settings.target_magnitude; });
    real("sim_logit_scale", [](AppConfig& c) -> double& { return c.simulation.settings.logit_scale; });
    real("sim_score_floor", [](AppConfig& c) -> double& { return c.simulation.settings.score_floor; });
    real("sim_box_noise", [](AppConfig& c) -> double& { return c.simulation.settings.box_noise; });
    integer("sim_detector_jitter", [](AppConfig& c) -> int& { return c.simulation.settings.detector_jitter; });
    real("sim_segment_noise", [](AppConfig& c) -> double& { return c.simulation.settings.segment_noise; });
    real("sim_hallucination", [](AppConfig& c) -> double& { return c.simulation.settings.hallucination; });
    real("sim_name_visibility", [](AppConfig& c) -> double& { return c.simulation.settings.name_visibility; });
    return t;
  }();
  return table;
}

inline void validate_app_config(const AppConfig& c) {
  c.pipeline.validate();
  if (c.workers < 1) throw Error(Errc::invalid_argument, "config key 'workers' must be >= 1");
  if (c.emeasure_stride < 1 || c.emeasure_stride > 255) {
    throw Error(Errc::invalid_argument, "config key 'emeasure_stride' must be in [1,255]");
  }
  const auto& s = c.simulation;
  if (s.canvas < 8) throw Error(Errc::invalid_argument, "config key 'sim_canvas' must be >= 8");
  if (s.distractors < 0) throw Error(Errc::invalid_argument, "config key 'sim_distractors' must be >= 0");
  if (s.settings.detector_jitter < 0 || s.settings.detector_jitter > 2) {
    throw Error(Errc::invalid_argument, "config key 'sim_detector_jitter' must be in [0,2]");
  }
  for (auto [v, key] : {std::pair{s.settings.target_magnitude, "sim_target_magnitude"},
                        std::pair{s.settings.score_floor, "sim_score_floor"},
                        std::pair{s.settings.segment_noise, "sim_segment_noise"},
                        std::pair{s.settings.hallucination, "sim_hallucination"},
                        std::pair{s.settings.name_visibility, "sim_name_visibility"}}) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::invalid_argument, std::string("config key '") + key + "' must be in [0,1]");
  }
  if (!(s.settings.box_noise >= 0.0)) throw Error(Errc::invalid_argument, "config key 'sim_box_noise' must be >= 0");
  if (!(s.settings.logit_scale > 0.0)) throw Error(Errc::invalid_argument, "config key 'sim_logit_scale' must be > 0");
  auto unit_range = [](double lo, double hi, const char* key) {
    if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) {
      throw Error(Errc::invalid_argument, std::string("config keys '") + key + "_min/_max' must satisfy 0<=min<=max<=1");
    }
  };
  unit_range(s.flicker_min, s.flicker_max, "sim_flicker");
  unit_range(s.distractor_magnitude_min, s.distractor_magnitude_max, "sim_distractor_magnitude");
}

}  // namespace detail

/// Parses configuration text. Keys absent from [text] keep their defaults.
inline AppConfig parse_config(std::string_view text) {
  AppConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  const auto& setters = detail::config_setters();
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = detail::trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::parse, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string_view key = detail::trim(body.substr(0, eq));
    const std::string_view value = detail::trim(body.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error(Errc::parse, "unknown config key '" + std::string(key) + "'");
    it->second(config, key, value);
  }
  detail::validate_app_config(config);
  return config;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Errors naming 'task_prompt' when it is required but unset.
inline void require_task_prompt(const AppConfig& c) {
  if (detail::trim(c.pipeline.task_prompt).empty()) {
    throw Error(Errc::invalid_argument, "missing required config key 'task_prompt'");
  }
}

}  // namespace promptseg
