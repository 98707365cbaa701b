#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "romoseg/common.hpp"

namespace romoseg {

enum class RefineMode { kNone, kMorphological, kExternal };

struct RefinementConfig {
  RefineMode mode = RefineMode::kNone;
  std::string command;  // external refiner, invoked as "<command> <handoff dir>"
};

// Run configuration with the pipeline defaults. Parsing rejects unknown keys
// and any invariant violation with an error naming the offending field.
struct RunConfig {
  double theta_l_multiplier = 0.01;
  double theta_u_multiplier = 2.0;
  int iterations = 2;
  std::vector<int> hidden_layers = {8};
  double learning_rate = 0.02;
  int epochs = 25;
  double tau_sq = 0.01;
  double cycle_tolerance = 1.0;
  double inlier_drop_threshold = 0.5;
  std::uint64_t seed = 0;
  int lmeds_trials = 512;
  bool classical_sampson = false;
  double lipschitz_alpha = 1e-6;
  int jobs = 1;  // worker cap; 0 = hardware concurrency
  RefinementConfig refinement;

  void validate() const;
};

RunConfig parse_config_json(const std::string& json_text, const std::string& origin);
RunConfig load_config(const std::filesystem::path& path);

// Applies "--set key=value" overrides onto the serialized config before
// parsing; keys use dots for nesting (e.g. "refinement.mode=none") and must
// name existing fields.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides);

std::string config_to_json(const RunConfig& cfg);

}  // namespace romoseg
