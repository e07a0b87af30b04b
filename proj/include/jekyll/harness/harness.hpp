#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jekyll/harness/config.hpp"
#include "jekyll/metrics/metrics.hpp"

namespace jekyll::harness {

struct StepContext {
  const Config& config;
  std::filesystem::path artifact_dir;
  std::uint64_t seed;
  std::string config_hash;
};

struct PlanStep {
  std::string name;
  std::vector<std::string> inputs;   // paths relative to the artifact dir
  std::vector<std::string> outputs;  // files or directories the step creates
  std::function<void(const StepContext&)> run;
};

struct ExperimentPlan {
  std::vector<PlanStep> steps;
  Config config;
  std::filesystem::path artifact_dir;
  bool resumable = true;

  // Throws ValidationError on duplicate names, cyclic dependencies, or an
  // input that no earlier step produces.
  void validate() const;
};

// Step B depends on step A when one of B's inputs is (inside) one of A's outputs.
std::vector<std::vector<std::size_t>> step_dependencies(const std::vector<PlanStep>& steps);

enum class StepState { pending, done, skipped, failed };
const char* to_string(StepState s);

struct StepStatus {
  std::string name;
  StepState state = StepState::pending;
  std::string error;
};

struct RunResult {
  std::vector<StepStatus> steps;
  bool ok = true;
  std::filesystem::path state_file;
};

// Executes pending steps in order, recording each in state.json. Completed
// steps with a matching config hash are skipped when the plan is resumable.
// A failing step stops the run; its cause is recorded and returned.
RunResult run_experiment(const ExperimentPlan& plan);

// The standard pipeline: synth -> prepare -> classifiers -> victims -> gan -> evaluate -> defend.
// With data.manifest set the synth step is replaced by the given manifest.
ExperimentPlan make_standard_plan(const Config& config, const std::filesystem::path& artifact_dir);

// Files under the artifact dir not claimed by any completed step.
std::vector<std::filesystem::path> audit_artifacts(const std::filesystem::path& artifact_dir);

struct MetricDelta {
  std::optional<double> a, b, delta;  // delta = b - a, absent when either side is missing
};

struct ReportDiff {
  MetricDelta r_d, r_i, r_d_high_confidence, mssim_real_real, mssim_real_fake;
  nlohmann::json to_json() const;
};

ReportDiff compare_runs(const metrics::EvaluationReport& a, const metrics::EvaluationReport& b);
ReportDiff compare_runs(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace jekyll::harness
