#pragma once

#include "tamcl/evaluation.hpp"
#include "tamcl/model.hpp"
#include "tamcl/task_suite.hpp"
#include "tamcl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tamcl {

struct RunConfig {
    std::filesystem::path manifest;
    std::vector<TaskSpec> tasks;
    ModelConfig model;
    TrainerConfig trainer;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
};

/// Parses a run-config YAML document. Unset keys keep their defaults; the
/// manifest path is resolved relative to `base_dir` and loaded.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Copies image shape, text length and vocabulary size from the task list
/// into the model config; all tasks must share one image shape.
void derive_model_inputs(RunConfig& config);

/// Canonical YAML of everything that influences results (the output
/// directory and manifest path are excluded; the task specs are inlined).
std::string format_run_config(const RunConfig& config);
/// Hex FNV-1a of format_run_config.
std::string config_hash(const RunConfig& config);

struct RunObserver {
    StepObserver on_step;
    std::function<void(std::size_t task_index, const TamClModel&)> on_task_end;
};

struct RunResult {
    ForgettingReport report;
    std::vector<TaskReport> tasks;
};

/// Trains the task sequence, evaluating every seen task after each one.
/// Writes config.yaml, metrics.csv, report.{json,csv,txt} and a checkpoint
/// per task boundary into config.output_dir (when non-empty).
RunResult run_experiment(const RunConfig& config, const RunObserver& observer = {});

/// Re-renders the tables of a finished run from report.json and writes the
/// loss/weight traces from metrics.csv to traces.csv. Returns the text.
std::string render_report(const std::filesystem::path& run_dir);

/// Writes task_<id>_{train,test}.bin for every task of the manifest.
void materialize_datasets(const std::vector<TaskSpec>& tasks, const std::filesystem::path& out_dir);

std::string metrics_header();
std::string metrics_row(const StepLog& log);

}  // namespace tamcl
