#pragma once

// Subcommand implementations behind the command-line tool. Each writes its
// outputs plus the fully resolved config.json into config.output_dir.

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>

#include "trimllm/costmodel.hpp"
#include "trimllm/run_config.hpp"

namespace trimllm {

enum class ExitCode : int { ok = 0, usage = 1, data = 2, internal = 3 };

/// Maps a thrown exception to the process exit code.
ExitCode exit_code_for(const std::exception& e);

/// model.ckpt, metrics.csv, timing.csv, train.json
void cmd_train(const RunConfig& config, std::ostream& log);

/// model.ckpt, report.json, scores.csv, drop_pattern.csv, metrics.csv, timing.csv.
/// With a baseline strategy: one-shot rule-based drop, then plain fine-tuning
/// for trim.max_epochs (baseline.json instead of the score files).
void cmd_trim(const RunConfig& config, std::ostream& log);

/// eval.json: test accuracy and chance level per domain.
void cmd_eval(const RunConfig& config, std::ostream& log);

/// bench.csv
void cmd_bench(const RunConfig& config, std::ostream& log);

struct CostCommand {
  CostParams params;
  bool c_given = false;
  bool layers_given = false;
  std::optional<std::filesystem::path> report;
  std::filesystem::path output_dir = "out";
};

/// costmodel.csv; the measured column holds cumulative epoch times from a
/// trim report when one is given. Without an explicit c, the report's first
/// epoch supplies it.
void cmd_costmodel(const CostCommand& command, std::ostream& log);

/// One trim per sweep ratio (1.0 = plain fine-tuning for train.epochs),
/// each benchmarked; pareto.csv plus a subdirectory per point.
void cmd_sweep(const RunConfig& config, std::ostream& log);

}  // namespace trimllm
