#pragma once

// Run configuration for the command-line tool, stored as JSON.
//
// Every component seed derives from `seed` through named substreams:
// "init" for weights, "data" for task generation, "calibration" and
// "train" inside trimming.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trimllm/model.hpp"
#include "trimllm/tasks.hpp"
#include "trimllm/trimmer.hpp"

namespace trimllm {

struct TaskSelection {
  std::vector<DomainSpec> domains;
  /// Domains used for training/trimming; empty means all of them.
  std::vector<std::size_t> train_domains;
  std::size_t n_train = 512;
  std::size_t n_valid = 128;
  std::size_t n_test = 128;
  /// Multiple-choice file; replaces `domains` when set.
  std::optional<std::filesystem::path> jsonl;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
};

struct BenchSettings {
  std::size_t seq_len = 0;  // 0 = model max
  std::size_t batch_size = 1;
  std::size_t reps = 5;
};

struct BaselineSettings {
  std::optional<RuleStrategy> strategy;
  double fraction = 0.5;
};

/// Small model sized for the default domains.
ModelConfig default_model_config();

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  ModelConfig model = default_model_config();
  TrimConfig trim;
  TaskSelection task;
  BenchSettings bench;
  BaselineSettings baseline;
  /// Plain fine-tuning (train command).
  std::size_t train_epochs = 5;
  /// Sparse-update ratio for the train command; 0 trains every unit.
  double sparse_r = 0.0;
  /// Starting checkpoint; a fresh model is built when unset.
  std::optional<std::filesystem::path> checkpoint;
  /// Memory targets for the sweep command (1.0 = untrimmed).
  std::vector<double> sweep_ratios = {0.3, 0.4, 0.5, 1.0};

  /// Derives the model, trim and domain seeds from `seed`.
  void resolve_seeds();
  void validate() const;
};

/// Three disjoint synthetic domains (modular arithmetic, reversal, key-value
/// recall) within a 128-token vocabulary.
std::vector<DomainSpec> default_domains();

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

/// Builds the dataset described by `task`: the mixture of the selected
/// training domains, or the JSONL file.
Dataset load_task(const TaskSelection& task, const ModelConfig& model, std::uint64_t seed);

/// One dataset per configured domain (JSONL: the single file dataset).
std::vector<Dataset> load_domains(const TaskSelection& task, const ModelConfig& model,
                                  std::uint64_t seed);

}  // namespace trimllm
