#pragma once

// Progressive trimming: train an epoch, score live units on a fresh
// calibration sample, drop the lowest-scoring ones, repeat until a stopping
// criterion fires. Also hosts the sparse-update freeze plan, plain
// fine-tuning, and the one-shot / rule-based baselines.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trimllm/model.hpp"
#include "trimllm/optim.hpp"
#include "trimllm/scoring.hpp"
#include "trimllm/tasks.hpp"

namespace trimllm {

enum class StopKind { accuracy, efficiency };

struct StoppingCriterion {
  StopKind kind = StopKind::accuracy;
  /// accuracy: a drop may not push validation accuracy below
  /// floor_fraction * reference accuracy.
  double floor_fraction = 0.9;
  /// efficiency: stop once every given target is met.
  std::optional<double> target_memory;   // live / initial parameters
  std::optional<double> target_latency;  // seconds per generated token

  void validate() const;
  /// "acc=0.9", "mem=0.5", "latency=0.002", "mem=0.5,latency=0.002".
  static StoppingCriterion parse(const std::string& text);
  std::string to_string() const;
};

struct TrimConfig {
  SelectionMethod method = SelectionMethod::both;
  double r = 1.0;  // sparse-update ratio
  std::size_t drops_per_epoch = 1;
  double delta = 0.01;
  StoppingCriterion stop;
  std::size_t max_epochs = 20;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t calibration_size = 256;
  std::size_t score_threads = 1;
  /// Timing settings for latency targets and the final latency figure.
  std::size_t latency_reps = 5;
  std::uint64_t seed = 0;

  void validate() const;
  ScoringConfig scoring() const;
};

struct FreezePlan {
  std::set<UnitId> trainable;
  std::vector<ImportanceScore> origin;
};

/// floor(r * N) over the model's full unit count.
std::size_t sparse_unit_count(double r, std::size_t n_units);

/// Scans the untouched model once and keeps the floor(r*N) units with the
/// highest s_scan trainable (ties to the lower UnitId); applies it.
/// When every unit stays trainable the scan is skipped.
template <class Real>
FreezePlan initial_freeze_plan(TrimModel<Real>& model, std::span<const Sample> calibration,
                               const TrimConfig& config);

/// One pass over `train` in shuffled minibatches; returns the mean loss.
template <class Real>
double train_epoch(TrimModel<Real>& model, Optimizer<Real>& optimizer,
                   std::span<const Sample> train, std::size_t batch_size, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double valid_accuracy = 0;  // after the epoch's training, before its drops
  double seconds = 0;         // training wall time
  std::size_t live_units = 0;
  std::size_t trainable_units = 0;
  double memory_ratio = 1;  // after the epoch's drops
  std::size_t drops = 0;
};

struct DropRecord {
  std::size_t epoch = 0;
  UnitId unit;
  double accuracy = ImportanceScore::unset;
  double s_scan = ImportanceScore::unset;
  double s_norm = ImportanceScore::unset;
  bool was_trainable = false;
};

struct ScoreRecord {
  std::size_t epoch = 0;
  ImportanceScore score;
};

enum class TrimStatus { accuracy_floor, target_met, max_epochs, no_units_left };

std::string to_string(TrimStatus status);

struct TrimReport {
  TrimConfig config;
  ModelConfig model_config;
  std::vector<UnitId> initial_trainable;
  std::vector<ImportanceScore> freeze_scores;
  std::vector<EpochRecord> epochs;
  std::vector<DropRecord> drops;
  std::vector<ScoreRecord> scores;
  double reference_accuracy = 0;
  /// Drop rejected by the accuracy floor, with the accuracy it would have left.
  std::vector<UnitId> reverted;
  std::optional<double> reverted_accuracy;
  double final_accuracy = 0;
  double final_memory_ratio = 1;
  double final_latency = 0;
  TrimStatus status = TrimStatus::max_epochs;

  std::vector<UnitId> dropped_units() const;
  double total_seconds() const;
};

template <class Real>
TrimReport run_trim(TrimModel<Real>& model, std::span<const Sample> train,
                    std::span<const Sample> valid, const TrimConfig& config);

/// Trains without dropping; the caller decides which units are trainable.
/// `valid` may be empty (accuracy then 0).
template <class Real>
std::vector<EpochRecord> fine_tune(TrimModel<Real>& model, std::span<const Sample> train,
                                   std::span<const Sample> valid, std::size_t epochs,
                                   const OptimizerConfig& optimizer, std::size_t batch_size,
                                   std::uint64_t seed);

enum class RuleStrategy { random, top, bottom };

RuleStrategy parse_rule_strategy(const std::string& name);
std::string to_string(RuleStrategy strategy);

/// Drops floor(fraction * N) live units at once. top takes the highest
/// UnitIds (nearest the output), bottom the lowest.
template <class Real>
std::vector<UnitId> rule_based_mask(TrimModel<Real>& model, RuleStrategy strategy,
                                    double fraction, std::uint64_t seed);

/// Scores once and drops the k lowest-scoring units together.
template <class Real>
std::vector<UnitId> one_shot_drop(TrimModel<Real>& model, std::size_t k, SelectionMethod method,
                                  std::span<const Sample> calibration,
                                  const ScoringConfig& scoring);

std::string report_json(const TrimReport& report);
void write_report_json(const TrimReport& report, const std::filesystem::path& path);
/// epoch,block_index,kind,a_i,s_scan,activation_norm,s_norm
void write_score_csv(const TrimReport& report, const std::filesystem::path& path);
/// block_index,kind,dropped,drop_epoch (one row per unit)
void write_drop_pattern_csv(const TrimReport& report, const std::filesystem::path& path);
/// epoch,train_loss,valid_accuracy,live_units,trainable_units,memory_ratio,drops
/// (wall times go to write_timing_csv so this file is reproducible).
void write_epoch_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path);
/// epoch,seconds
void write_timing_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path);

}  // namespace trimllm
