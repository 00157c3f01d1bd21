#pragma once

// Per-unit importance scores and drop-target selection.
//
// Sensitivity ("scan") score of a unit whose removal leaves calibration
// accuracy a (percent):
//
//     s_scan = (100 - a) / ((1 + delta^2) + (1 + delta) * a)
//
// so s_scan = 100 / (1 + delta^2) when a = 0 and 0 when a = 100.
//
// Activation-norm score, with n_j the mean Frobenius norm of unit j's output:
//
//     s_norm = 100 * min_j(n_j) / n_i          (in (0, 100])
//
// Lower scores mark safer drop targets under both metrics.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trimllm/model.hpp"
#include "trimllm/tasks.hpp"

namespace trimllm {

enum class SelectionMethod { calibration, activation_norm, both };

SelectionMethod parse_selection_method(const std::string& name);
std::string to_string(SelectionMethod method);

struct ScoringConfig {
  double delta = 0.01;
  std::size_t calibration_size = 256;
  std::size_t batch_size = 64;
  /// Worker threads for candidate-drop evaluation in scan_scores.
  std::size_t threads = 1;

  void validate() const;
};

struct ImportanceScore {
  static constexpr double unset = std::numeric_limits<double>::quiet_NaN();

  UnitId unit;
  double accuracy = unset;  // calibration accuracy with the unit masked
  double s_scan = unset;
  double activation_norm = unset;
  double s_norm = unset;
  bool degenerate_norm = false;  // zero activation norm, scored 100
};

double scan_score(double accuracy, double delta);

/// Applies the min-normalised inverse-norm formula to a list of norms.
/// Zero norms score 100 and are excluded from the minimum.
std::vector<double> norm_score_values(std::span<const double> norms);

template <class Real>
std::vector<ImportanceScore> scan_scores(const TrimModel<Real>& model,
                                         std::span<const Sample> calibration,
                                         const ScoringConfig& config);

template <class Real>
std::vector<ImportanceScore> norm_scores(const TrimModel<Real>& model,
                                         std::span<const Sample> calibration,
                                         std::size_t batch_size = 64);

/// The `count` lowest-scoring units.
///
/// calibration: ascending s_scan; activation_norm: ascending s_norm;
/// both: ascending s_scan, exact ties broken by ascending s_norm.
/// Remaining ties go to the lower UnitId. `norm` may be empty for
/// method=calibration and `scan` may be empty for method=activation_norm.
std::vector<UnitId> select_targets(std::span<const ImportanceScore> scan,
                                   std::span<const ImportanceScore> norm, std::size_t count,
                                   SelectionMethod method);

/// Combines the two lists by unit (either may be empty).
std::vector<ImportanceScore> merge_scores(std::span<const ImportanceScore> scan,
                                          std::span<const ImportanceScore> norm);

}  // namespace trimllm
