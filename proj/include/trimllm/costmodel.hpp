#pragma once

// Analytic fine-tuning time model. Training one epoch over N live layers
// costs T(N) = c * N.
//
//   full FT, n epochs:          c * N * n
//   one drop per epoch:         T(N) + T(N-1) + ... + T(N-n_d+1)
//                             = c * n_d * (N - (n_d - 1) / 2)
//   two drops per epoch:        T(N) + T(N-2) + ... + T(N-n_d+2)
//                             = c * (n_d / 2) * (N - n_d / 2 + 1)
//   sparse update:              sparse_factor * (any of the above)

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace trimllm {

struct CostParams {
  double c = 1.0;
  std::size_t n_layers = 64;
  std::size_t n_drop = 32;
  std::size_t n_epochs = 5;
  double sparse_factor = 0.6;

  void validate() const;
};

double t_full(const CostParams& p);
double t_drop1(const CostParams& p);
double t_drop2(const CostParams& p);
double t_sparse(double base, const CostParams& p);

/// Ratio of measured sparse-update epoch time to full fine-tuning epoch time.
double fit_sparse_factor(double sparse_epoch_seconds, double full_epoch_seconds);

/// Per-layer per-epoch time estimated from one epoch over n_layers layers.
double estimate_unit_cost(double epoch_seconds, std::size_t n_layers);

struct CostRow {
  std::size_t n_drop = 0;
  double t_full = 0;
  double t_drop1 = 0;
  std::optional<double> t_drop2;  // even n_drop only
  double t_sparse_drop1 = 0;
  std::optional<double> t_sparse_drop2;
  std::optional<double> measured;
};

/// One row per n_drop in [1, n_layers]. `measured[i]`, when given, is the
/// observed cumulative time at n_drop = i + 1.
std::vector<CostRow> cost_table(const CostParams& p, const std::vector<double>& measured = {});

/// Columns: n_d,t_full,t_drop1,t_drop2,t_sparse_drop1,t_sparse_drop2,measured
void write_cost_csv(const std::filesystem::path& path, const std::vector<CostRow>& rows);

}  // namespace trimllm
