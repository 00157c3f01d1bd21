#pragma once

// Deployment-time measurements: greedy-generation throughput, parameter
// memory ratio, and Pareto-frontier export.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trimllm/model.hpp"

namespace trimllm {

struct BenchResult {
  std::size_t seq_len = 0;
  std::size_t batch_size = 0;
  std::size_t reps = 0;
  double tokens_per_second = 0;  // median over reps
  double tokens_per_second_min = 0;
  double tokens_per_second_max = 0;
  double latency_per_token = 0;  // seconds, from the median rep
  double memory_ratio = 0;
  std::size_t live_units = 0;
  std::vector<double> rep_tokens_per_second;
};

/// Times greedy KV-cached generation of seq_len - 1 tokens after a one-token
/// prompt, for `batch_size` sequences run back to back. One untimed warmup
/// precedes `reps` timed repetitions.
template <class Real>
BenchResult measure_throughput(const TrimModel<Real>& model, std::size_t seq_len,
                               std::size_t batch_size, std::size_t reps);

template <class Real>
double memory_ratio(const TrimModel<Real>& model) {
  return model.memory_ratio();
}

struct ParetoPoint {
  double memory_ratio = 0;
  double accuracy = 0;
  double tokens_per_s = 0;
  std::size_t live_units = 0;
  std::string config_id;
  bool dominated = false;
};

ParetoPoint make_pareto_point(const BenchResult& bench, double accuracy, std::string config_id);

/// Sorts by memory ratio and flags points beaten on every axis (lower memory,
/// higher accuracy, higher throughput; strictly on at least one).
std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points);

/// Columns: memory_ratio,accuracy_pct,tokens_per_s,live_units,config_id,dominated
void export_pareto(std::span<const ParetoPoint> points, const std::filesystem::path& path);

}  // namespace trimllm
