#include "trimllm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>

#include "trimllm/tasks.hpp"

namespace trimllm {

template <class Real>
BenchResult measure_throughput(const TrimModel<Real>& model, std::size_t seq_len,
                               std::size_t batch_size, std::size_t reps) {
  if (seq_len < 2 || seq_len > model.config().max_seq_len) {
    throw InputError("bench: seq_len " + std::to_string(seq_len) + " must be in [2, " +
                     std::to_string(model.config().max_seq_len) + "]");
  }
  if (batch_size == 0 || reps == 0) throw InputError("bench: batch_size and reps must be positive");
  const std::vector<Token> prompt = {vocab::bos};
  const std::size_t n_new = seq_len - 1;
  auto run = [&] {
    std::size_t produced = 0;
    for (std::size_t b = 0; b < batch_size; ++b) produced += model.generate(prompt, n_new).size() - 1;
    return produced;
  };
  run();  // warmup
  BenchResult r;
  r.seq_len = seq_len;
  r.batch_size = batch_size;
  r.reps = reps;
  r.memory_ratio = model.memory_ratio();
  r.live_units = model.mask().remaining();
  std::vector<double> seconds;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t produced = run();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    seconds.push_back(dt.count());
    r.rep_tokens_per_second.push_back(double(produced) / std::max(dt.count(), 1e-12));
  }
  std::vector<double> sorted = r.rep_tokens_per_second;
  std::sort(sorted.begin(), sorted.end());
  // Upper median for even counts keeps the value an observed sample.
  r.tokens_per_second = sorted[sorted.size() / 2];
  r.tokens_per_second_min = sorted.front();
  r.tokens_per_second_max = sorted.back();
  r.latency_per_token = 1.0 / r.tokens_per_second;
  return r;
}

ParetoPoint make_pareto_point(const BenchResult& bench, double accuracy, std::string config_id) {
  ParetoPoint p;
  p.memory_ratio = bench.memory_ratio;
  p.accuracy = accuracy;
  p.tokens_per_s = bench.tokens_per_second;
  p.live_units = bench.live_units;
  p.config_id = std::move(config_id);
  return p;
}

std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points) {
  auto beats = [](const ParetoPoint& q, const ParetoPoint& p) {
    const bool no_worse = q.memory_ratio <= p.memory_ratio && q.accuracy >= p.accuracy &&
                          q.tokens_per_s >= p.tokens_per_s;
    const bool better = q.memory_ratio < p.memory_ratio || q.accuracy > p.accuracy ||
                        q.tokens_per_s > p.tokens_per_s;
    return no_worse && better;
  };
  for (ParetoPoint& p : points) {
    p.dominated = std::any_of(points.begin(), points.end(),
                              [&](const ParetoPoint& q) { return beats(q, p); });
  }
  std::stable_sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.memory_ratio < b.memory_ratio;
  });
  return points;
}

void export_pareto(std::span<const ParetoPoint> points, const std::filesystem::path& path) {
  if (points.empty()) throw InputError("export_pareto: no points");
  const std::vector<ParetoPoint> rows =
      pareto_frontier(std::vector<ParetoPoint>(points.begin(), points.end()));
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(8);
  out << "memory_ratio,accuracy_pct,tokens_per_s,live_units,config_id,dominated\n";
  for (const ParetoPoint& p : rows) {
    out << p.memory_ratio << ',' << p.accuracy << ',' << p.tokens_per_s << ',' << p.live_units
        << ',' << p.config_id << ',' << (p.dominated ? "true" : "false") << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

template BenchResult measure_throughput<float>(const TrimModel<float>&, std::size_t, std::size_t,
                                               std::size_t);
template BenchResult measure_throughput<double>(const TrimModel<double>&, std::size_t, std::size_t,
                                                std::size_t);

}  // namespace trimllm
