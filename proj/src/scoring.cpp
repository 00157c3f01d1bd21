#include "trimllm/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

namespace trimllm {

SelectionMethod parse_selection_method(const std::string& name) {
  if (name == "calibration") return SelectionMethod::calibration;
  if (name == "activation_norm") return SelectionMethod::activation_norm;
  if (name == "both") return SelectionMethod::both;
  throw ConfigError("unknown selection method '" + name +
                    "' (expected calibration, activation_norm or both)");
}

std::string to_string(SelectionMethod method) {
  switch (method) {
    case SelectionMethod::calibration: return "calibration";
    case SelectionMethod::activation_norm: return "activation_norm";
    case SelectionMethod::both: return "both";
  }
  return "?";
}

void ScoringConfig::validate() const {
  if (!(delta > 0.0)) throw ConfigError("scoring: delta must be positive");
  if (calibration_size == 0) throw ConfigError("scoring: calibration_size must be positive");
  if (batch_size == 0) throw ConfigError("scoring: batch_size must be positive");
}

double scan_score(double accuracy, double delta) {
  if (!(delta > 0.0)) throw DomainError("scan_score: delta must be positive");
  if (!(accuracy >= 0.0 && accuracy <= 100.0)) {
    throw DomainError("scan_score: accuracy " + std::to_string(accuracy) + " outside [0, 100]");
  }
  return (100.0 - accuracy) / ((1.0 + delta * delta) + (1.0 + delta) * accuracy);
}

std::vector<double> norm_score_values(std::span<const double> norms) {
  double min_norm = std::numeric_limits<double>::infinity();
  for (double n : norms)
    if (n > 0.0) min_norm = std::min(min_norm, n);
  std::vector<double> out(norms.size(), 100.0);
  for (std::size_t i = 0; i < norms.size(); ++i)
    if (norms[i] > 0.0) out[i] = 100.0 * (min_norm / norms[i]);
  return out;
}

template <class Real>
std::vector<ImportanceScore> scan_scores(const TrimModel<Real>& model,
                                         std::span<const Sample> calibration,
                                         const ScoringConfig& config) {
  config.validate();
  if (calibration.empty()) throw InputError("scan_scores: empty calibration set");
  const std::vector<UnitId> live = model.mask().live_units();
  if (live.empty()) throw StateError("scan_scores: model has no live units");

  std::vector<ImportanceScore> out(live.size());
  auto evaluate = [&](std::size_t i) {
    UnitMask probe = model.mask();
    probe.kill(live[i]);
    const double a = evaluate_accuracy(model, calibration, &probe, config.batch_size).percent;
    out[i].unit = live[i];
    out[i].accuracy = a;
    out[i].s_scan = scan_score(a, config.delta);
  };
  const std::size_t workers = std::min(std::max<std::size_t>(config.threads, 1), live.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < live.size(); ++i) evaluate(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < live.size(); i += workers) evaluate(i);
      });
    }
  }
  return out;
}

template <class Real>
std::vector<ImportanceScore> norm_scores(const TrimModel<Real>& model,
                                         std::span<const Sample> calibration,
                                         std::size_t batch_size) {
  if (calibration.empty()) throw InputError("norm_scores: empty calibration set");
  const std::vector<UnitId> live = model.mask().live_units();
  if (live.empty()) throw StateError("norm_scores: model has no live units");
  if (batch_size == 0) batch_size = calibration.size();

  std::map<UnitId, double> weighted;
  for (std::size_t start = 0; start < calibration.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, calibration.size() - start);
    LmBatch b = make_lm_batch(calibration.subspan(start, n));
    for (const auto& [id, norm] : model.snapshot_activation_norms(b.inputs))
      weighted[id] += norm * double(n);
  }
  std::vector<double> norms;
  for (UnitId id : live) norms.push_back(weighted[id] / double(calibration.size()));
  const std::vector<double> scores = norm_score_values(norms);

  std::vector<ImportanceScore> out(live.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    out[i].unit = live[i];
    out[i].activation_norm = norms[i];
    out[i].s_norm = scores[i];
    out[i].degenerate_norm = !(norms[i] > 0.0);
  }
  return out;
}

std::vector<ImportanceScore> merge_scores(std::span<const ImportanceScore> scan,
                                          std::span<const ImportanceScore> norm) {
  std::map<UnitId, ImportanceScore> by_unit;
  for (const auto& s : scan) by_unit[s.unit] = s;
  for (const auto& n : norm) {
    ImportanceScore& m = by_unit.try_emplace(n.unit, n).first->second;
    m.unit = n.unit;
    m.activation_norm = n.activation_norm;
    m.s_norm = n.s_norm;
    m.degenerate_norm = n.degenerate_norm;
  }
  std::vector<ImportanceScore> out;
  for (auto& [id, s] : by_unit) out.push_back(s);
  return out;
}

std::vector<UnitId> select_targets(std::span<const ImportanceScore> scan,
                                   std::span<const ImportanceScore> norm, std::size_t count,
                                   SelectionMethod method) {
  const bool need_scan = method != SelectionMethod::activation_norm;
  const bool need_norm = method != SelectionMethod::calibration;
  if (need_scan && scan.empty()) throw ContractError("select_targets: scan scores required");
  if (need_norm && norm.empty()) throw ContractError("select_targets: norm scores required");
  if (need_scan && need_norm) {
    std::vector<UnitId> a, b;
    for (const auto& s : scan) a.push_back(s.unit);
    for (const auto& s : norm) b.push_back(s.unit);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw ContractError("select_targets: score lists cover different units");
  }
  std::vector<ImportanceScore> merged = merge_scores(need_scan ? scan : std::span<const ImportanceScore>{},
                                                     need_norm ? norm : std::span<const ImportanceScore>{});
  if (count > merged.size()) {
    throw SizeError("select_targets: cannot drop " + std::to_string(count) + " of " +
                    std::to_string(merged.size()) + " live units");
  }
  auto key = [method](const ImportanceScore& s) {
    switch (method) {
      case SelectionMethod::calibration: return std::tuple(s.s_scan, 0.0, s.unit);
      case SelectionMethod::activation_norm: return std::tuple(s.s_norm, 0.0, s.unit);
      case SelectionMethod::both: break;
    }
    return std::tuple(s.s_scan, s.s_norm, s.unit);
  };
  std::sort(merged.begin(), merged.end(),
            [&](const ImportanceScore& x, const ImportanceScore& y) { return key(x) < key(y); });
  std::vector<UnitId> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(merged[i].unit);
  return out;
}

template std::vector<ImportanceScore> scan_scores<float>(const TrimModel<float>&,
                                                         std::span<const Sample>,
                                                         const ScoringConfig&);
template std::vector<ImportanceScore> scan_scores<double>(const TrimModel<double>&,
                                                          std::span<const Sample>,
                                                          const ScoringConfig&);
template std::vector<ImportanceScore> norm_scores<float>(const TrimModel<float>&,
                                                         std::span<const Sample>, std::size_t);
template std::vector<ImportanceScore> norm_scores<double>(const TrimModel<double>&,
                                                          std::span<const Sample>, std::size_t);

}  // namespace trimllm
