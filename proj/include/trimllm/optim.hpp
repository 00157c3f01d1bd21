#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trimllm/tensor.hpp"

namespace trimllm {

enum class OptimizerKind { sgd, adamw };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
  bool trainable = true;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// SGD / AdamW with decoupled weight decay.
///
/// step() updates trainable parameters in place and clears every gradient.
/// Frozen parameters are never written, even when they carry a gradient.
template <class Real>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Throws StateError if a trainable parameter has no gradient.
  void step(std::span<Parameter<Real>> params);

  /// Forgets moment state for storages no longer in `live` (dropped units).
  void prune(std::span<const Parameter<Real>> live);

  const OptimizerConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<Real> m, v;
  };
  OptimizerConfig config_;
  std::unordered_map<const void*, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace trimllm
