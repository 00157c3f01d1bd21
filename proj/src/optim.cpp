#include "trimllm/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace trimllm {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adamw)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adamw";
}

template <class Real>
void Optimizer<Real>::step(std::span<Parameter<Real>> params) {
  for (const auto& p : params) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw StateError("optimizer_step: trainable parameter '" + p.name + "' has no gradient");
    }
  }
  double scale = 1.0;
  if (config_.clip_norm > 0) {
    double ss = 0;
    for (const auto& p : params)
      if (p.trainable)
        for (Real g : p.tensor.grad()) ss += double(g) * double(g);
    const double norm = std::sqrt(ss);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  ++t_;
  const double lr = config_.lr;
  for (auto& p : params) {
    Tensor<Real>& t = p.tensor;
    if (!p.trainable) {
      t.clear_grad();
      continue;
    }
    auto w = t.mutable_data();
    auto g = t.grad();
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= Real(lr * (scale * g[i] + config_.weight_decay * w[i]));
      }
    } else {
      Moments& mo = state_[t.storage().get()];
      if (mo.m.empty()) {
        mo.m.assign(w.size(), Real(0));
        mo.v.assign(w.size(), Real(0));
      }
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, double(t_));
      const double c2 = 1.0 - std::pow(b2, double(t_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = scale * double(g[i]);
        const double m = b1 * double(mo.m[i]) + (1.0 - b1) * gi;
        const double v = b2 * double(mo.v[i]) + (1.0 - b2) * gi * gi;
        mo.m[i] = Real(m);
        mo.v[i] = Real(v);
        const double mhat = m / c1;
        const double vhat = v / c2;
        w[i] = Real(double(w[i]) -
                    lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * double(w[i])));
      }
    }
    t.clear_grad();
  }
}

template <class Real>
void Optimizer<Real>::prune(std::span<const Parameter<Real>> live) {
  std::unordered_set<const void*> keep;
  for (const auto& p : live) keep.insert(p.tensor.storage().get());
  std::erase_if(state_, [&](const auto& kv) { return !keep.contains(kv.first); });
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace trimllm
