#pragma once

// Loop-based decoder used as an independent oracle for TrimModel. It reads
// weights by name and evaluates only the listed units, so "dropping" a unit
// here means structurally leaving it out.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trimllm/model.hpp"

namespace reference {

using Matrix = std::vector<std::vector<double>>;  // [rows][cols]

struct Weights {
  std::map<std::string, std::vector<double>> values;

  template <class Real>
  static Weights from(const trimllm::TrimModel<Real>& model) {
    Weights w;
    for (const auto& [name, t] : model.named_tensors())
      w.values[name] = std::vector<double>(t.data().begin(), t.data().end());
    return w;
  }
  const std::vector<double>& operator[](const std::string& name) const { return values.at(name); }
};

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& g,
                                      const std::vector<double>& b) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= double(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

// y = x W + b with W stored row-major [in x out].
inline std::vector<double> affine(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& b) {
  const std::size_t out = b.size();
  std::vector<double> y(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w[i * out + j];
  return y;
}

/// Logits [seq][vocab] for one sequence through the units in `alive`.
inline Matrix decode(const trimllm::ModelConfig& c, const Weights& w,
                     const std::set<trimllm::UnitId>& alive, const std::vector<int>& tokens) {
  const std::size_t d = c.d_model, n = tokens.size(), hd = c.d_model / c.n_heads;
  Matrix x(n, std::vector<double>(d));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < d; ++k)
      x[t][k] = w["embed.tokens"][std::size_t(tokens[t]) * d + k] + w["embed.positions"][t * d + k];

  for (std::size_t blk = 0; blk < c.n_blocks; ++blk) {
    const std::string p = "block" + std::to_string(blk);
    if (alive.contains({blk, trimllm::UnitKind::mha})) {
      Matrix q(n), k(n), v(n);
      for (std::size_t t = 0; t < n; ++t) {
        auto h = layer_norm(x[t], w[p + ".mha.ln.gain"], w[p + ".mha.ln.bias"]);
        auto qkv = affine(h, w[p + ".mha.qkv.weight"], w[p + ".mha.qkv.bias"]);
        q[t].assign(qkv.begin(), qkv.begin() + long(d));
        k[t].assign(qkv.begin() + long(d), qkv.begin() + long(2 * d));
        v[t].assign(qkv.begin() + long(2 * d), qkv.end());
      }
      Matrix attn(n, std::vector<double>(d, 0.0));
      for (std::size_t head = 0; head < c.n_heads; ++head) {
        const std::size_t o = head * hd;
        for (std::size_t t = 0; t < n; ++t) {
          std::vector<double> s(t + 1);
          double mx = -1e300;
          for (std::size_t u = 0; u <= t; ++u) {
            double dot = 0;
            for (std::size_t i = 0; i < hd; ++i) dot += q[t][o + i] * k[u][o + i];
            s[u] = dot / std::sqrt(double(hd));
            mx = std::max(mx, s[u]);
          }
          double z = 0;
          for (double& e : s) z += (e = std::exp(e - mx));
          for (std::size_t u = 0; u <= t; ++u)
            for (std::size_t i = 0; i < hd; ++i) attn[t][o + i] += s[u] / z * v[u][o + i];
        }
      }
      for (std::size_t t = 0; t < n; ++t) {
        auto y = affine(attn[t], w[p + ".mha.proj.weight"], w[p + ".mha.proj.bias"]);
        for (std::size_t i = 0; i < d; ++i) x[t][i] += y[i];
      }
    }
    if (alive.contains({blk, trimllm::UnitKind::mlp})) {
      for (std::size_t t = 0; t < n; ++t) {
        auto h = layer_norm(x[t], w[p + ".mlp.ln.gain"], w[p + ".mlp.ln.bias"]);
        auto a = affine(h, w[p + ".mlp.fc1.weight"], w[p + ".mlp.fc1.bias"]);
        for (double& e : a) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
        auto y = affine(a, w[p + ".mlp.fc2.weight"], w[p + ".mlp.fc2.bias"]);
        for (std::size_t i = 0; i < d; ++i) x[t][i] += y[i];
      }
    }
  }
  Matrix logits(n);
  for (std::size_t t = 0; t < n; ++t) {
    auto h = layer_norm(x[t], w["final_ln.gain"], w["final_ln.bias"]);
    logits[t] = affine(h, w["head.weight"], w["head.bias"]);
  }
  return logits;
}

}  // namespace reference
