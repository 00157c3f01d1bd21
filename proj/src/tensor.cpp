#include "trimllm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace trimllm {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <class Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;

std::atomic<std::uint64_t> g_tape_generation{1};

template <class Real>
using StoragePtr = std::shared_ptr<TensorStorage<Real>>;

template <class Real>
void accumulate(const StoragePtr<Real>& s, std::span<const Real> g) {
  if (!s->requires_grad) return;
  if (s->grad.empty()) {
    s->grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) s->grad[i] += g[i];
}

template <class Real>
bool any_requires_grad(std::initializer_list<const Tensor<Real>*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<Real>* t) { return t->requires_grad(); });
}

/// Attaches `out` to the active tape when any input participates in autograd.
template <class Real>
Tensor<Real> finish(OpKind kind, std::initializer_list<const Tensor<Real>*> inputs,
                    Tensor<Real> out, typename Tape<Real>::BackwardFn fn) {
  Tape<Real>* tape = Tape<Real>::active();
  if (tape == nullptr || !any_requires_grad<Real>(inputs)) return out;
  out.set_requires_grad(true);
  std::vector<StoragePtr<Real>> in;
  in.reserve(inputs.size());
  for (const Tensor<Real>* t : inputs) in.push_back(t->storage());
  tape->record(kind, std::move(in), out.storage(), std::move(fn));
  return out;
}

template <class Real>
void require_defined(const Tensor<Real>& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + ": undefined tensor");
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
  require_defined(a, what);
  require_defined(b, what);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_bias: return "add_bias";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::gelu: return "gelu";
    case OpKind::layernorm: return "layernorm";
    case OpKind::causal_attention: return "causal_attention";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::sum: return "sum";
    case OpKind::frobenius_norm: return "frobenius_norm";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tensor

template <class Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data, bool requires_grad)
    : s_(std::make_shared<TensorStorage<Real>>()) {
  if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](auto d) { return d == 0; })) {
    throw DimensionError("tensor shape must be non-empty with positive dims, got " +
                         shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

template <class Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

template <class Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

template <class Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

template <class Real>
Tensor<Real> Tensor<Real>::matrix(std::size_t rows, std::size_t cols, std::vector<Real> data,
                                  bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

template <class Real>
const Shape& Tensor<Real>::shape() const {
  require_defined(*this, "shape");
  return s_->shape;
}

template <class Real>
std::size_t Tensor<Real>::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw IndexError("dim " + std::to_string(i) + " of " + shape_str(s));
  return s[i];
}

template <class Real>
std::size_t Tensor<Real>::rows() const {
  return numel() / cols();
}

template <class Real>
std::size_t Tensor<Real>::cols() const {
  return shape().back();
}

template <class Real>
std::span<const Real> Tensor<Real>::data() const {
  require_defined(*this, "data");
  return s_->data;
}

template <class Real>
std::span<Real> Tensor<Real>::mutable_data() {
  require_defined(*this, "mutable_data");
  return s_->data;
}

template <class Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

template <class Real>
Real Tensor<Real>::at(std::size_t r, std::size_t c) const {
  return data()[r * cols() + c];
}

template <class Real>
void Tensor<Real>::set_requires_grad(bool value) {
  require_defined(*this, "set_requires_grad");
  s_->requires_grad = value;
  if (!value) s_->grad.clear();
}

template <class Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return s_->grad;
}

template <class Real>
void Tensor<Real>::clear_grad() {
  if (s_) s_->grad.clear();
}

template <class Real>
void Tensor<Real>::accumulate_grad(std::span<const Real> g) {
  require_defined(*this, "accumulate_grad");
  if (g.size() != numel()) throw DimensionError("gradient size does not match tensor");
  accumulate<Real>(s_, g);
}

template <class Real>
Tensor<Real> Tensor<Real>::clone() const {
  require_defined(*this, "clone");
  return Tensor(s_->shape, s_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

template <class Real>
Tape<Real>::Tape() : generation_(g_tape_generation.fetch_add(1)) {}

template <class Real>
Tape<Real>*& Tape<Real>::active_slot() {
  thread_local Tape<Real>* slot = nullptr;
  return slot;
}

template <class Real>
Tape<Real>* Tape<Real>::active() {
  return active_slot();
}

template <class Real>
TapeId Tape<Real>::record(OpKind kind, std::vector<StoragePtr> inputs, StoragePtr output,
                          BackwardFn backward) {
  TapeId id{generation_, nodes_.size()};
  output->tape_id = id;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(output), std::move(backward)});
  return id;
}

template <class Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  const auto id = loss.tape_id();
  if (!id || !owns(*id) || nodes_[id->index].output != loss.storage()) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  const Real one(1);
  accumulate<Real>(loss.storage(), std::span<const Real>(&one, 1));
  for (std::size_t i = id->index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.output->grad.empty()) continue;
    n.backward(n.output->grad);
  }
}

template <class Real>
void Tape<Real>::clear() {
  for (Node& n : nodes_) n.output->tape_id.reset();
  nodes_.clear();
  generation_ = g_tape_generation.fetch_add(1);
}

template <class Real>
void backward(const Tensor<Real>& loss) {
  Tape<Real>* tape = Tape<Real>::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Operations

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n);
  MapMat<Real>(out.data(), m, n).noalias() =
      ConstMapMat<Real>(a.data().data(), m, k) * ConstMapMat<Real>(b.data().data(), k, n);
  auto sa = a.storage();
  auto sb = b.storage();
  return finish<Real>(OpKind::matmul, {&a, &b}, Tensor<Real>({m, n}, std::move(out)),
                      [sa, sb, m, k, n](std::span<const Real> g) {
                        ConstMapMat<Real> G(g.data(), m, n);
                        if (sa->requires_grad) {
                          std::vector<Real> ga(m * k);
                          MapMat<Real>(ga.data(), m, k).noalias() =
                              G * ConstMapMat<Real>(sb->data.data(), k, n).transpose();
                          accumulate<Real>(sa, ga);
                        }
                        if (sb->requires_grad) {
                          if (sb->grad.empty()) sb->grad.assign(k * n, Real(0));
                          MapMat<Real>(sb->grad.data(), k, n).noalias() +=
                              ConstMapMat<Real>(sa->data.data(), m, k).transpose() * G;
                        }
                      });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  auto sa = a.storage();
  auto sb = b.storage();
  return finish<Real>(OpKind::add, {&a, &b}, Tensor<Real>(a.shape(), std::move(out)),
                      [sa, sb](std::span<const Real> g) {
                        accumulate<Real>(sa, g);
                        accumulate<Real>(sb, g);
                      });
}

template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<Real> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  auto sx = x.storage();
  auto sb = bias.storage();
  return finish<Real>(OpKind::add_bias, {&x, &bias}, Tensor<Real>(x.shape(), std::move(out)),
                      [sx, sb, rows, n](std::span<const Real> g) {
                        accumulate<Real>(sx, g);
                        if (sb->requires_grad) {
                          std::vector<Real> gb(n, Real(0));
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
                          accumulate<Real>(sb, gb);
                        }
                      });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  auto sa = a.storage();
  auto sb = b.storage();
  return finish<Real>(OpKind::mul, {&a, &b}, Tensor<Real>(a.shape(), std::move(out)),
                      [sa, sb](std::span<const Real> g) {
                        // Reads the inputs before accumulating so mul(x, x) works.
                        std::vector<Real> ga(g.size()), gb(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ga[i] = g[i] * sb->data[i];
                          gb[i] = g[i] * sa->data[i];
                        }
                        accumulate<Real>(sa, ga);
                        accumulate<Real>(sb, gb);
                      });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  require_defined(x, "scale");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v *= factor;
  auto sx = x.storage();
  return finish<Real>(OpKind::scale, {&x}, Tensor<Real>(x.shape(), std::move(out)),
                      [sx, factor](std::span<const Real> g) {
                        std::vector<Real> gx(g.begin(), g.end());
                        for (Real& v : gx) v *= factor;
                        accumulate<Real>(sx, gx);
                      });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  require_defined(x, "gelu");
  constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
  auto dx = x.data();
  std::vector<Real> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Real(0.5) * dx[i] * (Real(1) + std::erf(dx[i] * inv_sqrt2));
  auto sx = x.storage();
  return finish<Real>(OpKind::gelu, {&x}, Tensor<Real>(x.shape(), std::move(out)),
                      [sx](std::span<const Real> g) {
                        constexpr Real inv_sqrt2pi = Real(0.39894228040143267794);
                        std::vector<Real> gx(g.size());
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const Real v = sx->data[i];
                          const Real cdf = Real(0.5) * (Real(1) + std::erf(v * inv_sqrt2));
                          const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
                          gx[i] = g[i] * (cdf + v * pdf);
                        }
                        accumulate<Real>(sx, gx);
                      });
}

template <class Real>
Tensor<Real> layernorm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                       Real eps) {
  require_defined(x, "layernorm");
  const std::size_t d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  }
  if (!(eps > Real(0))) throw ContractError("layernorm: eps must be positive");
  const std::size_t rows = x.rows();
  auto dx = x.data();
  auto dg = gain.data();
  auto db = bias.data();
  std::vector<Real> out(dx.size());
  std::vector<Real> xhat(dx.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = dx.data() + r * d;
    Real mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= Real(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const Real h = (row[c] - mean) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = h * dg[c] + db[c];
    }
  }
  auto sx = x.storage();
  auto sg = gain.storage();
  auto sb = bias.storage();
  return finish<Real>(
      OpKind::layernorm, {&x, &gain, &bias}, Tensor<Real>(x.shape(), std::move(out)),
      [sx, sg, sb, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const Real> g) {
        if (sg->requires_grad || sb->requires_grad) {
          std::vector<Real> gg(d, Real(0)), gb(d, Real(0));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              gg[c] += g[r * d + c] * xhat[r * d + c];
              gb[c] += g[r * d + c];
            }
          accumulate<Real>(sg, gg);
          accumulate<Real>(sb, gb);
        }
        if (!sx->requires_grad) return;
        std::vector<Real> gx(rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
          Real sum_dh = 0, sum_dh_h = 0;
          for (std::size_t c = 0; c < d; ++c) {
            const Real dh = g[r * d + c] * sg->data[c];
            sum_dh += dh;
            sum_dh_h += dh * xhat[r * d + c];
          }
          const Real k = inv_std[r] / Real(d);
          for (std::size_t c = 0; c < d; ++c) {
            const Real dh = g[r * d + c] * sg->data[c];
            gx[r * d + c] = k * (Real(d) * dh - sum_dh - xhat[r * d + c] * sum_dh_h);
          }
        }
        accumulate<Real>(sx, gx);
      });
}

template <class Real>
Tensor<Real> causal_attention(const Tensor<Real>& qkv, std::size_t batch, std::size_t seq,
                              std::size_t n_heads) {
  require_defined(qkv, "causal_attention");
  if (qkv.rank() != 2 || qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw DimensionError("causal_attention: expected [" + std::to_string(batch * seq) +
                         "x3d], got " + shape_str(qkv.shape()));
  }
  const std::size_t d = qkv.dim(1) / 3;
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(n_heads));
  }
  const std::size_t hd = d / n_heads;
  const std::size_t stride = 3 * d;
  const Real inv_sqrt = Real(1) / std::sqrt(Real(hd));
  auto in = qkv.data();
  std::vector<Real> out(batch * seq * d, Real(0));
  // probs[b][h][i][j], j <= i
  std::vector<Real> probs(batch * n_heads * seq * seq, Real(0));
  std::vector<Real> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      Real* P = probs.data() + (b * n_heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const Real* q = in.data() + (b * seq + i) * stride + h * hd;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const Real* k = in.data() + (b * seq + j) * stride + d + h * hd;
          Real s = 0;
          for (std::size_t t = 0; t < hd; ++t) s += q[t] * k[t];
          scores[j] = s * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        Real z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        Real* o = out.data() + (b * seq + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const Real p = scores[j] / z;
          P[i * seq + j] = p;
          const Real* v = in.data() + (b * seq + j) * stride + 2 * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) o[t] += p * v[t];
        }
      }
    }
  }
  auto s_in = qkv.storage();
  return finish<Real>(
      OpKind::causal_attention, {&qkv}, Tensor<Real>({batch * seq, d}, std::move(out)),
      [s_in, batch, seq, n_heads, d, hd, stride, inv_sqrt,
       probs = std::move(probs)](std::span<const Real> g) {
        const std::vector<Real>& x = s_in->data;
        std::vector<Real> gx(x.size(), Real(0));
        std::vector<Real> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const Real* P = probs.data() + (b * n_heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const Real* go = g.data() + (b * seq + i) * d + h * hd;
              Real dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const Real* v = x.data() + (b * seq + j) * stride + 2 * d + h * hd;
                Real* gv = gx.data() + (b * seq + j) * stride + 2 * d + h * hd;
                const Real p = P[i * seq + j];
                Real s = 0;
                for (std::size_t t = 0; t < hd; ++t) {
                  s += go[t] * v[t];
                  gv[t] += p * go[t];
                }
                dp[j] = s;
                dot += p * s;
              }
              const Real* q = x.data() + (b * seq + i) * stride + h * hd;
              Real* gq = gx.data() + (b * seq + i) * stride + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const Real ds = P[i * seq + j] * (dp[j] - dot) * inv_sqrt;
                if (ds == Real(0)) continue;
                const Real* k = x.data() + (b * seq + j) * stride + d + h * hd;
                Real* gk = gx.data() + (b * seq + j) * stride + d + h * hd;
                for (std::size_t t = 0; t < hd; ++t) {
                  gq[t] += ds * k[t];
                  gk[t] += ds * q[t];
                }
              }
            }
          }
        }
        accumulate<Real>(s_in, gx);
      });
}

template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::size_t> indices) {
  require_defined(table, "gather_rows");
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t n = table.cols();
  const std::size_t rows = table.rows();
  auto src = table.data();
  std::vector<Real> out(indices.size() * n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw IndexError("gather_rows: row " + std::to_string(indices[i]) + " of " +
                       std::to_string(rows));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  auto st = table.storage();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish<Real>(OpKind::gather_rows, {&table},
                      Tensor<Real>({indices.size(), n}, std::move(out)),
                      [st, n, idx = std::move(idx)](std::span<const Real> g) {
                        if (!st->requires_grad) return;
                        if (st->grad.empty()) st->grad.assign(st->data.size(), Real(0));
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          for (std::size_t c = 0; c < n; ++c)
                            st->grad[idx[i] * n + c] += g[i * n + c];
                      });
}

template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   std::span<const std::size_t> targets) {
  require_defined(logits, "softmax_cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  auto x = logits.data();
  std::vector<Real> probs(rows * v);
  Real loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= v) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for " + std::to_string(v) + " classes");
    }
    const Real* row = x.data() + r * v;
    const Real mx = *std::max_element(row, row + v);
    Real z = 0;
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = std::exp(row[c] - mx);
      z += probs[r * v + c];
    }
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    loss -= row[targets[r]] - mx - std::log(z);
  }
  loss /= Real(rows);
  auto sl = logits.storage();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return finish<Real>(OpKind::cross_entropy, {&logits}, Tensor<Real>::scalar(loss),
                      [sl, rows, v, probs = std::move(probs), tg = std::move(tg)](
                          std::span<const Real> g) {
                        const Real k = g[0] / Real(rows);
                        std::vector<Real> gl(rows * v);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < v; ++c)
                            gl[r * v + c] =
                                k * (probs[r * v + c] - (c == tg[r] ? Real(1) : Real(0)));
                        accumulate<Real>(sl, gl);
                      });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  require_defined(x, "sum");
  auto d = x.data();
  const Real total = std::accumulate(d.begin(), d.end(), Real(0));
  auto sx = x.storage();
  return finish<Real>(OpKind::sum, {&x}, Tensor<Real>::scalar(total),
                      [sx](std::span<const Real> g) {
                        std::vector<Real> gx(sx->data.size(), g[0]);
                        accumulate<Real>(sx, gx);
                      });
}

template <class Real>
Tensor<Real> frobenius_norm(const Tensor<Real>& x) {
  require_defined(x, "frobenius_norm");
  Real ss = 0;
  for (Real v : x.data()) ss += v * v;
  const Real norm = std::sqrt(ss);
  auto sx = x.storage();
  return finish<Real>(OpKind::frobenius_norm, {&x}, Tensor<Real>::scalar(norm),
                      [sx, norm](std::span<const Real> g) {
                        std::vector<Real> gx(sx->data.size(), Real(0));
                        if (norm > Real(0)) {
                          for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] = g[0] * sx->data[i] / norm;
                        }
                        accumulate<Real>(sx, gx);
                      });
}

#define TRIMLLM_INSTANTIATE(R)                                                                  \
  template class Tensor<R>;                                                                     \
  template class Tape<R>;                                                                       \
  template void backward<R>(const Tensor<R>&);                                                  \
  template Tensor<R> matmul<R>(const Tensor<R>&, const Tensor<R>&);                             \
  template Tensor<R> add<R>(const Tensor<R>&, const Tensor<R>&);                                \
  template Tensor<R> add_bias<R>(const Tensor<R>&, const Tensor<R>&);                           \
  template Tensor<R> mul<R>(const Tensor<R>&, const Tensor<R>&);                                \
  template Tensor<R> scale<R>(const Tensor<R>&, R);                                             \
  template Tensor<R> gelu<R>(const Tensor<R>&);                                                 \
  template Tensor<R> layernorm<R>(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, R);     \
  template Tensor<R> causal_attention<R>(const Tensor<R>&, std::size_t, std::size_t,            \
                                         std::size_t);                                          \
  template Tensor<R> gather_rows<R>(const Tensor<R>&, std::span<const std::size_t>);            \
  template Tensor<R> softmax_cross_entropy<R>(const Tensor<R>&, std::span<const std::size_t>);  \
  template Tensor<R> sum<R>(const Tensor<R>&);                                                  \
  template Tensor<R> frobenius_norm<R>(const Tensor<R>&);

TRIMLLM_INSTANTIATE(float)
TRIMLLM_INSTANTIATE(double)

#undef TRIMLLM_INSTANTIATE

}  // namespace trimllm
