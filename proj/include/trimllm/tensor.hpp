#pragma once

// Dense row-major tensors with a reverse-mode autograd tape.
//
// A Tensor is a cheap handle onto shared storage; copying the handle aliases
// the data. Operations record onto the thread's active Tape (see TapeScope)
// only when at least one input requires a gradient, so inference code pays
// nothing for the tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trimllm/errors.hpp"

namespace trimllm {

using Shape = std::vector<std::size_t>;
using Token = std::int32_t;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TapeId {
  std::uint64_t generation = 0;
  std::size_t index = 0;
};

template <class Real>
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  std::optional<TapeId> tape_id;
};

template <class Real>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> data,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t numel() const { return s_ ? s_->data.size() : 0; }
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  /// Product of all leading dimensions; the last dimension is the row width.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return s_ && !s_->grad.empty(); }
  std::span<const Real> grad() const;
  void clear_grad();
  void accumulate_grad(std::span<const Real> g);

  std::optional<TapeId> tape_id() const { return s_ ? s_->tape_id : std::nullopt; }

  /// Deep copy without gradient or tape membership.
  Tensor clone() const;

  const std::shared_ptr<TensorStorage<Real>>& storage() const { return s_; }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  std::shared_ptr<TensorStorage<Real>> s_;
};

enum class OpKind {
  matmul,
  add,
  add_bias,
  mul,
  scale,
  gelu,
  layernorm,
  causal_attention,
  gather_rows,
  cross_entropy,
  sum,
  frobenius_norm,
};

const char* op_name(OpKind kind);

template <class Real>
class Tape {
 public:
  using StoragePtr = std::shared_ptr<TensorStorage<Real>>;
  using BackwardFn = std::function<void(std::span<const Real> out_grad)>;

  struct Node {
    OpKind kind;
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    BackwardFn backward;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TapeId record(OpKind kind, std::vector<StoragePtr> inputs, StoragePtr output,
                BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs node backward functions in strict
  /// reverse append order.
  void backward(const Tensor<Real>& loss);

  /// Drops every node; tape ids issued before the call become invalid.
  void clear();

  bool owns(const TapeId& id) const {
    return id.generation == generation_ && id.index < nodes_.size();
  }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Tape that operations on this thread currently record onto, or nullptr.
  static Tape* active();

 private:
  template <class>
  friend class TapeScope;
  template <class>
  friend class NoGradScope;
  static Tape*& active_slot();

  std::vector<Node> nodes_;
  std::uint64_t generation_;
};

/// Makes a tape the thread's active tape for the scope's lifetime.
template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : previous_(Tape<Real>::active_slot()) {
    Tape<Real>::active_slot() = &tape;
  }
  ~TapeScope() { Tape<Real>::active_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

/// Suspends recording (e.g. evaluation inside a training loop).
template <class Real>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<Real>::active_slot()) { Tape<Real>::active_slot() = nullptr; }
  ~NoGradScope() { Tape<Real>::active_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* previous_;
};

// ---------------------------------------------------------------------------
// Operations. All are differentiable unless stated otherwise.

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

/// x[rows x n] + bias[n] broadcast over rows.
template <class Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor);

/// Exact (erf-based) GELU.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x);

inline constexpr double kLayerNormEps = 1e-5;

template <class Real>
Tensor<Real> layernorm(const Tensor<Real>& x, const Tensor<Real>& gain,
                       const Tensor<Real>& bias, Real eps = Real(kLayerNormEps));

/// Multi-head causal self-attention over packed projections.
/// qkv is [batch*seq x 3d] laid out as [q | k | v]; returns [batch*seq x d].
template <class Real>
Tensor<Real> causal_attention(const Tensor<Real>& qkv, std::size_t batch, std::size_t seq,
                              std::size_t n_heads);

/// Rows of `table` picked by `indices`, as a [indices.size() x cols] tensor.
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::size_t> indices);

/// Mean negative log-softmax of each row's target class.
template <class Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   std::span<const std::size_t> targets);

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x);

/// sqrt(sum of squared entries), as a scalar tensor.
template <class Real>
Tensor<Real> frobenius_norm(const Tensor<Real>& x);

/// Runs backward on the active tape.
template <class Real>
void backward(const Tensor<Real>& loss);

}  // namespace trimllm
