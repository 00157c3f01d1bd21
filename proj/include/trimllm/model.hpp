#pragma once

// Decoder-only transformer whose MHA and MLP sub-layers are independently
// droppable units.
//
// Each unit is pre-norm with its own residual add:  x <- x + F(LN(x)).
// Units run in (block, MHA-before-MLP) order. A dead unit is skipped, so the
// residual stream passes through unchanged and its parameters are released.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trimllm/optim.hpp"
#include "trimllm/tensor.hpp"

namespace trimllm {

enum class UnitKind : std::uint8_t { mha = 0, mlp = 1 };

struct UnitId {
  std::size_t block = 0;
  UnitKind kind = UnitKind::mha;

  std::size_t index() const { return 2 * block + static_cast<std::size_t>(kind); }
  static UnitId from_index(std::size_t i) {
    return {i / 2, (i % 2) ? UnitKind::mlp : UnitKind::mha};
  }
  friend auto operator<=>(const UnitId&, const UnitId&) = default;
};

std::string to_string(UnitKind kind);
std::string to_string(UnitId id);
/// Parses "3.mlp" / "0.mha".
UnitId parse_unit_id(const std::string& text);

class UnitMask {
 public:
  UnitMask() = default;
  explicit UnitMask(std::size_t n_units, bool alive = true) : alive_(n_units, alive ? 1 : 0) {}

  std::size_t size() const { return alive_.size(); }
  bool alive(UnitId id) const;
  void set_alive(UnitId id, bool value);
  /// Marks a live unit dead; throws StateError if it is already dead.
  void kill(UnitId id);
  std::size_t remaining() const;
  std::vector<UnitId> live_units() const;
  std::vector<UnitId> dead_units() const;
  const std::vector<std::uint8_t>& bytes() const { return alive_; }

  friend bool operator==(const UnitMask&, const UnitMask&) = default;

 private:
  std::vector<std::uint8_t> alive_;
};

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t n_blocks = 2;
  std::size_t max_seq_len = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError on the first invalid field.
  void validate() const;
  std::size_t n_units() const { return 2 * n_blocks; }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mha_param_count() const;
  std::size_t mlp_param_count() const;
  std::size_t aux_param_count() const;
  std::size_t full_param_count() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Right-padded token sequences, batch-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<Token> tokens;          // batch * seq
  std::vector<std::size_t> lengths;   // true length of each row

  static TokenBatch single(std::span<const Token> tokens);
  static TokenBatch pack(const std::vector<std::vector<Token>>& sequences, Token pad = 0);
  std::size_t row(std::size_t b, std::size_t t) const { return b * seq + t; }
};

template <class Real>
class TrimModel {
 public:
  /// Called with each live unit's post-residual output during forward.
  using Observer = std::function<void(UnitId, const Tensor<Real>&)>;

  static TrimModel build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const UnitMask& mask() const { return mask_; }
  std::size_t n_units() const { return config_.n_units(); }

  std::size_t param_count() const;
  std::size_t initial_param_count() const { return config_.full_param_count(); }
  std::size_t unit_param_count(UnitId id) const;
  /// Live parameters over the parameters of the freshly built model.
  double memory_ratio() const;

  /// Residual stream after the last live unit, [batch*seq x d_model].
  /// `mask_override` may hide extra units without releasing them.
  Tensor<Real> hidden(const TokenBatch& batch, const UnitMask* mask_override = nullptr,
                      const Observer* observer = nullptr) const;
  /// Logits for every position, [batch*seq x vocab].
  Tensor<Real> forward(const TokenBatch& batch, const UnitMask* mask_override = nullptr) const;
  Tensor<Real> forward(std::span<const Token> tokens) const;
  /// Logits for selected flattened rows only.
  Tensor<Real> logits_at(const TokenBatch& batch, std::span<const std::size_t> rows,
                         const UnitMask* mask_override = nullptr) const;

  /// Greedy decoding with per-unit key/value caches.
  std::vector<Token> generate(std::span<const Token> prompt, std::size_t n_new) const;

  void drop_unit(UnitId id);

  /// Units in `trainable` receive updates; all other units are frozen.
  /// Embeddings, final norm and head are always trainable.
  void set_trainable(const std::set<UnitId>& trainable);
  bool is_trainable(UnitId id) const;
  std::vector<UnitId> trainable_units() const;

  /// Frobenius norm of each live unit's post-residual output over the true
  /// (unpadded) positions of a sample, averaged over the batch.
  std::map<UnitId, double> snapshot_activation_norms(const TokenBatch& batch) const;

  /// Live parameters (handles share storage with the model).
  std::vector<Parameter<Real>> parameters() const;
  /// Live tensors by name in canonical order: auxiliaries, then units.
  std::vector<std::pair<std::string, Tensor<Real>>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor<Real>>> unit_tensors(UnitId id) const;

  /// Rebuilds a model from saved state; every live tensor must be supplied.
  static TrimModel from_state(const ModelConfig& config, const UnitMask& mask,
                              const std::map<std::string, std::vector<Real>>& tensors);

  /// Independent deep copy.
  TrimModel clone() const;

 private:
  struct Linear {
    Tensor<Real> weight;  // [in x out]
    Tensor<Real> bias;    // [out]
  };
  struct Unit {
    UnitId id;
    bool trainable = true;
    Tensor<Real> ln_gain, ln_bias;
    Linear in, out;  // MHA: qkv + projection; MLP: fc1 + fc2
  };

  TrimModel() = default;
  void check_tokens(const TokenBatch& batch) const;
  const UnitMask& effective_mask(const UnitMask* override_mask) const;
  Tensor<Real> apply_unit(const Unit& u, const Tensor<Real>& x, const TokenBatch& batch) const;
  Tensor<Real> head(const Tensor<Real>& x) const;
  void for_each_tensor(const std::function<void(const std::string&, Tensor<Real>&, bool)>& fn);

  ModelConfig config_;
  UnitMask mask_;
  Tensor<Real> tok_embed_, pos_embed_;
  Tensor<Real> final_gain_, final_bias_;
  Linear head_;
  std::vector<Unit> units_;

  template <class>
  friend class DecodeSession;
};

/// Incremental decoder holding per-MHA-unit key/value caches.
template <class Real>
class DecodeSession {
 public:
  explicit DecodeSession(const TrimModel<Real>& model);
  /// Consumes one token at the next position and returns next-token logits.
  std::span<const Real> step(Token token);
  std::size_t position() const { return pos_; }

 private:
  const TrimModel<Real>& model_;
  std::size_t pos_ = 0;
  std::vector<std::vector<Real>> keys_, values_;  // per unit, [max_seq x d]
  std::vector<Real> x_, h_, wide_, attn_, logits_;
};

}  // namespace trimllm
