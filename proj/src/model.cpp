#include "trimllm/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "trimllm/rng.hpp"

namespace trimllm {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;
template <class Real>
using ConstMapRow = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>;
template <class Real>
using MapRow = Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>;

template <class Real>
Tensor<Real> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Real> data(shape_numel(shape));
  for (Real& v : data) v = Real(dist(rng));
  return Tensor<Real>(std::move(shape), std::move(data), true);
}

template <class Real>
Tensor<Real> const_tensor(std::size_t n, Real value) {
  return Tensor<Real>::full({n}, value, true);
}

std::string unit_prefix(UnitId id) {
  return "block" + std::to_string(id.block) + "." + to_string(id.kind);
}

}  // namespace

std::string to_string(UnitKind kind) { return kind == UnitKind::mha ? "mha" : "mlp"; }

std::string to_string(UnitId id) { return std::to_string(id.block) + "." + to_string(id.kind); }

UnitId parse_unit_id(const std::string& text) {
  const auto dot = text.find('.');
  if (dot == std::string::npos) throw InputError("unit id '" + text + "' is not <block>.<mha|mlp>");
  const std::string kind = text.substr(dot + 1);
  std::size_t block = 0;
  try {
    block = std::stoul(text.substr(0, dot));
  } catch (const std::exception&) {
    throw InputError("unit id '" + text + "' has a non-numeric block");
  }
  if (kind == "mha") return {block, UnitKind::mha};
  if (kind == "mlp") return {block, UnitKind::mlp};
  throw InputError("unit id '" + text + "' has unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// UnitMask

bool UnitMask::alive(UnitId id) const {
  if (id.index() >= alive_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  return alive_[id.index()] != 0;
}

void UnitMask::set_alive(UnitId id, bool value) {
  if (id.index() >= alive_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  alive_[id.index()] = value ? 1 : 0;
}

void UnitMask::kill(UnitId id) {
  if (!alive(id)) throw StateError("unit " + to_string(id) + " is already dropped");
  alive_[id.index()] = 0;
}

std::size_t UnitMask::remaining() const {
  return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), 1));
}

std::vector<UnitId> UnitMask::live_units() const {
  std::vector<UnitId> out;
  for (std::size_t i = 0; i < alive_.size(); ++i)
    if (alive_[i]) out.push_back(UnitId::from_index(i));
  return out;
}

std::vector<UnitId> UnitMask::dead_units() const {
  std::vector<UnitId> out;
  for (std::size_t i = 0; i < alive_.size(); ++i)
    if (!alive_[i]) out.push_back(UnitId::from_index(i));
  return out;
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ffn, "d_ffn");
  positive(n_blocks, "n_blocks");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::size_t ModelConfig::mha_param_count() const {
  return 2 * d_model + d_model * 3 * d_model + 3 * d_model + d_model * d_model + d_model;
}

std::size_t ModelConfig::mlp_param_count() const {
  return 2 * d_model + d_model * d_ffn + d_ffn + d_ffn * d_model + d_model;
}

std::size_t ModelConfig::aux_param_count() const {
  return vocab_size * d_model + max_seq_len * d_model + 2 * d_model + d_model * vocab_size +
         vocab_size;
}

std::size_t ModelConfig::full_param_count() const {
  return aux_param_count() + n_blocks * (mha_param_count() + mlp_param_count());
}

// ---------------------------------------------------------------------------
// TokenBatch

TokenBatch TokenBatch::single(std::span<const Token> tokens) {
  TokenBatch b;
  b.batch = 1;
  b.seq = tokens.size();
  b.tokens.assign(tokens.begin(), tokens.end());
  b.lengths = {tokens.size()};
  return b;
}

TokenBatch TokenBatch::pack(const std::vector<std::vector<Token>>& sequences, Token pad) {
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.seq = std::max(b.seq, s.size());
  b.tokens.assign(b.batch * b.seq, pad);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(),
              b.tokens.begin() + static_cast<std::ptrdiff_t>(i * b.seq));
    b.lengths.push_back(sequences[i].size());
  }
  return b;
}

// ---------------------------------------------------------------------------
// TrimModel

template <class Real>
TrimModel<Real> TrimModel<Real>::build(const ModelConfig& config) {
  config.validate();
  TrimModel m;
  m.config_ = config;
  m.mask_ = UnitMask(config.n_units());
  Rng rng(substream_seed(config.seed, "init"));
  const std::size_t d = config.d_model, f = config.d_ffn, v = config.vocab_size;
  const double std_in = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * double(config.n_blocks));
  m.tok_embed_ = normal_tensor<Real>({v, d}, std_in, rng);
  m.pos_embed_ = normal_tensor<Real>({config.max_seq_len, d}, std_in, rng);
  for (std::size_t i = 0; i < config.n_units(); ++i) {
    Unit u;
    u.id = UnitId::from_index(i);
    u.ln_gain = const_tensor<Real>(d, Real(1));
    u.ln_bias = const_tensor<Real>(d, Real(0));
    const std::size_t wide = u.id.kind == UnitKind::mha ? 3 * d : f;
    u.in.weight = normal_tensor<Real>({d, wide}, std_in, rng);
    u.in.bias = const_tensor<Real>(wide, Real(0));
    u.out.weight = normal_tensor<Real>({u.id.kind == UnitKind::mha ? d : f, d}, std_out, rng);
    u.out.bias = const_tensor<Real>(d, Real(0));
    m.units_.push_back(std::move(u));
  }
  m.final_gain_ = const_tensor<Real>(d, Real(1));
  m.final_bias_ = const_tensor<Real>(d, Real(0));
  m.head_.weight = normal_tensor<Real>({d, v}, std_in, rng);
  m.head_.bias = const_tensor<Real>(v, Real(0));
  return m;
}

template <class Real>
std::size_t TrimModel<Real>::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

template <class Real>
std::size_t TrimModel<Real>::unit_param_count(UnitId id) const {
  return id.kind == UnitKind::mha ? config_.mha_param_count() : config_.mlp_param_count();
}

template <class Real>
double TrimModel<Real>::memory_ratio() const {
  return double(param_count()) / double(initial_param_count());
}

template <class Real>
void TrimModel<Real>::check_tokens(const TokenBatch& batch) const {
  if (batch.batch == 0 || batch.seq == 0) throw InputError("forward: empty token batch");
  if (batch.tokens.size() != batch.batch * batch.seq || batch.lengths.size() != batch.batch) {
    throw InputError("forward: token batch layout is inconsistent");
  }
  if (batch.seq > config_.max_seq_len) {
    throw InputError("forward: sequence length " + std::to_string(batch.seq) +
                     " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (Token t : batch.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw InputError("forward: token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
}

template <class Real>
const UnitMask& TrimModel<Real>::effective_mask(const UnitMask* override_mask) const {
  if (override_mask == nullptr) return mask_;
  if (override_mask->size() != mask_.size()) throw DimensionError("mask override has wrong size");
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    const UnitId id = UnitId::from_index(i);
    if (override_mask->alive(id) && !mask_.alive(id)) {
      throw StateError("mask override revives dropped unit " + to_string(id));
    }
  }
  return *override_mask;
}

template <class Real>
Tensor<Real> TrimModel<Real>::apply_unit(const Unit& u, const Tensor<Real>& x,
                                         const TokenBatch& batch) const {
  Tensor<Real> h = layernorm(x, u.ln_gain, u.ln_bias);
  Tensor<Real> y = add_bias(matmul(h, u.in.weight), u.in.bias);
  if (u.id.kind == UnitKind::mha) {
    y = causal_attention(y, batch.batch, batch.seq, config_.n_heads);
  } else {
    y = gelu(y);
  }
  y = add_bias(matmul(y, u.out.weight), u.out.bias);
  return add(x, y);
}

template <class Real>
Tensor<Real> TrimModel<Real>::hidden(const TokenBatch& batch, const UnitMask* mask_override,
                                     const Observer* observer) const {
  check_tokens(batch);
  const UnitMask& mask = effective_mask(mask_override);
  std::vector<std::size_t> tok(batch.tokens.size()), pos(batch.tokens.size());
  for (std::size_t i = 0; i < tok.size(); ++i) {
    tok[i] = static_cast<std::size_t>(batch.tokens[i]);
    pos[i] = i % batch.seq;
  }
  Tensor<Real> x = add(gather_rows(tok_embed_, tok), gather_rows(pos_embed_, pos));
  for (const Unit& u : units_) {
    if (!mask.alive(u.id)) continue;
    x = apply_unit(u, x, batch);
    if (observer) (*observer)(u.id, x);
  }
  return x;
}

template <class Real>
Tensor<Real> TrimModel<Real>::head(const Tensor<Real>& x) const {
  return add_bias(matmul(layernorm(x, final_gain_, final_bias_), head_.weight), head_.bias);
}

template <class Real>
Tensor<Real> TrimModel<Real>::forward(const TokenBatch& batch, const UnitMask* mask_override) const {
  return head(hidden(batch, mask_override));
}

template <class Real>
Tensor<Real> TrimModel<Real>::forward(std::span<const Token> tokens) const {
  return forward(TokenBatch::single(tokens));
}

template <class Real>
Tensor<Real> TrimModel<Real>::logits_at(const TokenBatch& batch, std::span<const std::size_t> rows,
                                        const UnitMask* mask_override) const {
  return head(gather_rows(hidden(batch, mask_override), rows));
}

template <class Real>
void TrimModel<Real>::drop_unit(UnitId id) {
  if (id.index() >= units_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  mask_.kill(id);
  Unit& u = units_[id.index()];
  u.trainable = false;
  u.ln_gain = {};
  u.ln_bias = {};
  u.in = {};
  u.out = {};
}

template <class Real>
void TrimModel<Real>::set_trainable(const std::set<UnitId>& trainable) {
  for (UnitId id : trainable) {
    if (id.index() >= units_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  }
  for (Unit& u : units_) {
    u.trainable = mask_.alive(u.id) && trainable.contains(u.id);
    if (!mask_.alive(u.id)) continue;
    for (Tensor<Real>* t : {&u.ln_gain, &u.ln_bias, &u.in.weight, &u.in.bias, &u.out.weight,
                            &u.out.bias}) {
      t->set_requires_grad(u.trainable);
    }
  }
}

template <class Real>
bool TrimModel<Real>::is_trainable(UnitId id) const {
  if (id.index() >= units_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  return units_[id.index()].trainable;
}

template <class Real>
std::vector<UnitId> TrimModel<Real>::trainable_units() const {
  std::vector<UnitId> out;
  for (const Unit& u : units_)
    if (u.trainable) out.push_back(u.id);
  return out;
}

template <class Real>
std::map<UnitId, double> TrimModel<Real>::snapshot_activation_norms(const TokenBatch& batch) const {
  NoGradScope<Real> no_grad;
  std::map<UnitId, double> norms;
  const std::size_t d = config_.d_model;
  Observer obs = [&](UnitId id, const Tensor<Real>& x) {
    auto data = x.data();
    double total = 0;
    for (std::size_t b = 0; b < batch.batch; ++b) {
      double ss = 0;
      const std::size_t begin = batch.row(b, 0) * d;
      const std::size_t end = begin + batch.lengths[b] * d;
      for (std::size_t i = begin; i < end; ++i) ss += double(data[i]) * double(data[i]);
      total += std::sqrt(ss);
    }
    norms[id] = total / double(batch.batch);
  };
  hidden(batch, nullptr, &obs);
  return norms;
}

template <class Real>
std::vector<std::pair<std::string, Tensor<Real>>> TrimModel<Real>::unit_tensors(UnitId id) const {
  if (id.index() >= units_.size()) throw IndexError("unit " + to_string(id) + " out of range");
  if (!mask_.alive(id)) return {};
  const Unit& u = units_[id.index()];
  const std::string p = unit_prefix(id);
  const bool mha = id.kind == UnitKind::mha;
  return {
      {p + ".ln.gain", u.ln_gain},
      {p + ".ln.bias", u.ln_bias},
      {p + (mha ? ".qkv.weight" : ".fc1.weight"), u.in.weight},
      {p + (mha ? ".qkv.bias" : ".fc1.bias"), u.in.bias},
      {p + (mha ? ".proj.weight" : ".fc2.weight"), u.out.weight},
      {p + (mha ? ".proj.bias" : ".fc2.bias"), u.out.bias},
  };
}

template <class Real>
std::vector<std::pair<std::string, Tensor<Real>>> TrimModel<Real>::named_tensors() const {
  std::vector<std::pair<std::string, Tensor<Real>>> out = {
      {"embed.tokens", tok_embed_},
      {"embed.positions", pos_embed_},
      {"final_ln.gain", final_gain_},
      {"final_ln.bias", final_bias_},
      {"head.weight", head_.weight},
      {"head.bias", head_.bias},
  };
  for (const Unit& u : units_) {
    auto ts = unit_tensors(u.id);
    out.insert(out.end(), ts.begin(), ts.end());
  }
  return out;
}

template <class Real>
std::vector<Parameter<Real>> TrimModel<Real>::parameters() const {
  std::vector<Parameter<Real>> out;
  for (auto& [name, t] : named_tensors()) {
    if (name.rfind("block", 0) == 0) break;
    out.push_back({name, t, true});
  }
  for (const Unit& u : units_)
    for (auto& [name, t] : unit_tensors(u.id)) out.push_back({name, t, u.trainable});
  return out;
}

template <class Real>
TrimModel<Real> TrimModel<Real>::from_state(const ModelConfig& config, const UnitMask& mask,
                                            const std::map<std::string, std::vector<Real>>& tensors) {
  TrimModel m = build(config);
  if (mask.size() != m.n_units()) {
    throw FormatError("unit mask has " + std::to_string(mask.size()) + " entries, model has " +
                      std::to_string(m.n_units()));
  }
  for (UnitId id : mask.dead_units()) m.drop_unit(id);
  std::size_t used = 0;
  for (auto& [name, t] : m.named_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("missing tensor '" + name + "'");
    if (it->second.size() != t.numel()) {
      throw FormatError("tensor '" + name + "' has " + std::to_string(it->second.size()) +
                        " values, expected " + std::to_string(t.numel()));
    }
    std::copy(it->second.begin(), it->second.end(), t.mutable_data().begin());
    ++used;
  }
  if (used != tensors.size()) throw FormatError("state contains tensors the model does not use");
  return m;
}

template <class Real>
TrimModel<Real> TrimModel<Real>::clone() const {
  TrimModel m;
  m.config_ = config_;
  m.mask_ = mask_;
  auto copy = [](const Tensor<Real>& t) {
    if (!t.defined()) return Tensor<Real>();
    Tensor<Real> c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  m.tok_embed_ = copy(tok_embed_);
  m.pos_embed_ = copy(pos_embed_);
  m.final_gain_ = copy(final_gain_);
  m.final_bias_ = copy(final_bias_);
  m.head_ = {copy(head_.weight), copy(head_.bias)};
  for (const Unit& u : units_) {
    Unit c;
    c.id = u.id;
    c.trainable = u.trainable;
    c.ln_gain = copy(u.ln_gain);
    c.ln_bias = copy(u.ln_bias);
    c.in = {copy(u.in.weight), copy(u.in.bias)};
    c.out = {copy(u.out.weight), copy(u.out.bias)};
    m.units_.push_back(std::move(c));
  }
  return m;
}

template <class Real>
std::vector<Token> TrimModel<Real>::generate(std::span<const Token> prompt, std::size_t n_new) const {
  std::vector<Token> out(prompt.begin(), prompt.end());
  if (n_new == 0) return out;
  if (prompt.empty()) throw InputError("generate: empty prompt");
  if (prompt.size() + n_new > config_.max_seq_len) {
    throw InputError("generate: prompt " + std::to_string(prompt.size()) + " + " +
                     std::to_string(n_new) + " new tokens exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  DecodeSession<Real> session(*this);
  std::span<const Real> logits;
  for (Token t : prompt) logits = session.step(t);
  for (std::size_t i = 0; i < n_new; ++i) {
    const auto best = std::max_element(logits.begin(), logits.end());
    const Token next = static_cast<Token>(std::distance(logits.begin(), best));
    out.push_back(next);
    if (i + 1 < n_new) logits = session.step(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// DecodeSession

namespace {

template <class Real>
void layernorm_row(std::span<const Real> x, std::span<const Real> gain, std::span<const Real> bias,
                   std::span<Real> out) {
  const std::size_t d = x.size();
  Real mean = 0;
  for (Real v : x) mean += v;
  mean /= Real(d);
  Real var = 0;
  for (Real v : x) var += (v - mean) * (v - mean);
  var /= Real(d);
  const Real is = Real(1) / std::sqrt(var + Real(kLayerNormEps));
  for (std::size_t c = 0; c < d; ++c) out[c] = (x[c] - mean) * is * gain[c] + bias[c];
}

/// out = in . W + b for a row vector `in`.
template <class Real>
void linear_row(std::span<const Real> in, const Tensor<Real>& w, const Tensor<Real>& b,
                std::span<Real> out) {
  const std::size_t n_in = w.dim(0), n_out = w.dim(1);
  MapRow<Real>(out.data(), n_out).noalias() =
      ConstMapRow<Real>(in.data(), n_in) * ConstMapMat<Real>(w.data().data(), n_in, n_out) +
      ConstMapRow<Real>(b.data().data(), n_out);
}

}  // namespace

template <class Real>
DecodeSession<Real>::DecodeSession(const TrimModel<Real>& model) : model_(model) {
  const ModelConfig& c = model.config();
  keys_.resize(c.n_units());
  values_.resize(c.n_units());
  for (std::size_t i = 0; i < c.n_units(); ++i) {
    const UnitId id = UnitId::from_index(i);
    if (id.kind == UnitKind::mha && model.mask().alive(id)) {
      keys_[i].assign(c.max_seq_len * c.d_model, Real(0));
      values_[i].assign(c.max_seq_len * c.d_model, Real(0));
    }
  }
  x_.resize(c.d_model);
  h_.resize(c.d_model);
  wide_.resize(std::max(3 * c.d_model, c.d_ffn));
  attn_.resize(c.d_model);
  logits_.resize(c.vocab_size);
}

template <class Real>
std::span<const Real> DecodeSession<Real>::step(Token token) {
  const ModelConfig& c = model_.config();
  if (pos_ >= c.max_seq_len) throw InputError("decode: sequence is full");
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
    throw InputError("decode: token " + std::to_string(token) + " outside vocabulary");
  }
  const std::size_t d = c.d_model, hd = c.head_dim();
  auto tok = model_.tok_embed_.data().subspan(static_cast<std::size_t>(token) * d, d);
  auto pos = model_.pos_embed_.data().subspan(pos_ * d, d);
  for (std::size_t i = 0; i < d; ++i) x_[i] = tok[i] + pos[i];

  std::vector<Real> scores(pos_ + 1);
  const Real inv_sqrt = Real(1) / std::sqrt(Real(hd));
  for (const auto& u : model_.units_) {
    if (!model_.mask().alive(u.id)) continue;
    layernorm_row<Real>(x_, u.ln_gain.data(), u.ln_bias.data(), h_);
    if (u.id.kind == UnitKind::mha) {
      std::span<Real> qkv(wide_.data(), 3 * d);
      linear_row<Real>(h_, u.in.weight, u.in.bias, qkv);
      auto& K = keys_[u.id.index()];
      auto& V = values_[u.id.index()];
      std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(d), d, K.begin() + static_cast<std::ptrdiff_t>(pos_ * d));
      std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), d, V.begin() + static_cast<std::ptrdiff_t>(pos_ * d));
      std::fill(attn_.begin(), attn_.end(), Real(0));
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const Real* q = qkv.data() + h * hd;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j <= pos_; ++j) {
          const Real* k = K.data() + j * d + h * hd;
          Real s = 0;
          for (std::size_t t = 0; t < hd; ++t) s += q[t] * k[t];
          scores[j] = s * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        Real z = 0;
        for (std::size_t j = 0; j <= pos_; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        Real* o = attn_.data() + h * hd;
        for (std::size_t j = 0; j <= pos_; ++j) {
          const Real p = scores[j] / z;
          const Real* v = V.data() + j * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) o[t] += p * v[t];
        }
      }
      linear_row<Real>(attn_, u.out.weight, u.out.bias, h_);
    } else {
      std::span<Real> mid(wide_.data(), c.d_ffn);
      linear_row<Real>(h_, u.in.weight, u.in.bias, mid);
      constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
      for (Real& v : mid) v = Real(0.5) * v * (Real(1) + std::erf(v * inv_sqrt2));
      linear_row<Real>(mid, u.out.weight, u.out.bias, h_);
    }
    for (std::size_t i = 0; i < d; ++i) x_[i] += h_[i];
  }
  layernorm_row<Real>(x_, model_.final_gain_.data(), model_.final_bias_.data(), h_);
  linear_row<Real>(h_, model_.head_.weight, model_.head_.bias, logits_);
  ++pos_;
  return logits_;
}

template class TrimModel<float>;
template class TrimModel<double>;
template class DecodeSession<float>;
template class DecodeSession<double>;

}  // namespace trimllm
