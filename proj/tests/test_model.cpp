#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support/reference_decoder.hpp"
#include "trimllm/model.hpp"

using namespace trimllm;
using Model = TrimModel<double>;

namespace {

ModelConfig small_config(std::uint64_t seed = 5) {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.n_blocks = 2;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

// Biases and norm parameters start at constants; scramble everything so the
// comparisons exercise every tensor.
void scramble(Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (auto& [name, t] : m.named_tensors())
    for (double& v : t.mutable_data()) v += dist(rng);
}

std::set<UnitId> alive_set(const UnitMask& mask) {
  auto live = mask.live_units();
  return {live.begin(), live.end()};
}

double max_diff(const Tensor<double>& logits, const reference::Matrix& ref) {
  const std::size_t v = ref.front().size();
  double worst = 0;
  for (std::size_t t = 0; t < ref.size(); ++t)
    for (std::size_t j = 0; j < v; ++j)
      worst = std::max(worst, std::abs(logits.data()[t * v + j] - ref[t][j]));
  return worst;
}

std::vector<double> vals(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

std::vector<int> as_ints(const std::vector<Token>& t) { return {t.begin(), t.end()}; }

}  // namespace

TEST_CASE("unit ids") {
  CHECK(UnitId::from_index(5) == UnitId{2, UnitKind::mlp});
  CHECK(UnitId{3, UnitKind::mha}.index() == 6);
  CHECK(to_string(UnitId{3, UnitKind::mlp}) == "3.mlp");
  CHECK(parse_unit_id("0.mha") == UnitId{0, UnitKind::mha});
  CHECK_THROWS_AS(parse_unit_id("x.mha"), InputError);
  CHECK_THROWS_AS(parse_unit_id("1.ffn"), InputError);
  CHECK_THROWS_AS(parse_unit_id("1"), InputError);
}

TEST_CASE("unit mask") {
  UnitMask m(4);
  CHECK(m.remaining() == 4);
  m.kill({1, UnitKind::mha});
  CHECK(m.remaining() == 3);
  CHECK_THROWS_AS(m.kill({1, UnitKind::mha}), StateError);
  CHECK_THROWS_AS(m.alive({2, UnitKind::mha}), IndexError);
  CHECK(m.dead_units() == std::vector<UnitId>{{1, UnitKind::mha}});
}

TEST_CASE("config validation and parameter counts") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.n_blocks = 0;
  CHECK_THROWS_AS(Model::build(c), ConfigError);

  Model m = Model::build(small_config());
  CHECK(m.param_count() == m.config().full_param_count());
  CHECK(m.memory_ratio() == 1.0);
  const std::size_t mlp = m.unit_param_count({0, UnitKind::mlp});
  CHECK(mlp == 2 * 8 + 8 * 16 + 16 + 16 * 8 + 8);
  m.drop_unit({0, UnitKind::mlp});
  CHECK(m.param_count() == m.config().full_param_count() - mlp);
  CHECK(m.memory_ratio() ==
        doctest::Approx(double(m.param_count()) / double(m.config().full_param_count())));
}

TEST_CASE("forward matches the reference decoder") {
  Model m = Model::build(small_config());
  scramble(m, 1);
  const std::vector<Token> tokens = {1, 7, 3, 19, 0, 4};
  auto ref = reference::decode(m.config(), reference::Weights::from(m), alive_set(m.mask()), as_ints(tokens));
  CHECK(max_diff(m.forward(tokens), ref) < 1e-10);
}

TEST_CASE("drop equivalence over random configs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = small_config(rng());
    c.n_blocks = 1 + rng() % 3;
    c.n_heads = std::size_t(1) << (rng() % 3);
    c.d_model = c.n_heads * (2 + rng() % 3);
    Model m = Model::build(c);
    scramble(m, rng());
    const UnitId victim = UnitId::from_index(rng() % c.n_units());
    m.drop_unit(victim);
    std::vector<Token> tokens(1 + rng() % c.max_seq_len);
    for (Token& t : tokens) t = Token(rng() % c.vocab_size);
    std::set<UnitId> alive;
    for (std::size_t i = 0; i < c.n_units(); ++i)
      if (UnitId::from_index(i) != victim) alive.insert(UnitId::from_index(i));
    auto ref = reference::decode(c, reference::Weights::from(m), alive, as_ints(tokens));
    CHECK(max_diff(m.forward(tokens), ref) < 1e-6);
  }
}

TEST_CASE("mask override hides units without releasing them") {
  Model m = Model::build(small_config());
  scramble(m, 2);
  const std::vector<Token> tokens = {1, 2, 3, 4};
  UnitMask hide = m.mask();
  hide.kill({1, UnitKind::mha});
  Tensor<double> hidden_out = m.forward(TokenBatch::single(tokens), &hide);
  CHECK(m.mask().remaining() == 4);
  CHECK(m.param_count() == m.config().full_param_count());

  Model dropped = m.clone();
  dropped.drop_unit({1, UnitKind::mha});
  auto a = vals(hidden_out);
  auto b = vals(dropped.forward(tokens));
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));

  UnitMask revive = dropped.mask();
  revive.set_alive({1, UnitKind::mha}, true);
  CHECK_THROWS_AS(dropped.forward(TokenBatch::single(tokens), &revive), StateError);
  UnitMask wrong(3);
  CHECK_THROWS_AS(m.forward(TokenBatch::single(tokens), &wrong), DimensionError);
}

TEST_CASE("all units dropped leaves embeddings and head") {
  Model m = Model::build(small_config());
  scramble(m, 3);
  for (std::size_t i = 0; i < m.n_units(); ++i) m.drop_unit(UnitId::from_index(i));
  CHECK(m.param_count() == m.config().aux_param_count());
  const std::vector<Token> tokens = {5, 6};
  auto ref = reference::decode(m.config(), reference::Weights::from(m), {}, as_ints(tokens));
  CHECK(max_diff(m.forward(tokens), ref) < 1e-12);
  CHECK_THROWS_AS(m.drop_unit({0, UnitKind::mha}), StateError);
  CHECK_THROWS_AS(m.drop_unit({9, UnitKind::mha}), IndexError);
}

TEST_CASE("padded batches agree with single sequences") {
  Model m = Model::build(small_config());
  scramble(m, 4);
  std::vector<std::vector<Token>> seqs = {{1, 2, 3, 4, 5}, {6, 7}};
  TokenBatch b = TokenBatch::pack(seqs);
  auto out = vals(m.forward(b));
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto one = vals(m.forward(seqs[i]));
    for (std::size_t j = 0; j < one.size(); ++j)
      CHECK(out[b.row(i, 0) * 20 + j] == doctest::Approx(one[j]).epsilon(1e-12));
  }
}

TEST_CASE("logits_at selects rows") {
  Model m = Model::build(small_config());
  scramble(m, 5);
  TokenBatch b = TokenBatch::single(std::vector<Token>{1, 2, 3});
  auto full = vals(m.forward(b));
  std::vector<std::size_t> rows = {2, 0};
  auto sel = vals(m.logits_at(b, rows));
  for (std::size_t j = 0; j < 20; ++j) {
    CHECK(sel[j] == doctest::Approx(full[2 * 20 + j]).epsilon(1e-12));
    CHECK(sel[20 + j] == doctest::Approx(full[j]).epsilon(1e-12));
  }
}

TEST_CASE("forward input validation") {
  Model m = Model::build(small_config());
  CHECK_THROWS_AS(m.forward(std::vector<Token>{}), InputError);
  CHECK_THROWS_AS(m.forward(std::vector<Token>{1, 20}), InputError);
  CHECK_THROWS_AS(m.forward(std::vector<Token>(9, 1)), InputError);
}

TEST_CASE("cached generation matches full recomputation") {
  Model m = Model::build(small_config());
  scramble(m, 6);
  m.drop_unit({0, UnitKind::mlp});
  std::vector<Token> seq = {1, 4};
  auto out = m.generate(seq, 5);
  REQUIRE(out.size() == 7);
  CHECK(out[0] == 1);
  CHECK(out[1] == 4);
  for (std::size_t i = 2; i < out.size(); ++i) {
    const Token t = out[i];
    auto logits = vals(m.forward(seq));
    const double* last = logits.data() + (seq.size() - 1) * 20;
    CHECK(t == Token(std::max_element(last, last + 20) - last));
    seq.push_back(t);
  }
  CHECK_THROWS_AS(m.generate(std::vector<Token>{1, 2, 3, 4}, 5), InputError);
  CHECK_THROWS_AS(m.generate(std::vector<Token>{}, 1), InputError);
}

TEST_CASE("decode session logits equal forward logits") {
  Model m = Model::build(small_config());
  scramble(m, 7);
  const std::vector<Token> tokens = {3, 1, 4, 1, 5};
  auto full = vals(m.forward(tokens));
  DecodeSession<double> session(m);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto step = session.step(tokens[t]);
    for (std::size_t j = 0; j < 20; ++j) CHECK(step[j] == doctest::Approx(full[t * 20 + j]).epsilon(1e-10));
  }
  CHECK(session.position() == tokens.size());
}

TEST_CASE("trainable sets and parameters") {
  Model m = Model::build(small_config());
  CHECK(m.trainable_units().size() == 4);
  m.set_trainable({{1, UnitKind::mha}});
  CHECK(m.trainable_units() == std::vector<UnitId>{{1, UnitKind::mha}});
  std::size_t trainable_params = 0;
  for (const auto& p : m.parameters()) {
    CHECK(p.tensor.requires_grad() == p.trainable);
    if (p.trainable) trainable_params += p.tensor.numel();
  }
  CHECK(trainable_params == m.config().aux_param_count() + m.config().mha_param_count());
  m.drop_unit({1, UnitKind::mha});
  CHECK_FALSE(m.is_trainable({1, UnitKind::mha}));
  CHECK(m.trainable_units().empty());
  CHECK_THROWS_AS(m.set_trainable({{7, UnitKind::mlp}}), IndexError);
}

TEST_CASE("activation norms follow the observer definition") {
  Model m = Model::build(small_config());
  scramble(m, 8);
  m.drop_unit({0, UnitKind::mha});
  const std::vector<Token> tokens = {1, 2, 3};
  auto norms = m.snapshot_activation_norms(TokenBatch::single(tokens));
  CHECK(norms.size() == 3);
  CHECK_FALSE(norms.contains({0, UnitKind::mha}));
  // The last unit's output is the final residual stream.
  auto h = vals(m.hidden(TokenBatch::single(tokens)));
  double ss = 0;
  for (double v : h) ss += v * v;
  CHECK(norms.at({1, UnitKind::mlp}) == doctest::Approx(std::sqrt(ss)).epsilon(1e-12));
}

TEST_CASE("clone is independent and from_state restores") {
  Model m = Model::build(small_config());
  scramble(m, 9);
  m.drop_unit({1, UnitKind::mlp});
  Model c = m.clone();
  c.named_tensors().front().second.mutable_data()[0] += 1.0;
  CHECK(m.named_tensors().front().second.data()[0] != c.named_tensors().front().second.data()[0]);

  std::map<std::string, std::vector<double>> state;
  for (const auto& [name, t] : m.named_tensors()) state[name] = {t.data().begin(), t.data().end()};
  Model r = Model::from_state(m.config(), m.mask(), state);
  auto a = vals(m.forward(std::vector<Token>{1, 2}));
  auto b = vals(r.forward(std::vector<Token>{1, 2}));
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));

  auto missing = state;
  missing.erase(missing.begin());
  CHECK_THROWS_AS(Model::from_state(m.config(), m.mask(), missing), FormatError);
  auto extra = state;
  extra["bogus"] = {1.0};
  CHECK_THROWS_AS(Model::from_state(m.config(), m.mask(), extra), FormatError);
  auto wrong_size = state;
  wrong_size.begin()->second.push_back(0.0);
  CHECK_THROWS_AS(Model::from_state(m.config(), m.mask(), wrong_size), FormatError);
  CHECK_THROWS_AS(Model::from_state(m.config(), UnitMask(2), state), FormatError);
}

TEST_CASE("build is deterministic in the seed") {
  auto a = vals(Model::build(small_config(1)).forward(std::vector<Token>{1, 2}));
  auto b = vals(Model::build(small_config(1)).forward(std::vector<Token>{1, 2}));
  auto c = vals(Model::build(small_config(2)).forward(std::vector<Token>{1, 2}));
  CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  CHECK_FALSE(std::equal(a.begin(), a.end(), c.begin(), c.end()));
}
