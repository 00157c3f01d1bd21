// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/random.hpp"
#include "support/reference_decoder.hpp"
#include "trimllm/bench.hpp"
#include "trimllm/checkpoint.hpp"
#include "trimllm/costmodel.hpp"
#include "trimllm/linalg.hpp"
#include "trimllm/scoring.hpp"
#include "trimllm/tasks.hpp"
#include "trimllm/trimmer.hpp"

using namespace trimllm;
using testing_support::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. scoring formulas

void criterion_1(Outcome& o) {
  double worst = 0;
  for (double a : {0.0, 25.0, 50.0, 75.0, 100.0}) {
    for (double d : {0.001, 0.01, 0.1}) {
      const double direct = (100.0 - a) / ((1.0 + d * d) + (1.0 + d) * a);
      worst = std::max(worst, std::abs(scan_score(a, d) - direct));
      if (a == 0.0) o.require(std::abs(scan_score(a, d) - 100.0 / (1.0 + d * d)) <= 1e-12, "a=0 endpoint");
      if (a == 100.0) o.require(scan_score(a, d) == 0.0, "a=100 endpoint");
    }
  }
  o.require(worst <= 1e-12, "scan score off by " + std::to_string(worst));

  const std::vector<double> pair = {2.0, 4.0};
  const auto s = norm_score_values(pair);
  o.require(std::abs(s[0] - 100.0) <= 1e-12 && std::abs(s[1] - 50.0) <= 1e-12, "norms {2,4}");

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> norm(0.01, 50.0), factor(0.001, 1000.0);
  double worst_scale = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng() % 30);
    for (double& x : v) x = norm(rng);
    const double k = factor(rng);
    std::vector<double> scaled = v;
    for (double& x : scaled) x *= k;
    const auto a = norm_score_values(v), b = norm_score_values(scaled);
    for (std::size_t i = 0; i < v.size(); ++i) worst_scale = std::max(worst_scale, std::abs(a[i] - b[i]));
  }
  o.require(worst_scale <= 1e-9, "scaling changed norm scores by " + std::to_string(worst_scale));
  o.detail << (o.pass ? "" : "; ") << "max scan error " << worst << ", max scaling drift " << worst_scale;
}

// ---------------------------------------------------------------------------
// 2. cost model

void criterion_2(Outcome& o) {
  CostParams p;
  p.c = 1;
  std::size_t checked = 0;
  for (std::size_t n = 1; n <= 256; ++n) {
    for (std::size_t nd = 1; nd <= n; ++nd) {
      p.n_layers = n;
      p.n_drop = nd;
      double one = 0, two = 0;
      for (std::size_t i = 0; i < nd; ++i) one += double(n - i);
      for (std::size_t i = 0; i < nd / 2; ++i) two += double(n - 2 * i);
      if (t_drop1(p) != one) o.require(false, "t_drop1 N=" + std::to_string(n) + " n_d=" + std::to_string(nd));
      if (nd % 2 == 0 && t_drop2(p) != two) o.require(false, "t_drop2 N=" + std::to_string(n) + " n_d=" + std::to_string(nd));
      ++checked;
    }
  }
  p.n_layers = 64;
  p.n_drop = 32;
  o.require(t_drop1(p) == 1552.0, "t_drop1(64,32) = " + fmt(t_drop1(p)));
  o.require(t_drop2(p) == 784.0, "t_drop2(64,32) = " + fmt(t_drop2(p)));
  o.detail << (o.pass ? "" : "; ") << checked << " (N, n_d) pairs, spot values " << t_drop1(p) << " and " << t_drop2(p);
}

// ---------------------------------------------------------------------------
// 3. gradients

using TD = Tensor<double>;

double fd(const std::function<TD(const TD&)>& f, const TD& x) {
  return finite_difference_check<double>(f, x, 6e-6, 1e-5);
}

void criterion_3(Outcome& o) {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t r = 2 + rng() % 3, c = 2 + rng() % 3, k = 2 + rng() % 3;
    TD a = random_tensor<double>({r, k}, rng), b = random_tensor<double>({k, c}, rng);
    TD x = random_tensor<double>({r, c}, rng), y = random_tensor<double>({r, c}, rng);
    TD bias = random_tensor<double>({c}, rng), gain = random_tensor<double>({c}, rng);
    TD w = random_tensor<double>({r, c}, rng);
    auto wsum = [&](const TD& t) { return sum(mul(t, w)); };

    note("matmul", fd([&](const TD& v) { TD m = matmul(v, b); return sum(mul(m, m)); }, a));
    note("matmul", fd([&](const TD& v) { TD m = matmul(a, v); return sum(mul(m, m)); }, b));
    note("add", fd([&](const TD& v) { return wsum(add(v, y)); }, x));
    note("add_bias", fd([&](const TD& v) { return wsum(add_bias(x, v)); }, bias));
    note("add_bias", fd([&](const TD& v) { return wsum(add_bias(v, bias)); }, x));
    note("mul", fd([&](const TD& v) { return wsum(mul(v, y)); }, x));
    note("scale", fd([&](const TD& v) { return wsum(scale(v, 0.7)); }, x));
    note("gelu", fd([&](const TD& v) { return wsum(gelu(v)); }, x));
    note("layernorm", fd([&](const TD& v) { return wsum(layernorm(v, gain, bias)); }, x));
    note("layernorm", fd([&](const TD& v) { return wsum(layernorm(x, v, bias)); }, gain));
    note("layernorm", fd([&](const TD& v) { return wsum(layernorm(x, gain, v)); }, bias));
    std::vector<std::size_t> idx(3);
    for (auto& i : idx) i = rng() % r;
    TD wg = random_tensor<double>({3, c}, rng);
    note("gather_rows", fd([&](const TD& v) { return sum(mul(gather_rows(v, std::span<const std::size_t>(idx)), wg)); }, x));
    std::vector<std::size_t> targets(r);
    for (auto& t : targets) t = rng() % c;
    note("softmax_cross_entropy", fd([&](const TD& v) { return softmax_cross_entropy(v, std::span<const std::size_t>(targets)); }, x));
    note("sum", fd([&](const TD& v) { return sum(v); }, x));
    note("frobenius_norm", fd([&](const TD& v) { return frobenius_norm(v); }, x));

    const std::size_t heads = 1 + rng() % 2, hd = 2, seq = 2 + rng() % 3, batch = 1 + rng() % 2;
    TD qkv = random_tensor<double>({batch * seq, 3 * heads * hd}, rng);
    TD wa = random_tensor<double>({batch * seq, heads * hd}, rng);
    note("causal_attention", fd([&](const TD& v) { return sum(mul(causal_attention(v, batch, seq, heads), wa)); }, qkv));

    ModelConfig mc;
    mc.vocab_size = 7;
    mc.d_model = 4;
    mc.n_heads = 2;
    mc.d_ffn = 6;
    mc.n_blocks = 1;
    mc.max_seq_len = 5;
    mc.seed = seed;
    auto model = TrimModel<double>::build(mc);
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (auto& [name, t] : model.named_tensors())
      for (double& v : t.mutable_data()) v += jitter(rng);
    const auto batch_tokens = TokenBatch::pack({{1, 3, 5, 2}, {6, 0, 4}});
    std::vector<std::size_t> rows, tgt;
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t t = 0; t < batch_tokens.lengths[bi]; ++t) {
        rows.push_back(batch_tokens.row(bi, t));
        tgt.push_back(rng() % mc.vocab_size);
      }
    for (auto& [name, t] : model.named_tensors()) {
      note("model loss", fd([&](const TD&) {
             return softmax_cross_entropy(model.logits_at(batch_tokens, rows), std::span<const std::size_t>(tgt));
           }, t));
    }
  }
  double overall = 0;
  for (const auto& [name, err] : worst) {
    overall = std::max(overall, err);
    o.require(err < 1e-5, name + " relative error " + std::to_string(err));
  }
  o.detail << (o.pass ? "" : "; ") << worst.size() << " checks over 100 seeds, worst relative error " << overall;
}

// ---------------------------------------------------------------------------
// 4. drop equivalence

void criterion_4(Outcome& o) {
  std::mt19937_64 rng(44);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.n_blocks = 1 + rng() % 4;
    c.n_heads = std::size_t(1) << (rng() % 3);
    c.d_model = c.n_heads * (2 + rng() % 4);
    c.d_ffn = 4 + rng() % 12;
    c.vocab_size = 8 + rng() % 20;
    c.max_seq_len = 3 + rng() % 8;
    c.seed = rng();
    auto m = TrimModel<double>::build(c);
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (auto& [name, t] : m.named_tensors())
      for (double& v : t.mutable_data()) v += jitter(rng);
    const UnitId victim = UnitId::from_index(rng() % c.n_units());
    m.drop_unit(victim);
    std::vector<Token> tokens(1 + rng() % c.max_seq_len);
    for (Token& t : tokens) t = Token(rng() % c.vocab_size);
    std::set<UnitId> alive;
    for (std::size_t i = 0; i < c.n_units(); ++i)
      if (UnitId::from_index(i) != victim) alive.insert(UnitId::from_index(i));
    const auto ref = reference::decode(c, reference::Weights::from(m), alive,
                                       std::vector<int>(tokens.begin(), tokens.end()));
    const auto logits = m.forward(tokens);
    const std::size_t v = c.vocab_size;
    for (std::size_t t = 0; t < ref.size(); ++t)
      for (std::size_t j = 0; j < v; ++j)
        worst = std::max(worst, std::abs(logits.data()[t * v + j] - ref[t][j]));
  }
  o.require(worst <= 1e-6, "max abs difference " + std::to_string(worst));
  o.detail << (o.pass ? "" : "; ") << "20 pairs, max abs difference " << worst;
}

// ---------------------------------------------------------------------------
// 5. Frobenius / nuclear sandwich

void criterion_5(Outcome& o) {
  std::mt19937_64 rng(5);
  double worst_sq = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 1 + rng() % 32, c = 1 + rng() % 32;
    TD m;
    if (trial % 3 == 0) {
      // low-rank product
      const std::size_t k = 1 + rng() % std::min(r, c);
      m = matmul(random_tensor<double>({r, k}, rng), random_tensor<double>({k, c}, rng));
    } else {
      m = random_tensor<double>({r, c}, rng);
    }
    const auto sv = singular_values(m);
    const double fro = frobenius_value(m), nuc = nuclear_norm(m);
    const double tol = double(std::max(r, c)) * sv.front() * 1e-12;
    std::size_t rank = 0;
    double sq = 0;
    for (double s : sv) {
      if (s > tol) ++rank;
      sq += s * s;
    }
    double fro_sq = 0;
    for (double v : m.data()) fro_sq += v * v;
    worst_sq = std::max(worst_sq, std::abs(fro_sq - sq));
    const double slack = 1e-9 * std::max(1.0, nuc);
    if (!(fro <= nuc + slack && nuc <= std::sqrt(double(rank)) * fro + slack)) {
      o.require(false, "sandwich broken for " + std::to_string(r) + "x" + std::to_string(c));
    }
  }
  o.require(worst_sq <= 1e-9, "sum of squared singular values off by " + std::to_string(worst_sq));
  o.detail << (o.pass ? "" : "; ") << "100 matrices, max |F^2 - sum s^2| " << worst_sq;
}

// ---------------------------------------------------------------------------
// 6-8. specialization experiment

ModelConfig experiment_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.vocab_size = 128;
  mc.d_model = 128;
  mc.n_heads = 4;
  mc.d_ffn = 64;
  mc.n_blocks = 8;
  mc.max_seq_len = 16;
  mc.seed = seed;
  return mc;
}

struct SeedResult {
  std::size_t dropped = 0;
  double full_ft = 0, trimmed = 0;
  double random = 0, top = 0, bottom = 0;
  double mixture_b = 0, trimmed_b = 0, chance_b = 0;
};

constexpr std::size_t kPretrainEpochs = 60;
constexpr std::size_t kBudgetEpochs = 8;

SeedResult specialization_seed(std::uint64_t seed) {
  // A: sequence reversal. B, C: addition tables mod 16, memorised in full.
  DomainSpec a;
  a.domain_id = 0;
  a.kind = TaskKind::sequence_reversal;
  a.vocab_base = 16;
  a.length = 3;
  a.n_symbols = 16;
  a.seed = 11;
  DomainSpec b;
  b.domain_id = 1;
  b.kind = TaskKind::modular_arithmetic;
  b.vocab_base = 48;
  b.modulus = 16;
  b.seed = 12;
  DomainSpec c = b;
  c.domain_id = 2;
  c.vocab_base = 80;
  c.seed = 13;
  const std::vector<DomainSpec> specs = {a, b, c};
  validate_disjoint(specs);

  const Dataset da = gen_domain_dataset(a, 400, 200, 200, 128);
  const Dataset db = gen_domain_dataset(b, 254, 1, 1, 128);
  const Dataset dc = gen_domain_dataset(c, 254, 1, 1, 128);
  std::vector<Dataset> parts = {da, db, dc};
  for (std::size_t p : {1, 2}) {
    const Split facts = parts[p].train;
    for (int k = 1; k < 4; ++k) parts[p].train.insert(parts[p].train.end(), facts.begin(), facts.end());
  }
  const Dataset mix = mix_datasets(parts, 5);

  auto base = TrimModel<float>::build(experiment_model(seed));
  OptimizerConfig oc;
  oc.lr = 1e-3;
  Optimizer<float> opt(oc);
  for (std::size_t e = 1; e <= kPretrainEpochs; ++e) {
    const double progress = double(e - 1) / double(kPretrainEpochs);
    opt.set_lr(oc.lr * (0.1 + 0.45 * (1 + std::cos(M_PI * progress))));
    train_epoch(base, opt, mix.train, 16, e);
  }

  const Split& b_queries = db.train;
  SeedResult r;
  r.chance_b = chance_accuracy(b_queries, 128);
  r.mixture_b = evaluate_accuracy(base, b_queries).percent;

  {
    auto m = base.clone();
    fine_tune(m, da.train, da.valid, kBudgetEpochs, oc, 16, seed);
    r.full_ft = evaluate_accuracy(m, da.test).percent;
  }
  {
    auto m = base.clone();
    TrimConfig tc;
    tc.method = SelectionMethod::both;
    tc.r = 0.25;
    tc.drops_per_epoch = 1;
    tc.stop.floor_fraction = 0.9;
    tc.max_epochs = kBudgetEpochs;
    tc.optimizer = oc;
    tc.batch_size = 16;
    tc.calibration_size = 200;
    tc.seed = seed;
    const TrimReport rep = run_trim(m, da.train, da.valid, tc);
    r.dropped = rep.drops.size();
    r.trimmed = evaluate_accuracy(m, da.test).percent;
    r.trimmed_b = evaluate_accuracy(m, b_queries).percent;
  }
  for (RuleStrategy s : {RuleStrategy::random, RuleStrategy::top, RuleStrategy::bottom}) {
    auto m = base.clone();
    rule_based_mask(m, s, 0.5, seed);
    fine_tune(m, da.train, da.valid, kBudgetEpochs, oc, 16, seed);
    const double acc = evaluate_accuracy(m, da.test).percent;
    (s == RuleStrategy::random ? r.random : s == RuleStrategy::top ? r.top : r.bottom) = acc;
  }
  return r;
}

const std::vector<SeedResult>& specialization_results() {
  static const std::vector<SeedResult> results = [] {
    std::vector<SeedResult> out;
    for (std::uint64_t seed : {1, 2, 3}) {
      out.push_back(specialization_seed(seed));
      const SeedResult& r = out.back();
      std::cout << "  seed " << seed << ": dropped " << r.dropped << "/16, A full-FT " << fmt(r.full_ft)
                << " trimmed " << fmt(r.trimmed) << " random " << fmt(r.random) << " top "
                << fmt(r.top) << " bottom " << fmt(r.bottom) << "; B mixture " << fmt(r.mixture_b)
                << " trimmed " << fmt(r.trimmed_b) << " chance " << fmt(r.chance_b) << std::endl;
    }
    return out;
  }();
  return results;
}

std::vector<double> column(double SeedResult::*field) {
  std::vector<double> v;
  for (const SeedResult& r : specialization_results()) v.push_back(r.*field);
  return v;
}

void criterion_6(Outcome& o) {
  const auto& res = specialization_results();
  for (const SeedResult& r : res) o.require(r.dropped * 2 >= 16, "a seed dropped only " + std::to_string(r.dropped) + " units");
  const double trimmed = mean(column(&SeedResult::trimmed)), full = mean(column(&SeedResult::full_ft));
  o.require(trimmed >= 0.9 * full, "trimmed A " + fmt(trimmed) + " < 0.9 x " + fmt(full));
  o.detail << (o.pass ? "" : "; ") << "mean A accuracy trimmed " << fmt(trimmed) << " vs full-FT " << fmt(full)
           << " (floor " << fmt(0.9 * full) << ")";
}

void criterion_7(Outcome& o) {
  const double progressive = mean(column(&SeedResult::trimmed));
  o.detail << "progressive " << fmt(progressive);
  for (auto [name, field] : {std::pair{"random", &SeedResult::random}, std::pair{"top", &SeedResult::top},
                             std::pair{"bottom", &SeedResult::bottom}}) {
    const double v = mean(column(field));
    o.detail << ", " << name << " " << fmt(v);
    if (v > progressive - 5.0) {
      o.pass = false;
      o.detail << " (not 5 points below)";
    }
  }
}

void criterion_8(Outcome& o) {
  const double chance = mean(column(&SeedResult::chance_b));
  const double trimmed = mean(column(&SeedResult::trimmed_b)), mixture = mean(column(&SeedResult::mixture_b));
  o.require(trimmed <= chance + 10.0, "trimmed B " + fmt(trimmed) + " more than 10 above chance");
  o.require(mixture >= chance + 25.0, "mixture B " + fmt(mixture) + " less than 25 above chance");
  o.detail << (o.pass ? "" : "; ") << "B accuracy trimmed " << fmt(trimmed) << ", mixture " << fmt(mixture)
           << ", chance " << fmt(chance);
}

// ---------------------------------------------------------------------------
// 9. throughput

void criterion_9(Outcome& o) {
  auto full = TrimModel<float>::build(experiment_model(9));
  auto half = full.clone();
  rule_based_mask(half, RuleStrategy::top, 0.5, 9);
  const std::size_t seq = full.config().max_seq_len;
  const BenchResult bf = measure_throughput(full, seq, 1, 5);
  const BenchResult bh = measure_throughput(half, seq, 1, 5);
  const double speedup = bh.tokens_per_second / bf.tokens_per_second;
  o.require(speedup >= 1.5, "speedup " + fmt(speedup));
  o.require(bh.memory_ratio <= 0.55, "memory ratio " + fmt(bh.memory_ratio, 4));
  o.detail << (o.pass ? "" : "; ") << "speedup " << fmt(speedup) << "x (" << fmt(bf.tokens_per_second, 0) << " -> "
           << fmt(bh.tokens_per_second, 0) << " tokens/s), memory ratio " << fmt(bh.memory_ratio, 4);
}

// ---------------------------------------------------------------------------
// 10. sparse update

std::vector<Sample> reversal_data(std::size_t n, std::uint64_t seed) {
  DomainSpec a;
  a.kind = TaskKind::sequence_reversal;
  a.length = 4;
  a.n_symbols = 16;
  a.seed = seed;
  return gen_domain_dataset(a, n, 1, 1, 64).train;
}

ModelConfig sparse_model() {
  ModelConfig mc;
  mc.vocab_size = 64;
  mc.d_model = 64;
  mc.n_heads = 4;
  mc.d_ffn = 128;
  mc.n_blocks = 8;
  mc.max_seq_len = 16;
  mc.seed = 10;
  return mc;
}

void criterion_10(Outcome& o) {
  const auto data = reversal_data(300, 3);
  const std::span<const Sample> train(data.data(), 200), valid(data.data() + 200, 100);
  auto m = TrimModel<float>::build(sparse_model());
  const std::size_t n = m.n_units();

  TrimConfig tc;
  tc.r = 0.25;
  tc.max_epochs = 4;
  tc.batch_size = 16;
  tc.calibration_size = 64;
  tc.stop.floor_fraction = 0.01;
  tc.seed = 10;

  std::map<std::string, std::vector<float>> before;
  for (auto& [name, t] : m.named_tensors()) before[name] = {t.data().begin(), t.data().end()};
  const TrimReport rep = run_trim(m, train, valid, tc);
  const std::set<UnitId> initial(rep.initial_trainable.begin(), rep.initial_trainable.end());
  o.require(initial.size() == n / 4, "initial trainable " + std::to_string(initial.size()));

  std::size_t compared = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const UnitId id = UnitId::from_index(i);
    if (initial.count(id) || !m.mask().alive(id)) continue;
    for (auto& [name, t] : m.unit_tensors(id)) {
      ++compared;
      if (!std::equal(t.data().begin(), t.data().end(), before.at(name).begin())) {
        o.require(false, "frozen tensor " + name + " changed");
      }
    }
  }
  for (std::size_t i = 1; i < rep.epochs.size(); ++i) {
    o.require(rep.epochs[i].trainable_units <= rep.epochs[i - 1].trainable_units, "trainable set grew");
  }
  for (UnitId id : m.trainable_units()) o.require(initial.count(id) > 0, "new trainable unit " + to_string(id));

  // sparse/full epoch-time ratio, minimum over five repeats
  auto epoch_seconds = [&](double r) {
    auto mm = TrimModel<float>::build(sparse_model());
    std::set<UnitId> trainable;
    for (std::size_t i = 0; i < sparse_unit_count(r, n); ++i) trainable.insert(UnitId::from_index(i));
    mm.set_trainable(trainable);
    Optimizer<float> opt(tc.optimizer);
    double best = 1e30;
    for (int rep_i = 0; rep_i < 5; ++rep_i) {
      const auto t0 = std::chrono::steady_clock::now();
      train_epoch(mm, opt, train, 16, rep_i);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double full = epoch_seconds(1.0), sparse = epoch_seconds(0.25);
  const double ratio = fit_sparse_factor(sparse, full);
  CostParams cp;
  cp.c = estimate_unit_cost(full, n);
  cp.n_layers = n;
  cp.n_drop = n / 2;
  cp.sparse_factor = ratio;
  const double predicted = t_sparse(t_drop1(cp), cp);
  o.require(ratio < 1.0, "sparse/full epoch-time ratio " + fmt(ratio, 3));
  o.detail << (o.pass ? "" : "; ") << initial.size() << " of " << n << " trainable, " << compared
           << " frozen tensors unchanged, sparse/full epoch ratio " << fmt(ratio, 3)
           << ", predicted sparse progressive time " << fmt(predicted, 3) << "s for n_d=" << cp.n_drop;
}

// ---------------------------------------------------------------------------
// 11. determinism and persistence

void criterion_11(Outcome& o) {
  const auto data = reversal_data(200, 4);
  const std::span<const Sample> train(data.data(), 140), valid(data.data() + 140, 60);
  ModelConfig mc = sparse_model();
  mc.n_blocks = 3;
  TrimConfig tc;
  tc.r = 0.5;
  tc.max_epochs = 4;
  tc.batch_size = 16;
  tc.calibration_size = 32;
  tc.stop.floor_fraction = 0.01;
  tc.seed = 21;

  auto run = [&] {
    auto m = TrimModel<float>::build(mc);
    TrimReport rep = run_trim(m, train, valid, tc);
    return std::pair{std::move(m), std::move(rep)};
  };
  auto [m1, r1] = run();
  auto [m2, r2] = run();
  o.require(r1.dropped_units() == r2.dropped_units(), "drop sequences differ");
  bool same_metrics = r1.epochs.size() == r2.epochs.size();
  for (std::size_t i = 0; same_metrics && i < r1.epochs.size(); ++i) {
    same_metrics = r1.epochs[i].train_loss == r2.epochs[i].train_loss &&
                   r1.epochs[i].valid_accuracy == r2.epochs[i].valid_accuracy &&
                   r1.epochs[i].memory_ratio == r2.epochs[i].memory_ratio;
  }
  o.require(same_metrics, "epoch metrics differ");
  o.require(serialize_checkpoint(m1) == serialize_checkpoint(m2), "final weights differ");

  const auto restored = deserialize_checkpoint<float>(serialize_checkpoint(m1));
  const auto batch = TokenBatch::pack({data[0].sequence(), data[1].sequence()});
  const auto a = m1.forward(batch), b = restored.forward(batch);
  o.require(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()),
            "round-trip forward differs");
  o.detail << (o.pass ? "" : "; ") << "drops";
  for (UnitId id : r1.dropped_units()) o.detail << " " << to_string(id);
  o.detail << " reproduced; round-trip logits identical";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<void(Outcome&)>> criteria = {
      criterion_1, criterion_2, criterion_3, criterion_4,  criterion_5, criterion_6,
      criterion_7, criterion_8, criterion_9, criterion_10, criterion_11};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail.str() << " ["
              << fmt(secs, 1) << "s]" << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
