#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "trimllm/scoring.hpp"

using namespace trimllm;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.n_blocks = 2;
  c.max_seq_len = 8;
  c.seed = 3;
  return c;
}

Split mod_samples(std::size_t n) {
  DomainSpec s;
  s.kind = TaskKind::modular_arithmetic;
  s.modulus = 7;
  s.vocab_base = 16;
  s.vocab_span = 16;
  return gen_domain_dataset(s, n, 1, 1, 64).train;
}

ImportanceScore score(std::size_t index, double s_scan, double s_norm) {
  ImportanceScore s;
  s.unit = UnitId::from_index(index);
  s.s_scan = s_scan;
  s.s_norm = s_norm;
  return s;
}

}  // namespace

TEST_CASE("scan score endpoints and direct evaluation") {
  for (double delta : {0.001, 0.01, 0.1}) {
    CHECK(scan_score(0.0, delta) == doctest::Approx(100.0 / (1.0 + delta * delta)).epsilon(1e-14));
    CHECK(scan_score(100.0, delta) == 0.0);
    for (double a : {25.0, 50.0, 75.0}) {
      const double direct = (100.0 - a) / ((1.0 + delta * delta) + (1.0 + delta) * a);
      CHECK(std::abs(scan_score(a, delta) - direct) < 1e-12);
    }
  }
  CHECK(scan_score(0.0, 0.01) == doctest::Approx(99.990001));
}

TEST_CASE("scan score is decreasing in accuracy") {
  double prev = scan_score(0.0, 0.01);
  for (int a = 1; a <= 100; ++a) {
    const double s = scan_score(a, 0.01);
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("scan score domain errors") {
  CHECK_THROWS_AS(scan_score(-1.0, 0.01), DomainError);
  CHECK_THROWS_AS(scan_score(100.5, 0.01), DomainError);
  CHECK_THROWS_AS(scan_score(50.0, 0.0), DomainError);
  CHECK_THROWS_AS(scan_score(std::nan(""), 0.01), DomainError);
}

TEST_CASE("norm scores") {
  std::vector<double> norms = {2.0, 4.0};
  auto s = norm_score_values(norms);
  CHECK(s[0] == 100.0);
  CHECK(s[1] == 50.0);

  std::vector<double> with_zero = {0.0, 5.0, 10.0};
  auto z = norm_score_values(with_zero);
  CHECK(z[0] == 100.0);
  CHECK(z[1] == 100.0);
  CHECK(z[2] == 50.0);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng() % 14);
    for (double& x : v) x = u(rng);
    const double k = u(rng);
    std::vector<double> scaled(v);
    for (double& x : scaled) x *= k;
    auto a = norm_score_values(v), b = norm_score_values(scaled);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
      CHECK(a[i] > 0.0);
      CHECK(a[i] <= 100.0);
    }
    CHECK(*std::max_element(a.begin(), a.end()) == doctest::Approx(100.0));
  }
}

TEST_CASE("select_targets ordering") {
  std::vector<ImportanceScore> scan = {score(0, 5, 0), score(1, 1, 0), score(2, 1, 0), score(3, 9, 0)};
  std::vector<ImportanceScore> norm = {score(0, 0, 10), score(1, 0, 80), score(2, 0, 20), score(3, 0, 100)};

  CHECK(select_targets(scan, {}, 2, SelectionMethod::calibration) ==
        std::vector<UnitId>{UnitId::from_index(1), UnitId::from_index(2)});
  // Exact tie on s_scan is broken by the lower s_norm.
  CHECK(select_targets(scan, norm, 1, SelectionMethod::both) == std::vector<UnitId>{UnitId::from_index(2)});
  CHECK(select_targets(scan, norm, 3, SelectionMethod::both) ==
        std::vector<UnitId>{UnitId::from_index(2), UnitId::from_index(1), UnitId::from_index(0)});
  CHECK(select_targets({}, norm, 2, SelectionMethod::activation_norm) ==
        std::vector<UnitId>{UnitId::from_index(0), UnitId::from_index(2)});
  CHECK(select_targets(scan, norm, 0, SelectionMethod::both).empty());
}

TEST_CASE("select_targets full ties fall back to unit order") {
  std::vector<ImportanceScore> scan = {score(3, 2, 0), score(1, 2, 0), score(2, 2, 0)};
  std::vector<ImportanceScore> norm = {score(1, 0, 50), score(2, 0, 50), score(3, 0, 50)};
  CHECK(select_targets(scan, norm, 2, SelectionMethod::both) ==
        std::vector<UnitId>{UnitId::from_index(1), UnitId::from_index(2)});
}

TEST_CASE("select_targets contract checks") {
  std::vector<ImportanceScore> scan = {score(0, 1, 0), score(1, 2, 0)};
  std::vector<ImportanceScore> norm = {score(0, 0, 1), score(2, 0, 2)};
  CHECK_THROWS_AS(select_targets(scan, norm, 1, SelectionMethod::both), ContractError);
  CHECK_THROWS_AS(select_targets({}, norm, 1, SelectionMethod::calibration), ContractError);
  CHECK_THROWS_AS(select_targets(scan, {}, 1, SelectionMethod::both), ContractError);
  CHECK_THROWS_AS(select_targets(scan, {}, 3, SelectionMethod::calibration), SizeError);
}

TEST_CASE("scan_scores agree with explicit masked evaluation") {
  auto model = TrimModel<double>::build(tiny_config());
  model.drop_unit({0, UnitKind::mlp});
  Split calib = mod_samples(30);
  ScoringConfig cfg;
  cfg.batch_size = 7;
  auto scores = scan_scores(model, calib, cfg);
  REQUIRE(scores.size() == 3);
  for (const auto& s : scores) {
    UnitMask probe = model.mask();
    probe.kill(s.unit);
    const double a = evaluate_accuracy(model, calib, &probe).percent;
    CHECK(s.accuracy == a);
    CHECK(s.s_scan == scan_score(a, cfg.delta));
  }
  CHECK(model.mask().remaining() == 3);

  cfg.threads = 3;
  auto threaded = scan_scores(model, calib, cfg);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    CHECK(threaded[i].unit == scores[i].unit);
    CHECK(threaded[i].accuracy == scores[i].accuracy);
  }
  CHECK_THROWS_AS(scan_scores(model, Split{}, cfg), InputError);
}

TEST_CASE("norm_scores are batch-size independent") {
  auto model = TrimModel<double>::build(tiny_config());
  Split calib = mod_samples(20);
  auto a = norm_scores(model, calib, 20);
  auto b = norm_scores(model, calib, 3);
  REQUIRE(a.size() == 4);
  double lowest = 1e300;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].activation_norm == doctest::Approx(b[i].activation_norm).epsilon(1e-12));
    CHECK(a[i].s_norm == doctest::Approx(b[i].s_norm).epsilon(1e-12));
    lowest = std::min(lowest, a[i].activation_norm);
  }
  for (const auto& s : a) CHECK(s.s_norm == doctest::Approx(100.0 * lowest / s.activation_norm));
}

TEST_CASE("merge_scores joins by unit") {
  std::vector<ImportanceScore> scan = {score(1, 3, 0)};
  std::vector<ImportanceScore> norm = {score(1, 0, 40), score(0, 0, 100)};
  for (auto& n : norm) n.s_scan = ImportanceScore::unset;
  auto m = merge_scores(scan, norm);
  REQUIRE(m.size() == 2);
  CHECK(m[0].unit == UnitId::from_index(0));
  CHECK(std::isnan(m[0].s_scan));
  CHECK(m[1].s_scan == 3);
  CHECK(m[1].s_norm == 40);
}

TEST_CASE("selection method names") {
  CHECK(parse_selection_method("both") == SelectionMethod::both);
  CHECK(to_string(SelectionMethod::activation_norm) == "activation_norm");
  CHECK_THROWS_AS(parse_selection_method("magnitude"), ConfigError);
}
