#include "trimllm/trimmer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "trimllm/bench.hpp"
#include "trimllm/errors.hpp"
#include "trimllm/rng.hpp"

namespace trimllm {

namespace {

double parse_number(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty())
    throw ConfigError("stop criterion: bad value '" + text + "' for " + key);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

nlohmann::json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

void StoppingCriterion::validate() const {
  if (kind == StopKind::accuracy) {
    if (!(floor_fraction > 0 && floor_fraction <= 1))
      throw ConfigError("stop criterion: floor fraction must be in (0, 1]");
    if (target_memory || target_latency)
      throw ConfigError("stop criterion: accuracy floor cannot be combined with efficiency targets");
    return;
  }
  if (!target_memory && !target_latency)
    throw ConfigError("stop criterion: efficiency stop needs a memory or latency target");
  if (target_memory && !(*target_memory > 0 && *target_memory <= 1))
    throw ConfigError("stop criterion: memory target must be in (0, 1]");
  if (target_latency && !(*target_latency > 0))
    throw ConfigError("stop criterion: latency target must be positive");
}

StoppingCriterion StoppingCriterion::parse(const std::string& text) {
  StoppingCriterion c;
  c.kind = StopKind::efficiency;
  bool saw_acc = false;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("stop criterion: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const double v = parse_number(key, item.substr(eq + 1));
    if (key == "acc") {
      saw_acc = true;
      c.floor_fraction = v;
    } else if (key == "mem") {
      c.target_memory = v;
    } else if (key == "latency") {
      c.target_latency = v;
    } else {
      throw ConfigError("stop criterion: unknown key '" + key + "' (acc, mem, latency)");
    }
  }
  if (saw_acc) c.kind = StopKind::accuracy;
  c.validate();
  return c;
}

std::string StoppingCriterion::to_string() const {
  std::ostringstream s;
  s << std::setprecision(10);
  if (kind == StopKind::accuracy) {
    s << "acc=" << floor_fraction;
    return s.str();
  }
  if (target_memory) s << "mem=" << *target_memory;
  if (target_memory && target_latency) s << ',';
  if (target_latency) s << "latency=" << *target_latency;
  return s.str();
}

void TrimConfig::validate() const {
  if (!(r > 0 && r <= 1)) throw ConfigError("trim: r must be in (0, 1]");
  if (drops_per_epoch == 0) throw ConfigError("trim: drops per epoch must be at least 1");
  if (!(delta > 0)) throw ConfigError("trim: delta must be positive");
  if (max_epochs == 0) throw ConfigError("trim: max_epochs must be positive");
  if (batch_size == 0) throw ConfigError("trim: batch_size must be positive");
  if (calibration_size == 0) throw ConfigError("trim: calibration_size must be positive");
  if (latency_reps == 0) throw ConfigError("trim: latency_reps must be positive");
  if (!(optimizer.lr > 0)) throw ConfigError("trim: lr must be positive");
  stop.validate();
}

ScoringConfig TrimConfig::scoring() const {
  ScoringConfig s;
  s.delta = delta;
  s.calibration_size = calibration_size;
  s.batch_size = 64;
  s.threads = score_threads;
  return s;
}

std::size_t sparse_unit_count(double r, std::size_t n_units) {
  // Guard against r*N landing a hair under an integer.
  return static_cast<std::size_t>(std::floor(r * double(n_units) + 1e-9));
}

std::string to_string(TrimStatus status) {
  switch (status) {
    case TrimStatus::accuracy_floor: return "accuracy_floor";
    case TrimStatus::target_met: return "target_met";
    case TrimStatus::max_epochs: return "max_epochs";
    case TrimStatus::no_units_left: return "no_units_left";
  }
  return "unknown";
}

RuleStrategy parse_rule_strategy(const std::string& name) {
  if (name == "random") return RuleStrategy::random;
  if (name == "top") return RuleStrategy::top;
  if (name == "bottom") return RuleStrategy::bottom;
  throw ConfigError("unknown baseline '" + name + "' (random, top, bottom)");
}

std::string to_string(RuleStrategy strategy) {
  switch (strategy) {
    case RuleStrategy::random: return "random";
    case RuleStrategy::top: return "top";
    case RuleStrategy::bottom: return "bottom";
  }
  return "unknown";
}

std::vector<UnitId> TrimReport::dropped_units() const {
  std::vector<UnitId> out;
  for (const DropRecord& d : drops) out.push_back(d.unit);
  return out;
}

double TrimReport::total_seconds() const {
  double t = 0;
  for (const EpochRecord& e : epochs) t += e.seconds;
  return t;
}

template <class Real>
FreezePlan initial_freeze_plan(TrimModel<Real>& model, std::span<const Sample> calibration,
                               const TrimConfig& config) {
  FreezePlan plan;
  const std::vector<UnitId> live = model.mask().live_units();
  const std::size_t keep = std::min(sparse_unit_count(config.r, model.n_units()), live.size());
  if (keep >= live.size()) {
    plan.trainable.insert(live.begin(), live.end());
  } else {
    plan.origin = scan_scores(model, calibration, config.scoring());
    std::vector<ImportanceScore> order = plan.origin;
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.s_scan != b.s_scan) return a.s_scan > b.s_scan;
      return a.unit < b.unit;
    });
    for (std::size_t i = 0; i < keep; ++i) plan.trainable.insert(order[i].unit);
  }
  model.set_trainable(plan.trainable);
  return plan;
}

template <class Real>
double train_epoch(TrimModel<Real>& model, Optimizer<Real>& optimizer,
                   std::span<const Sample> train, std::size_t batch_size, std::uint64_t seed) {
  if (train.empty()) throw InputError("train_epoch: empty training split");
  if (batch_size == 0) throw ConfigError("train_epoch: batch_size must be positive");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0;
  std::size_t batches = 0;
  std::vector<Sample> chunk;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
      chunk.push_back(train[order[i]]);
    const LmBatch b = make_lm_batch(chunk);
    Tape<Real> tape;
    TapeScope<Real> scope(tape);
    Tensor<Real> logits = model.logits_at(b.inputs, b.target_rows);
    Tensor<Real> loss = softmax_cross_entropy(logits, std::span<const std::size_t>(b.targets));
    tape.backward(loss);
    std::vector<Parameter<Real>> params = model.parameters();
    optimizer.step(params);
    loss_sum += double(loss.item());
    ++batches;
  }
  return loss_sum / double(batches);
}

namespace {

template <class Real>
bool efficiency_met(const TrimModel<Real>& model, const TrimConfig& config) {
  const StoppingCriterion& s = config.stop;
  if (s.target_memory && model.memory_ratio() > *s.target_memory) return false;
  if (s.target_latency) {
    const BenchResult b =
        measure_throughput(model, model.config().max_seq_len, 1, config.latency_reps);
    if (b.latency_per_token > *s.target_latency) return false;
  }
  return true;
}

template <class Real>
double final_latency(const TrimModel<Real>& model, std::size_t reps) {
  if (model.config().max_seq_len < 2) return 0;
  return measure_throughput(model, model.config().max_seq_len, 1, reps).latency_per_token;
}

}  // namespace

template <class Real>
TrimReport run_trim(TrimModel<Real>& model, std::span<const Sample> train,
                    std::span<const Sample> valid, const TrimConfig& config) {
  config.validate();
  if (train.empty() || valid.empty()) throw InputError("run_trim: train and valid splits must be non-empty");
  using Clock = std::chrono::steady_clock;

  TrimReport report;
  report.config = config;
  report.model_config = model.config();
  const ScoringConfig scoring = config.scoring();
  const std::size_t calib_k = std::min(config.calibration_size, valid.size());

  {
    const Split calib = sample_calibration(valid, calib_k, substream_seed(config.seed, "calibration", 0));
    FreezePlan plan = initial_freeze_plan(model, calib, config);
    report.initial_trainable.assign(plan.trainable.begin(), plan.trainable.end());
    report.freeze_scores = std::move(plan.origin);
  }

  Optimizer<Real> optimizer(config.optimizer);
  bool stopped = false;
  for (std::size_t epoch = 1; epoch <= config.max_epochs && !stopped; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto t0 = Clock::now();
    rec.train_loss = train_epoch(model, optimizer, train, config.batch_size,
                                 substream_seed(config.seed, "train", epoch));
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    rec.valid_accuracy = evaluate_accuracy(model, valid).percent;
    if (epoch == 1) report.reference_accuracy = rec.valid_accuracy;

    auto finish_epoch = [&] {
      rec.live_units = model.mask().remaining();
      rec.trainable_units = model.trainable_units().size();
      rec.memory_ratio = model.memory_ratio();
      report.epochs.push_back(rec);
    };

    if (model.mask().remaining() == 0) {
      report.status = TrimStatus::no_units_left;
      finish_epoch();
      break;
    }
    if (config.stop.kind == StopKind::efficiency && efficiency_met(model, config)) {
      report.status = TrimStatus::target_met;
      finish_epoch();
      break;
    }

    const Split calib =
        sample_calibration(valid, calib_k, substream_seed(config.seed, "calibration", epoch));
    std::vector<ImportanceScore> scan, norm;
    if (config.method != SelectionMethod::activation_norm) scan = scan_scores(model, calib, scoring);
    if (config.method != SelectionMethod::calibration) norm = norm_scores(model, calib, scoring.batch_size);
    const std::vector<ImportanceScore> merged = merge_scores(scan, norm);
    for (const ImportanceScore& s : merged) report.scores.push_back({epoch, s});

    const std::vector<UnitId> targets =
        select_targets(scan, norm, std::min(config.drops_per_epoch, model.mask().remaining()),
                       config.method);

    if (config.stop.kind == StopKind::accuracy) {
      UnitMask tentative = model.mask();
      for (UnitId id : targets) tentative.kill(id);
      const double a = evaluate_accuracy(model, valid, &tentative).percent;
      if (a < config.stop.floor_fraction * report.reference_accuracy) {
        report.reverted = targets;
        report.reverted_accuracy = a;
        report.status = TrimStatus::accuracy_floor;
        finish_epoch();
        break;
      }
    }

    for (UnitId id : targets) {
      DropRecord d;
      d.epoch = epoch;
      d.unit = id;
      d.was_trainable = model.is_trainable(id);
      for (const ImportanceScore& s : merged) {
        if (s.unit == id) {
          d.accuracy = s.accuracy;
          d.s_scan = s.s_scan;
          d.s_norm = s.s_norm;
        }
      }
      model.drop_unit(id);
      report.drops.push_back(d);
    }
    rec.drops = targets.size();
    optimizer.prune(model.parameters());

    if (config.stop.kind == StopKind::efficiency && efficiency_met(model, config)) {
      report.status = TrimStatus::target_met;
      stopped = true;
    } else if (model.mask().remaining() == 0) {
      report.status = TrimStatus::no_units_left;
      stopped = true;
    }
    finish_epoch();
  }

  report.final_accuracy = evaluate_accuracy(model, valid).percent;
  report.final_memory_ratio = model.memory_ratio();
  report.final_latency = final_latency(model, config.latency_reps);
  return report;
}

template <class Real>
std::vector<EpochRecord> fine_tune(TrimModel<Real>& model, std::span<const Sample> train,
                                   std::span<const Sample> valid, std::size_t epochs,
                                   const OptimizerConfig& optimizer_config,
                                   std::size_t batch_size, std::uint64_t seed) {
  Optimizer<Real> optimizer(optimizer_config);
  std::vector<EpochRecord> out;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto t0 = std::chrono::steady_clock::now();
    rec.train_loss = train_epoch(model, optimizer, train, batch_size, substream_seed(seed, "train", epoch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.valid_accuracy = valid.empty() ? 0.0 : evaluate_accuracy(model, valid).percent;
    rec.live_units = model.mask().remaining();
    rec.trainable_units = model.trainable_units().size();
    rec.memory_ratio = model.memory_ratio();
    out.push_back(rec);
  }
  return out;
}

template <class Real>
std::vector<UnitId> rule_based_mask(TrimModel<Real>& model, RuleStrategy strategy,
                                    double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("rule_based_mask: fraction must be in (0, 1)");
  const std::size_t k = sparse_unit_count(fraction, model.n_units());
  std::vector<UnitId> live = model.mask().live_units();
  if (k > live.size())
    throw SizeError("rule_based_mask: cannot drop " + std::to_string(k) + " of " +
                    std::to_string(live.size()) + " live units");
  std::vector<UnitId> chosen;
  switch (strategy) {
    case RuleStrategy::bottom:
      chosen.assign(live.begin(), live.begin() + std::ptrdiff_t(k));
      break;
    case RuleStrategy::top:
      chosen.assign(live.end() - std::ptrdiff_t(k), live.end());
      break;
    case RuleStrategy::random: {
      Rng rng(substream_seed(seed, "baseline"));
      std::shuffle(live.begin(), live.end(), rng);
      chosen.assign(live.begin(), live.begin() + std::ptrdiff_t(k));
      std::sort(chosen.begin(), chosen.end());
      break;
    }
  }
  for (UnitId id : chosen) model.drop_unit(id);
  return chosen;
}

template <class Real>
std::vector<UnitId> one_shot_drop(TrimModel<Real>& model, std::size_t k, SelectionMethod method,
                                  std::span<const Sample> calibration,
                                  const ScoringConfig& scoring) {
  if (k == 0) return {};
  std::vector<ImportanceScore> scan, norm;
  if (method != SelectionMethod::activation_norm) scan = scan_scores(model, calibration, scoring);
  if (method != SelectionMethod::calibration) norm = norm_scores(model, calibration, scoring.batch_size);
  const std::vector<UnitId> targets = select_targets(scan, norm, k, method);
  for (UnitId id : targets) model.drop_unit(id);
  return targets;
}

std::string report_json(const TrimReport& r) {
  using nlohmann::json;
  auto unit_json = [](UnitId id) {
    return json{{"block", id.block}, {"kind", to_string(id.kind)}};
  };
  auto score_json = [&](const ImportanceScore& s) {
    json j = unit_json(s.unit);
    j["a_i"] = json_number(s.accuracy);
    j["s_scan"] = json_number(s.s_scan);
    j["activation_norm"] = json_number(s.activation_norm);
    j["s_norm"] = json_number(s.s_norm);
    j["degenerate_norm"] = s.degenerate_norm;
    return j;
  };
  const TrimConfig& c = r.config;
  json j;
  j["config"] = {
      {"method", to_string(c.method)},
      {"r", c.r},
      {"drops_per_epoch", c.drops_per_epoch},
      {"delta", c.delta},
      {"stop", c.stop.to_string()},
      {"max_epochs", c.max_epochs},
      {"optimizer", to_string(c.optimizer.kind)},
      {"lr", c.optimizer.lr},
      {"weight_decay", c.optimizer.weight_decay},
      {"batch_size", c.batch_size},
      {"calibration_size", c.calibration_size},
      {"seed", c.seed},
  };
  const ModelConfig& m = r.model_config;
  j["model"] = {{"vocab_size", m.vocab_size}, {"d_model", m.d_model}, {"n_heads", m.n_heads},
                {"d_ffn", m.d_ffn},           {"n_blocks", m.n_blocks}, {"max_seq_len", m.max_seq_len},
                {"seed", m.seed}};
  j["initial_trainable"] = json::array();
  for (UnitId id : r.initial_trainable) j["initial_trainable"].push_back(unit_json(id));
  j["freeze_scores"] = json::array();
  for (const auto& s : r.freeze_scores) j["freeze_scores"].push_back(score_json(s));
  j["epochs"] = json::array();
  for (const EpochRecord& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"valid_accuracy", e.valid_accuracy},
                           {"seconds", e.seconds},
                           {"live_units", e.live_units},
                           {"trainable_units", e.trainable_units},
                           {"memory_ratio", e.memory_ratio},
                           {"drops", e.drops}});
  }
  j["drops"] = json::array();
  for (const DropRecord& d : r.drops) {
    json dj = unit_json(d.unit);
    dj["epoch"] = d.epoch;
    dj["a_i"] = json_number(d.accuracy);
    dj["s_scan"] = json_number(d.s_scan);
    dj["s_norm"] = json_number(d.s_norm);
    dj["was_trainable"] = d.was_trainable;
    j["drops"].push_back(dj);
  }
  // Dropped units grouped by kind.
  j["dropped_mha"] = json::array();
  j["dropped_mlp"] = json::array();
  for (const DropRecord& d : r.drops)
    j[d.unit.kind == UnitKind::mha ? "dropped_mha" : "dropped_mlp"].push_back(d.unit.block);
  j["reverted"] = json::array();
  for (UnitId id : r.reverted) j["reverted"].push_back(unit_json(id));
  j["reverted_accuracy"] = r.reverted_accuracy ? json(*r.reverted_accuracy) : json(nullptr);
  j["reference_accuracy"] = r.reference_accuracy;
  j["final_accuracy"] = r.final_accuracy;
  j["final_memory_ratio"] = r.final_memory_ratio;
  j["final_latency"] = r.final_latency;
  j["status"] = to_string(r.status);
  return j.dump(2);
}

void write_report_json(const TrimReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << report_json(report) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

void write_score_csv(const TrimReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "epoch,block_index,kind,a_i,s_scan,activation_norm,s_norm\n";
  for (const ScoreRecord& r : report.scores) {
    const ImportanceScore& s = r.score;
    out << r.epoch << ',' << s.unit.block << ',' << to_string(s.unit.kind) << ','
        << csv_number(s.accuracy) << ',' << csv_number(s.s_scan) << ','
        << csv_number(s.activation_norm) << ',' << csv_number(s.s_norm) << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

void write_drop_pattern_csv(const TrimReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "block_index,kind,dropped,drop_epoch\n";
  for (std::size_t i = 0; i < report.model_config.n_units(); ++i) {
    const UnitId id = UnitId::from_index(i);
    auto it = std::find_if(report.drops.begin(), report.drops.end(),
                           [&](const DropRecord& d) { return d.unit == id; });
    out << id.block << ',' << to_string(id.kind) << ',' << (it != report.drops.end() ? 1 : 0) << ','
        << (it != report.drops.end() ? std::to_string(it->epoch) : std::string()) << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

void write_epoch_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "epoch,train_loss,valid_accuracy,live_units,trainable_units,memory_ratio,drops\n";
  for (const EpochRecord& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.valid_accuracy << ',' << e.live_units << ',' << e.trainable_units << ',' << e.memory_ratio << ',' << e.drops
        << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

void write_timing_csv(std::span<const EpochRecord> epochs, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "epoch,seconds\n";
  for (const EpochRecord& e : epochs) out << e.epoch << ',' << e.seconds << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

#define TRIMLLM_INSTANTIATE_TRIMMER(Real)                                                        \
  template FreezePlan initial_freeze_plan<Real>(TrimModel<Real>&, std::span<const Sample>,       \
                                                const TrimConfig&);                              \
  template double train_epoch<Real>(TrimModel<Real>&, Optimizer<Real>&, std::span<const Sample>, \
                                    std::size_t, std::uint64_t);                                 \
  template TrimReport run_trim<Real>(TrimModel<Real>&, std::span<const Sample>,                  \
                                     std::span<const Sample>, const TrimConfig&);                \
  template std::vector<EpochRecord> fine_tune<Real>(TrimModel<Real>&, std::span<const Sample>,   \
                                                    std::span<const Sample>, std::size_t,        \
                                                    const OptimizerConfig&, std::size_t,         \
                                                    std::uint64_t);                              \
  template std::vector<UnitId> rule_based_mask<Real>(TrimModel<Real>&, RuleStrategy, double,     \
                                                     std::uint64_t);                             \
  template std::vector<UnitId> one_shot_drop<Real>(TrimModel<Real>&, std::size_t,                \
                                                   SelectionMethod, std::span<const Sample>,     \
                                                   const ScoringConfig&);

TRIMLLM_INSTANTIATE_TRIMMER(float)
TRIMLLM_INSTANTIATE_TRIMMER(double)

}  // namespace trimllm
