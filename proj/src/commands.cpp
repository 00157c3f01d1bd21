#include "trimllm/commands.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "trimllm/bench.hpp"
#include "trimllm/checkpoint.hpp"
#include "trimllm/errors.hpp"
#include "trimllm/rng.hpp"
#include "trimllm/trimmer.hpp"

namespace trimllm {

using nlohmann::json;
using Model = TrimModel<float>;

namespace {

std::filesystem::path prepare_output(const RunConfig& config) {
  std::filesystem::create_directories(config.output_dir);
  save_run_config(config, config.output_dir / "config.json");
  return config.output_dir;
}

Model initial_model(const RunConfig& config) {
  if (config.checkpoint) return load_checkpoint<float>(*config.checkpoint);
  return Model::build(config.model);
}

Model required_checkpoint(const RunConfig& config, const char* command) {
  if (!config.checkpoint) throw ConfigError(std::string(command) + ": --checkpoint is required");
  return load_checkpoint<float>(*config.checkpoint);
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

json units_json(const std::vector<UnitId>& ids) {
  json a = json::array();
  for (UnitId id : ids) a.push_back(to_string(id));
  return a;
}

double test_accuracy(const Model& model, const Dataset& data) {
  return evaluate_accuracy(model, data.test).percent;
}

}  // namespace

ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e))
    return ExitCode::usage;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const SizeError*>(&e) || dynamic_cast<const IndexError*>(&e))
    return ExitCode::data;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return ExitCode::data;
  return ExitCode::internal;
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_task(config.task, config.model, config.seed);
  Model model = initial_model(config);
  const auto out = prepare_output(config);

  std::vector<UnitId> trainable = model.mask().live_units();
  if (config.sparse_r > 0) {
    TrimConfig t = config.trim;
    t.r = config.sparse_r;
    const Split calib = sample_calibration(
        data.valid, std::min(t.calibration_size, data.valid.size()),
        substream_seed(config.seed, "calibration", 0));
    const FreezePlan plan = initial_freeze_plan(model, calib, t);
    trainable.assign(plan.trainable.begin(), plan.trainable.end());
  }
  log << "training " << config.train_epochs << " epochs, " << trainable.size() << " of "
      << model.n_units() << " units trainable\n";
  const std::vector<EpochRecord> epochs =
      fine_tune(model, data.train, data.valid, config.train_epochs, config.trim.optimizer,
                config.trim.batch_size, config.trim.seed);
  for (const EpochRecord& e : epochs)
    log << "epoch " << e.epoch << " loss " << e.train_loss << " valid " << e.valid_accuracy << "%\n";

  save_checkpoint(model, out / "model.ckpt");
  write_epoch_csv(epochs, out / "metrics.csv");
  write_timing_csv(epochs, out / "timing.csv");
  json summary = {{"trainable_units", trainable.size()},
                  {"trainable", units_json(trainable)},
                  {"epochs", config.train_epochs},
                  {"test_accuracy", test_accuracy(model, data)},
                  {"memory_ratio", model.memory_ratio()}};
  write_json(summary, out / "train.json");
}

void cmd_trim(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_task(config.task, config.model, config.seed);
  Model model = initial_model(config);
  const auto out = prepare_output(config);

  if (config.baseline.strategy) {
    const std::vector<UnitId> dropped =
        rule_based_mask(model, *config.baseline.strategy, config.baseline.fraction, config.trim.seed);
    log << "baseline " << to_string(*config.baseline.strategy) << " dropped " << dropped.size()
        << " units\n";
    const std::vector<EpochRecord> epochs =
        fine_tune(model, data.train, data.valid, config.trim.max_epochs, config.trim.optimizer,
                  config.trim.batch_size, config.trim.seed);
    save_checkpoint(model, out / "model.ckpt");
    write_epoch_csv(epochs, out / "metrics.csv");
    write_timing_csv(epochs, out / "timing.csv");
    json summary = {{"strategy", to_string(*config.baseline.strategy)},
                    {"fraction", config.baseline.fraction},
                    {"dropped", units_json(dropped)},
                    {"epochs", config.trim.max_epochs},
                    {"valid_accuracy", epochs.empty() ? 0.0 : epochs.back().valid_accuracy},
                    {"test_accuracy", test_accuracy(model, data)},
                    {"memory_ratio", model.memory_ratio()}};
    write_json(summary, out / "baseline.json");
    return;
  }

  const TrimReport report = run_trim(model, data.train, data.valid, config.trim);
  for (const DropRecord& d : report.drops)
    log << "epoch " << d.epoch << " dropped " << to_string(d.unit) << "\n";
  log << "status " << to_string(report.status) << ", memory ratio " << report.final_memory_ratio
      << ", valid accuracy " << report.final_accuracy << "%\n";
  save_checkpoint(model, out / "model.ckpt");
  write_report_json(report, out / "report.json");
  write_score_csv(report, out / "scores.csv");
  write_drop_pattern_csv(report, out / "drop_pattern.csv");
  write_epoch_csv(report.epochs, out / "metrics.csv");
  write_timing_csv(report.epochs, out / "timing.csv");
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Model model = required_checkpoint(config, "eval");
  const std::vector<Dataset> domains = load_domains(config.task, model.config(), config.seed);
  const auto out = prepare_output(config);
  json rows = json::array();
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const AccuracyResult r = evaluate_accuracy(model, domains[i].test);
    const double chance = chance_accuracy(domains[i].test, model.config().vocab_size);
    json row = {{"domain", i},
                {"provenance", domains[i].provenance},
                {"accuracy", r.percent},
                {"chance", chance},
                {"n_samples", r.n_samples},
                {"n_correct", r.n_correct}};
    if (!config.task.jsonl) row["kind"] = to_string(config.task.domains[i].kind);
    rows.push_back(row);
    log << "domain " << i << ": " << r.percent << "% (chance " << chance << "%)\n";
  }
  write_json({{"memory_ratio", model.memory_ratio()},
              {"live_units", model.mask().remaining()},
              {"domains", rows}},
             out / "eval.json");
}

void cmd_bench(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Model model = initial_model(config);
  const std::size_t seq_len = config.bench.seq_len ? config.bench.seq_len : model.config().max_seq_len;
  const BenchResult b = measure_throughput(model, seq_len, config.bench.batch_size, config.bench.reps);
  const auto out = prepare_output(config);
  std::ofstream csv(out / "bench.csv");
  if (!csv) throw InputError("cannot write " + (out / "bench.csv").string());
  csv << std::setprecision(10);
  csv << "seq_len,batch_size,reps,tokens_per_s,tokens_per_s_min,tokens_per_s_max,"
         "latency_per_token,memory_ratio,live_units\n";
  csv << b.seq_len << ',' << b.batch_size << ',' << b.reps << ',' << b.tokens_per_second << ','
      << b.tokens_per_second_min << ',' << b.tokens_per_second_max << ',' << b.latency_per_token
      << ',' << b.memory_ratio << ',' << b.live_units << '\n';
  log << b.tokens_per_second << " tokens/s (median of " << b.reps << "), memory ratio "
      << b.memory_ratio << "\n";
}

void cmd_costmodel(const CostCommand& command, std::ostream& log) {
  CostParams p = command.params;
  std::vector<double> measured;
  if (command.report) {
    std::ifstream in(*command.report);
    if (!in) throw InputError("cannot open report " + command.report->string());
    json r;
    try {
      r = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError("report " + command.report->string() + ": " + e.what());
    }
    if (!r.contains("epochs") || !r["epochs"].is_array())
      throw FormatError("report " + command.report->string() + " has no epochs array");
    double total = 0;
    for (const json& e : r["epochs"]) {
      total += e.at("seconds").get<double>();
      measured.push_back(total);
    }
    const std::size_t n_units = 2 * r.at("model").at("n_blocks").get<std::size_t>();
    if (!command.layers_given) p.n_layers = n_units;
    if (!command.c_given && !measured.empty()) p.c = estimate_unit_cost(measured.front(), n_units);
    if (p.n_drop > p.n_layers) p.n_drop = p.n_layers;
  }
  p.validate();
  std::filesystem::create_directories(command.output_dir);
  const std::vector<CostRow> rows = cost_table(p, measured);
  write_cost_csv(command.output_dir / "costmodel.csv", rows);
  log << "c=" << p.c << " N=" << p.n_layers << " n_d=" << p.n_drop << ": t_full=" << t_full(p)
      << " t_drop1=" << t_drop1(p);
  if (p.n_drop % 2 == 0) log << " t_drop2=" << t_drop2(p);
  log << "\n";
}

void cmd_sweep(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_task(config.task, config.model, config.seed);
  const auto out = prepare_output(config);
  std::vector<ParetoPoint> points;
  for (double ratio : config.sweep_ratios) {
    Model model = initial_model(config);
    std::ostringstream id;
    id << "mem=" << ratio;
    const std::filesystem::path dir = out / id.str();
    std::filesystem::create_directories(dir);
    if (ratio < 1.0) {
      TrimConfig t = config.trim;
      t.stop = StoppingCriterion{};
      t.stop.kind = StopKind::efficiency;
      t.stop.target_memory = ratio;
      const TrimReport report = run_trim(model, data.train, data.valid, t);
      write_report_json(report, dir / "report.json");
      write_epoch_csv(report.epochs, dir / "metrics.csv");
    } else {
      const std::vector<EpochRecord> epochs = fine_tune(
          model, data.train, data.valid, config.train_epochs, config.trim.optimizer,
          config.trim.batch_size, config.trim.seed);
      write_epoch_csv(epochs, dir / "metrics.csv");
    }
    save_checkpoint(model, dir / "model.ckpt");
    const std::size_t seq_len = config.bench.seq_len ? config.bench.seq_len : model.config().max_seq_len;
    const BenchResult b = measure_throughput(model, seq_len, config.bench.batch_size, config.bench.reps);
    const double acc = test_accuracy(model, data);
    points.push_back(make_pareto_point(b, acc, id.str()));
    log << id.str() << ": memory " << b.memory_ratio << ", accuracy " << acc << "%, "
        << b.tokens_per_second << " tokens/s\n";
  }
  export_pareto(points, out / "pareto.csv");
}

}  // namespace trimllm
