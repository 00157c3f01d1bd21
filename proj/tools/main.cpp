// trimllm: train, trim, evaluate and benchmark droppable-unit transformers.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trimllm/commands.hpp"
#include "trimllm/errors.hpp"

using namespace trimllm;

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  // model
  std::optional<std::size_t> vocab, d_model, heads, d_ffn, blocks, max_seq;
  // task
  std::vector<std::size_t> domains;
  std::optional<std::size_t> n_train, n_valid, n_test;
  std::optional<std::string> jsonl;
  // optimisation
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr, weight_decay;
  std::optional<std::string> optimizer;
  // trim
  std::optional<std::string> method, stop, baseline;
  std::optional<double> r, score_delta, fraction, sparse;
  std::optional<std::size_t> drops, calib, threads;
  // bench
  std::optional<std::size_t> seq_len, bench_batch, reps;
  std::vector<double> ratios;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run config (flags override it)");
  app->add_option("--seed", o.seed, "Run seed; re-derives every component seed");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--checkpoint", o.checkpoint, "Input checkpoint");
  app->add_option("--vocab", o.vocab, "Vocabulary size");
  app->add_option("--d-model", o.d_model, "Model width");
  app->add_option("--heads", o.heads, "Attention heads");
  app->add_option("--d-ffn", o.d_ffn, "MLP hidden width");
  app->add_option("--blocks", o.blocks, "Transformer blocks (2 droppable units each)");
  app->add_option("--max-seq", o.max_seq, "Maximum sequence length");
  app->add_option("--domains", o.domains, "Domain ids used for training");
  app->add_option("--n-train", o.n_train, "Training samples per domain");
  app->add_option("--n-valid", o.n_valid, "Validation samples per domain");
  app->add_option("--n-test", o.n_test, "Test samples per domain");
  app->add_option("--jsonl", o.jsonl, "Multiple-choice JSONL file instead of synthetic domains");
}

void add_training(CLI::App* app, Overrides& o) {
  app->add_option("--epochs", o.epochs, "Epochs (trim: maximum epochs)");
  app->add_option("--batch-size", o.batch_size, "Minibatch size");
  app->add_option("--lr", o.lr, "Learning rate");
  app->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay");
  app->add_option("--optimizer", o.optimizer, "sgd or adamw");
}

void add_trim(CLI::App* app, Overrides& o) {
  app->add_option("--method", o.method, "calibration, activation_norm or both");
  app->add_option("--r", o.r, "Sparse-update ratio in (0, 1]");
  app->add_option("--delta", o.drops, "Units dropped per epoch");
  app->add_option("--score-delta", o.score_delta, "Small positive constant of the scan score");
  app->add_option("--stop", o.stop, "acc=F | mem=R | latency=S | mem=R,latency=S");
  app->add_option("--calib", o.calib, "Calibration sample count");
  app->add_option("--threads", o.threads, "Threads for candidate-drop scoring");
}

RunConfig resolve(const Overrides& o, bool trim_epochs) {
  RunConfig c;
  if (o.config) {
    c = load_run_config(*o.config);
  } else {
    c.task.domains = default_domains();
    c.resolve_seeds();
  }
  if (o.seed) {
    c.seed = *o.seed;
    c.resolve_seeds();
  }
  if (o.out) c.output_dir = *o.out;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.vocab) c.model.vocab_size = *o.vocab;
  if (o.d_model) c.model.d_model = *o.d_model;
  if (o.heads) c.model.n_heads = *o.heads;
  if (o.d_ffn) c.model.d_ffn = *o.d_ffn;
  if (o.blocks) c.model.n_blocks = *o.blocks;
  if (o.max_seq) c.model.max_seq_len = *o.max_seq;
  if (!o.domains.empty()) c.task.train_domains = o.domains;
  if (o.n_train) c.task.n_train = *o.n_train;
  if (o.n_valid) c.task.n_valid = *o.n_valid;
  if (o.n_test) c.task.n_test = *o.n_test;
  if (o.jsonl) c.task.jsonl = *o.jsonl;
  if (o.epochs) (trim_epochs ? c.trim.max_epochs : c.train_epochs) = *o.epochs;
  if (o.batch_size) c.trim.batch_size = *o.batch_size;
  if (o.lr) c.trim.optimizer.lr = *o.lr;
  if (o.weight_decay) c.trim.optimizer.weight_decay = *o.weight_decay;
  if (o.optimizer) c.trim.optimizer.kind = parse_optimizer_kind(*o.optimizer);
  if (o.method) c.trim.method = parse_selection_method(*o.method);
  if (o.r) c.trim.r = *o.r;
  if (o.drops) c.trim.drops_per_epoch = *o.drops;
  if (o.score_delta) c.trim.delta = *o.score_delta;
  if (o.stop) c.trim.stop = StoppingCriterion::parse(*o.stop);
  if (o.calib) c.trim.calibration_size = *o.calib;
  if (o.threads) c.trim.score_threads = *o.threads;
  if (o.baseline) c.baseline.strategy = parse_rule_strategy(*o.baseline);
  if (o.fraction) c.baseline.fraction = *o.fraction;
  if (o.sparse) c.sparse_r = *o.sparse;
  if (o.seq_len) c.bench.seq_len = *o.seq_len;
  if (o.bench_batch) c.bench.batch_size = *o.bench_batch;
  if (o.reps) c.bench.reps = *o.reps;
  if (!o.ratios.empty()) c.sweep_ratios = o.ratios;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive layer dropping for decoder-only transformers"};
  app.require_subcommand(1);
  Overrides o;

  CLI::App* train = app.add_subcommand("train", "Fine-tune without dropping");
  add_common(train, o);
  add_training(train, o);
  train->add_option("--sparse", o.sparse, "Train only the floor(r*N) most important units");

  CLI::App* trim = app.add_subcommand("trim", "Fine-tune while progressively dropping units");
  add_common(trim, o);
  add_training(trim, o);
  add_trim(trim, o);
  trim->add_option("--baseline", o.baseline, "One-shot rule instead: random, top or bottom");
  trim->add_option("--fraction", o.fraction, "Fraction of units the baseline drops");

  CLI::App* eval = app.add_subcommand("eval", "Test accuracy of a checkpoint on every domain");
  add_common(eval, o);

  CLI::App* bench = app.add_subcommand("bench", "Greedy-generation throughput");
  add_common(bench, o);
  bench->add_option("--seq-len", o.seq_len, "Generated sequence length (default: model max)");
  bench->add_option("--batch", o.bench_batch, "Sequences per repetition");
  bench->add_option("--reps", o.reps, "Timed repetitions");

  CLI::App* sweep = app.add_subcommand("sweep", "Trim to several memory targets and export a Pareto CSV");
  add_common(sweep, o);
  add_training(sweep, o);
  add_trim(sweep, o);
  sweep->add_option("--ratios", o.ratios, "Memory targets (1.0 = untrimmed)");
  sweep->add_option("--reps", o.reps, "Timed repetitions per point");

  CostCommand cost;
  std::optional<double> cost_c;
  std::optional<std::size_t> cost_layers;
  std::optional<std::string> cost_report;
  std::string cost_out = "out";
  CLI::App* costmodel = app.add_subcommand("costmodel", "Predicted (and measured) fine-tuning time");
  costmodel->add_option("--c", cost_c, "Per-layer per-epoch time unit");
  costmodel->add_option("--layers", cost_layers, "Total droppable layers N");
  costmodel->add_option("--drop", cost.params.n_drop, "Layers to drop n_d");
  costmodel->add_option("--epochs", cost.params.n_epochs, "Full fine-tuning epochs");
  costmodel->add_option("--sparse-factor", cost.params.sparse_factor, "Sparse/full epoch-time ratio");
  costmodel->add_option("--report", cost_report, "Trim report supplying measured epoch times");
  costmodel->add_option("--out", cost_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (train->parsed()) {
      cmd_train(resolve(o, false), std::cout);
    } else if (trim->parsed()) {
      cmd_trim(resolve(o, true), std::cout);
    } else if (eval->parsed()) {
      cmd_eval(resolve(o, false), std::cout);
    } else if (bench->parsed()) {
      cmd_bench(resolve(o, false), std::cout);
    } else if (sweep->parsed()) {
      cmd_sweep(resolve(o, true), std::cout);
    } else if (costmodel->parsed()) {
      if (cost_c) cost.params.c = *cost_c;
      if (cost_layers) cost.params.n_layers = *cost_layers;
      cost.c_given = cost_c.has_value();
      cost.layers_given = cost_layers.has_value();
      if (cost_report) cost.report = *cost_report;
      cost.output_dir = cost_out;
      cmd_costmodel(cost, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code_for(e));
  }
  return 0;
}
