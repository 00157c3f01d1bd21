#include "trimllm/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "trimllm/errors.hpp"
#include "trimllm/rng.hpp"

namespace trimllm {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!names.contains(key)) throw ConfigError("config: unknown key '" + section + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + section + "." + key + "'");
  }
}

json domain_json(const DomainSpec& d) {
  return {{"domain_id", d.domain_id}, {"kind", to_string(d.kind)}, {"vocab_base", d.vocab_base},
          {"vocab_span", d.vocab_span}, {"n_pairs", d.n_pairs},  {"n_keys", d.n_keys},
          {"n_values", d.n_values},   {"modulus", d.modulus},   {"length", d.length},
          {"n_symbols", d.n_symbols}, {"seed", d.seed}};
}

DomainSpec parse_domain(const json& j, std::size_t index, bool& has_seed) {
  const std::string section = "task.domains[" + std::to_string(index) + "]";
  check_keys(j, section, {"domain_id", "kind", "vocab_base", "vocab_span", "n_pairs", "n_keys",
                          "n_values", "modulus", "length", "n_symbols", "seed"});
  DomainSpec d;
  d.domain_id = index;
  read(j, "domain_id", d.domain_id, section);
  std::string kind = to_string(d.kind);
  read(j, "kind", kind, section);
  d.kind = parse_task_kind(kind);
  read(j, "vocab_base", d.vocab_base, section);
  read(j, "vocab_span", d.vocab_span, section);
  read(j, "n_pairs", d.n_pairs, section);
  read(j, "n_keys", d.n_keys, section);
  read(j, "n_values", d.n_values, section);
  read(j, "modulus", d.modulus, section);
  read(j, "length", d.length, section);
  read(j, "n_symbols", d.n_symbols, section);
  has_seed = j.contains("seed") && !j.at("seed").is_null();
  read(j, "seed", d.seed, section);
  return d;
}

}  // namespace

ModelConfig default_model_config() {
  ModelConfig c;
  c.vocab_size = 128;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ffn = 256;
  c.n_blocks = 4;
  c.max_seq_len = 16;
  return c;
}

std::vector<DomainSpec> default_domains() {
  DomainSpec mod;
  mod.domain_id = 0;
  mod.kind = TaskKind::modular_arithmetic;
  mod.vocab_base = 16;
  mod.vocab_span = 32;
  mod.modulus = 32;
  DomainSpec rev;
  rev.domain_id = 1;
  rev.kind = TaskKind::sequence_reversal;
  rev.vocab_base = 48;
  rev.vocab_span = 32;
  rev.length = 3;
  rev.n_symbols = 16;
  DomainSpec kv;
  kv.domain_id = 2;
  kv.kind = TaskKind::kv_recall;
  kv.vocab_base = 80;
  kv.vocab_span = 32;
  kv.n_pairs = 2;
  return {mod, rev, kv};
}

void RunConfig::resolve_seeds() {
  model.seed = substream_seed(seed, "init");
  trim.seed = seed;
  for (DomainSpec& d : task.domains) d.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  trim.validate();
  if (!task.jsonl) {
    if (task.domains.empty()) throw ConfigError("config: task needs domains or a jsonl path");
    for (const DomainSpec& d : task.domains) d.validate(model.vocab_size);
    validate_disjoint(task.domains);
    for (std::size_t id : task.train_domains) {
      if (id >= task.domains.size())
        throw ConfigError("config: train domain " + std::to_string(id) + " out of range");
    }
    if (task.n_train == 0 || task.n_valid == 0 || task.n_test == 0)
      throw ConfigError("config: split sizes must be positive");
  }
  if (bench.seq_len > model.max_seq_len)
    throw ConfigError("config: bench.seq_len exceeds model max_seq_len");
  if (bench.batch_size == 0 || bench.reps == 0)
    throw ConfigError("config: bench batch_size and reps must be positive");
  if (!(baseline.fraction > 0 && baseline.fraction < 1))
    throw ConfigError("config: baseline fraction must be in (0, 1)");
  if (sparse_r < 0 || sparse_r > 1) throw ConfigError("config: sparse_r must be in [0, 1]");
  for (double r : sweep_ratios) {
    if (!(r > 0 && r <= 1)) throw ConfigError("config: sweep ratios must be in (0, 1]");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config", {"seed", "output_dir", "checkpoint", "model", "trim", "task", "bench",
                           "baseline", "train", "sweep_ratios"});
  RunConfig c;
  read(j, "seed", c.seed, "config");
  std::string out_dir = c.output_dir.string();
  read(j, "output_dir", out_dir, "config");
  c.output_dir = out_dir;
  if (j.contains("checkpoint") && !j["checkpoint"].is_null()) {
    c.checkpoint = j["checkpoint"].get<std::string>();
  }
  read(j, "sweep_ratios", c.sweep_ratios, "config");

  bool model_seed = false, trim_seed = false;
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"vocab_size", "d_model", "n_heads", "d_ffn", "n_blocks", "max_seq_len", "seed"});
    read(m, "vocab_size", c.model.vocab_size, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "n_heads", c.model.n_heads, "model");
    read(m, "d_ffn", c.model.d_ffn, "model");
    read(m, "n_blocks", c.model.n_blocks, "model");
    read(m, "max_seq_len", c.model.max_seq_len, "model");
    model_seed = m.contains("seed");
    read(m, "seed", c.model.seed, "model");
  }
  if (j.contains("trim")) {
    const json& t = j["trim"];
    check_keys(t, "trim", {"method", "r", "drops_per_epoch", "delta", "stop", "max_epochs",
                           "optimizer", "batch_size", "calibration_size", "score_threads",
                           "latency_reps", "seed"});
    std::string method = to_string(c.trim.method);
    read(t, "method", method, "trim");
    c.trim.method = parse_selection_method(method);
    read(t, "r", c.trim.r, "trim");
    read(t, "drops_per_epoch", c.trim.drops_per_epoch, "trim");
    read(t, "delta", c.trim.delta, "trim");
    std::string stop = c.trim.stop.to_string();
    read(t, "stop", stop, "trim");
    c.trim.stop = StoppingCriterion::parse(stop);
    read(t, "max_epochs", c.trim.max_epochs, "trim");
    read(t, "batch_size", c.trim.batch_size, "trim");
    read(t, "calibration_size", c.trim.calibration_size, "trim");
    read(t, "score_threads", c.trim.score_threads, "trim");
    read(t, "latency_reps", c.trim.latency_reps, "trim");
    trim_seed = t.contains("seed");
    read(t, "seed", c.trim.seed, "trim");
    if (t.contains("optimizer")) {
      const json& o = t["optimizer"];
      check_keys(o, "trim.optimizer", {"kind", "lr", "beta1", "beta2", "eps", "weight_decay", "clip_norm"});
      std::string kind = to_string(c.trim.optimizer.kind);
      read(o, "kind", kind, "trim.optimizer");
      c.trim.optimizer.kind = parse_optimizer_kind(kind);
      read(o, "lr", c.trim.optimizer.lr, "trim.optimizer");
      read(o, "beta1", c.trim.optimizer.beta1, "trim.optimizer");
      read(o, "beta2", c.trim.optimizer.beta2, "trim.optimizer");
      read(o, "eps", c.trim.optimizer.eps, "trim.optimizer");
      read(o, "weight_decay", c.trim.optimizer.weight_decay, "trim.optimizer");
      read(o, "clip_norm", c.trim.optimizer.clip_norm, "trim.optimizer");
    }
  }
  std::vector<bool> domain_seeded;
  if (j.contains("task")) {
    const json& t = j["task"];
    check_keys(t, "task", {"domains", "train_domains", "n_train", "n_valid", "n_test", "jsonl",
                           "valid_fraction", "test_fraction"});
    if (t.contains("domains")) {
      if (!t["domains"].is_array()) throw ConfigError("config: task.domains must be an array");
      c.task.domains.clear();
      for (std::size_t i = 0; i < t["domains"].size(); ++i) {
        bool seeded = false;
        c.task.domains.push_back(parse_domain(t["domains"][i], i, seeded));
        domain_seeded.push_back(seeded);
      }
    }
    read(t, "train_domains", c.task.train_domains, "task");
    read(t, "n_train", c.task.n_train, "task");
    read(t, "n_valid", c.task.n_valid, "task");
    read(t, "n_test", c.task.n_test, "task");
    if (t.contains("jsonl") && !t["jsonl"].is_null()) c.task.jsonl = t["jsonl"].get<std::string>();
    read(t, "valid_fraction", c.task.valid_fraction, "task");
    read(t, "test_fraction", c.task.test_fraction, "task");
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    check_keys(b, "bench", {"seq_len", "batch_size", "reps"});
    read(b, "seq_len", c.bench.seq_len, "bench");
    read(b, "batch_size", c.bench.batch_size, "bench");
    read(b, "reps", c.bench.reps, "bench");
  }
  if (j.contains("baseline")) {
    const json& b = j["baseline"];
    check_keys(b, "baseline", {"strategy", "fraction"});
    if (b.contains("strategy") && !b["strategy"].is_null())
      c.baseline.strategy = parse_rule_strategy(b["strategy"].get<std::string>());
    read(b, "fraction", c.baseline.fraction, "baseline");
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train", {"epochs", "sparse_r"});
    read(t, "epochs", c.train_epochs, "train");
    read(t, "sparse_r", c.sparse_r, "train");
  }

  // Seeds absent from the file derive from the run seed.
  if (!model_seed) c.model.seed = substream_seed(c.seed, "init");
  if (!trim_seed) c.trim.seed = c.seed;
  for (std::size_t i = 0; i < c.task.domains.size(); ++i) {
    if (i >= domain_seeded.size() || !domain_seeded[i]) c.task.domains[i].seed = c.seed;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["checkpoint"] = c.checkpoint ? json(c.checkpoint->string()) : json(nullptr);
  j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},       {"d_ffn", c.model.d_ffn},
                {"n_blocks", c.model.n_blocks},     {"max_seq_len", c.model.max_seq_len},
                {"seed", c.model.seed}};
  const OptimizerConfig& o = c.trim.optimizer;
  j["trim"] = {{"method", to_string(c.trim.method)},
               {"r", c.trim.r},
               {"drops_per_epoch", c.trim.drops_per_epoch},
               {"delta", c.trim.delta},
               {"stop", c.trim.stop.to_string()},
               {"max_epochs", c.trim.max_epochs},
               {"optimizer",
                {{"kind", to_string(o.kind)},
                 {"lr", o.lr},
                 {"beta1", o.beta1},
                 {"beta2", o.beta2},
                 {"eps", o.eps},
                 {"weight_decay", o.weight_decay},
                 {"clip_norm", o.clip_norm}}},
               {"batch_size", c.trim.batch_size},
               {"calibration_size", c.trim.calibration_size},
               {"score_threads", c.trim.score_threads},
               {"latency_reps", c.trim.latency_reps},
               {"seed", c.trim.seed}};
  json domains = json::array();
  for (const DomainSpec& d : c.task.domains) domains.push_back(domain_json(d));
  j["task"] = {{"domains", domains},
               {"train_domains", c.task.train_domains},
               {"n_train", c.task.n_train},
               {"n_valid", c.task.n_valid},
               {"n_test", c.task.n_test},
               {"jsonl", c.task.jsonl ? json(c.task.jsonl->string()) : json(nullptr)},
               {"valid_fraction", c.task.valid_fraction},
               {"test_fraction", c.task.test_fraction}};
  j["bench"] = {{"seq_len", c.bench.seq_len}, {"batch_size", c.bench.batch_size}, {"reps", c.bench.reps}};
  j["baseline"] = {{"strategy", c.baseline.strategy ? json(to_string(*c.baseline.strategy)) : json(nullptr)},
                   {"fraction", c.baseline.fraction}};
  j["train"] = {{"epochs", c.train_epochs}, {"sparse_r", c.sparse_r}};
  j["sweep_ratios"] = c.sweep_ratios;
  return j.dump(2);
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << run_config_json(config) << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<Dataset> load_domains(const TaskSelection& task, const ModelConfig& model,
                                  std::uint64_t seed) {
  if (task.jsonl) {
    McqLoadOptions opt;
    opt.vocab_size = model.vocab_size;
    opt.max_seq_len = model.max_seq_len;
    opt.valid_fraction = task.valid_fraction;
    opt.test_fraction = task.test_fraction;
    opt.seed = substream_seed(seed, "data");
    return {load_mcq_jsonl(*task.jsonl, opt).dataset};
  }
  std::vector<Dataset> out;
  for (const DomainSpec& d : task.domains) {
    if (d.max_sequence_length() > model.max_seq_len) {
      throw ConfigError("domain " + std::to_string(d.domain_id) + " needs sequences of " +
                        std::to_string(d.max_sequence_length()) + " tokens; max_seq_len is " +
                        std::to_string(model.max_seq_len));
    }
    out.push_back(gen_domain_dataset(d, task.n_train, task.n_valid, task.n_test, model.vocab_size));
  }
  return out;
}

Dataset load_task(const TaskSelection& task, const ModelConfig& model, std::uint64_t seed) {
  std::vector<Dataset> all = load_domains(task, model, seed);
  if (task.jsonl) return std::move(all.front());
  std::vector<Dataset> chosen;
  if (task.train_domains.empty()) {
    chosen = std::move(all);
  } else {
    for (std::size_t id : task.train_domains) chosen.push_back(all.at(id));
  }
  if (chosen.size() == 1) return std::move(chosen.front());
  return mix_datasets(chosen, substream_seed(seed, "mix"));
}

}  // namespace trimllm
