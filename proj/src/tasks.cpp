#include "trimllm/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "trimllm/rng.hpp"

namespace trimllm {

TaskKind parse_task_kind(const std::string& name) {
  if (name == "kv_recall") return TaskKind::kv_recall;
  if (name == "modular_arithmetic") return TaskKind::modular_arithmetic;
  if (name == "sequence_reversal") return TaskKind::sequence_reversal;
  throw ConfigError("unknown task kind '" + name + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kv_recall: return "kv_recall";
    case TaskKind::modular_arithmetic: return "modular_arithmetic";
    case TaskKind::sequence_reversal: return "sequence_reversal";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// DomainSpec

std::size_t DomainSpec::tokens_needed() const {
  switch (kind) {
    case TaskKind::kv_recall: return n_keys + n_values;
    case TaskKind::modular_arithmetic: return modulus;
    case TaskKind::sequence_reversal: return n_symbols;
  }
  return 0;
}

std::vector<Token> DomainSpec::answer_tokens() const {
  std::vector<Token> out;
  switch (kind) {
    case TaskKind::kv_recall:
      for (std::size_t i = 0; i < n_values; ++i) out.push_back(vocab_base + Token(n_keys + i));
      break;
    case TaskKind::modular_arithmetic:
      for (std::size_t i = 0; i < modulus; ++i) out.push_back(vocab_base + Token(i));
      break;
    case TaskKind::sequence_reversal:
      for (std::size_t i = 0; i < n_symbols; ++i) out.push_back(vocab_base + Token(i));
      break;
  }
  return out;
}

std::size_t DomainSpec::max_sequence_length() const {
  switch (kind) {
    case TaskKind::kv_recall: return 1 + 2 * n_pairs + 2 + 1;
    case TaskKind::modular_arithmetic: return 5 + 1;
    case TaskKind::sequence_reversal: return 1 + length + 1 + length;
  }
  return 0;
}

void DomainSpec::validate(std::size_t vocab_size) const {
  if (vocab_base < vocab::first_free) {
    throw ConfigError("domain " + std::to_string(domain_id) + ": vocab_base " +
                      std::to_string(vocab_base) + " overlaps reserved ids below " +
                      std::to_string(vocab::first_free));
  }
  if (tokens_needed() == 0 || tokens_needed() > vocab_span) {
    throw ConfigError("domain " + std::to_string(domain_id) + ": task needs " +
                      std::to_string(tokens_needed()) + " tokens but range spans " +
                      std::to_string(vocab_span));
  }
  if (static_cast<std::size_t>(vocab_base) + vocab_span > vocab_size) {
    throw ConfigError("domain " + std::to_string(domain_id) + ": range [" +
                      std::to_string(vocab_base) + ", " +
                      std::to_string(vocab_base + Token(vocab_span)) + ") overflows vocabulary of " +
                      std::to_string(vocab_size));
  }
  if (kind == TaskKind::kv_recall && (n_pairs == 0 || n_pairs > n_keys)) {
    throw ConfigError("kv_recall: n_pairs must be in [1, n_keys]");
  }
  if (kind == TaskKind::kv_recall && n_values == 0) throw ConfigError("kv_recall: n_values is zero");
  if (kind == TaskKind::modular_arithmetic && modulus < 2) {
    throw ConfigError("modular_arithmetic: modulus must be >= 2");
  }
  if (kind == TaskKind::sequence_reversal && (length == 0 || n_symbols == 0)) {
    throw ConfigError("sequence_reversal: length and n_symbols must be positive");
  }
}

void validate_disjoint(std::span<const DomainSpec> specs) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      const auto a0 = specs[i].vocab_base, a1 = a0 + Token(specs[i].vocab_span);
      const auto b0 = specs[j].vocab_base, b1 = b0 + Token(specs[j].vocab_span);
      if (a0 < b1 && b0 < a1) {
        throw ConfigError("domains " + std::to_string(specs[i].domain_id) + " and " +
                          std::to_string(specs[j].domain_id) + " share vocabulary ids");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Samples

std::vector<Token> Sample::sequence() const {
  std::vector<Token> s = prompt;
  s.insert(s.end(), answer.begin(), answer.end());
  return s;
}

std::vector<std::size_t> Sample::loss_positions() const {
  std::vector<std::size_t> out(answer.size());
  std::iota(out.begin(), out.end(), prompt.size());
  return out;
}

namespace {

Sample make_sample(const DomainSpec& spec, Rng& rng) {
  Sample s;
  s.candidates = spec.answer_tokens();
  const Token base = spec.vocab_base;
  switch (spec.kind) {
    case TaskKind::kv_recall: {
      std::vector<Token> keys(spec.n_keys);
      std::iota(keys.begin(), keys.end(), base);
      std::shuffle(keys.begin(), keys.end(), rng);
      std::uniform_int_distribution<std::size_t> value_dist(0, spec.n_values - 1);
      std::uniform_int_distribution<std::size_t> pick(0, spec.n_pairs - 1);
      s.prompt.push_back(vocab::bos);
      std::vector<Token> values(spec.n_pairs);
      for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        values[i] = base + Token(spec.n_keys + value_dist(rng));
        s.prompt.push_back(keys[i]);
        s.prompt.push_back(values[i]);
      }
      const std::size_t q = pick(rng);
      s.prompt.push_back(vocab::sep);
      s.prompt.push_back(keys[q]);
      s.answer = {values[q]};
      break;
    }
    case TaskKind::modular_arithmetic: {
      std::uniform_int_distribution<std::size_t> num(0, spec.modulus - 1);
      const std::size_t a = num(rng), b = num(rng);
      s.prompt = {vocab::bos, base + Token(a), vocab::plus, base + Token(b), vocab::sep};
      s.answer = {base + Token((a + b) % spec.modulus)};
      break;
    }
    case TaskKind::sequence_reversal: {
      std::uniform_int_distribution<std::size_t> sym(0, spec.n_symbols - 1);
      s.prompt.push_back(vocab::bos);
      for (std::size_t i = 0; i < spec.length; ++i) s.prompt.push_back(base + Token(sym(rng)));
      s.answer.assign(s.prompt.rbegin(), s.prompt.rbegin() + static_cast<std::ptrdiff_t>(spec.length));
      s.prompt.push_back(vocab::sep);
      break;
    }
  }
  return s;
}

double distinct_prompt_capacity(const DomainSpec& spec) {
  switch (spec.kind) {
    case TaskKind::modular_arithmetic: return double(spec.modulus) * double(spec.modulus);
    case TaskKind::sequence_reversal: return std::pow(double(spec.n_symbols), double(spec.length));
    case TaskKind::kv_recall: {
      double c = double(spec.n_pairs);
      for (std::size_t i = 0; i < spec.n_pairs; ++i)
        c *= double(spec.n_keys - i) * double(spec.n_values);
      return c;
    }
  }
  return 0;
}

}  // namespace

Dataset gen_domain_dataset(const DomainSpec& spec, std::size_t n_train, std::size_t n_valid,
                           std::size_t n_test, std::size_t vocab_size) {
  spec.validate(vocab_size);
  if (n_train == 0 || n_valid == 0 || n_test == 0) {
    throw ConfigError("gen_domain_dataset: split sizes must be positive");
  }
  const std::size_t total = n_train + n_valid + n_test;
  if (double(total) > distinct_prompt_capacity(spec)) {
    throw ConfigError("gen_domain_dataset: " + std::to_string(total) +
                      " distinct samples requested but the task only has " +
                      std::to_string(static_cast<std::uint64_t>(distinct_prompt_capacity(spec))));
  }
  Rng rng(substream_seed(spec.seed, "data", spec.domain_id));
  std::set<std::vector<Token>> seen;
  std::vector<Sample> all;
  all.reserve(total);
  std::size_t attempts = 0;
  while (all.size() < total) {
    if (++attempts > 200 * total + 10000) {
      throw ConfigError("gen_domain_dataset: could not draw enough distinct samples");
    }
    Sample s = make_sample(spec, rng);
    if (seen.insert(s.prompt).second) all.push_back(std::move(s));
  }
  Dataset ds;
  ds.provenance = "domain " + std::to_string(spec.domain_id) + " " + to_string(spec.kind) +
                  " seed " + std::to_string(spec.seed);
  auto it = std::make_move_iterator(all.begin());
  ds.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  ds.valid.assign(it + static_cast<std::ptrdiff_t>(n_train),
                  it + static_cast<std::ptrdiff_t>(n_train + n_valid));
  ds.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_valid),
                 std::make_move_iterator(all.end()));
  return ds;
}

Dataset mix_datasets(std::span<const Dataset> parts, std::uint64_t seed) {
  Dataset out;
  out.provenance = "mixture of";
  for (const Dataset& d : parts) {
    out.train.insert(out.train.end(), d.train.begin(), d.train.end());
    out.valid.insert(out.valid.end(), d.valid.begin(), d.valid.end());
    out.test.insert(out.test.end(), d.test.begin(), d.test.end());
    out.provenance += " [" + d.provenance + "]";
  }
  Rng rng(substream_seed(seed, "mix"));
  std::shuffle(out.train.begin(), out.train.end(), rng);
  std::shuffle(out.valid.begin(), out.valid.end(), rng);
  std::shuffle(out.test.begin(), out.test.end(), rng);
  return out;
}

LmBatch make_lm_batch(std::span<const Sample> samples) {
  LmBatch b;
  std::vector<std::vector<Token>> inputs;
  inputs.reserve(samples.size());
  for (const Sample& s : samples) {
    if (s.answer.empty()) throw InputError("sample without answer tokens");
    std::vector<Token> seq = s.sequence();
    seq.pop_back();
    inputs.push_back(std::move(seq));
  }
  b.inputs = TokenBatch::pack(inputs, vocab::pad);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    for (std::size_t j = 0; j < s.answer.size(); ++j) {
      b.target_rows.push_back(b.inputs.row(i, s.prompt.size() - 1 + j));
      b.targets.push_back(static_cast<std::size_t>(s.answer[j]));
      b.owner.push_back(i);
    }
  }
  return b;
}

template <class Real>
AccuracyResult evaluate_accuracy(const TrimModel<Real>& model, std::span<const Sample> data,
                                 const UnitMask* mask_override, std::size_t batch_size) {
  AccuracyResult r;
  r.n_samples = data.size();
  if (data.empty()) {
    r.empty_warning = true;
    return r;
  }
  NoGradScope<Real> no_grad;
  const std::size_t v = model.config().vocab_size;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    auto chunk = data.subspan(start, std::min(batch_size, data.size() - start));
    LmBatch b = make_lm_batch(chunk);
    Tensor<Real> logits = model.logits_at(b.inputs, b.target_rows, mask_override);
    auto lv = logits.data();
    std::vector<char> ok(chunk.size(), 1);
    for (std::size_t t = 0; t < b.target_rows.size(); ++t) {
      const Real* row = lv.data() + t * v;
      const Sample& s = chunk[b.owner[t]];
      std::size_t best = 0;
      if (s.candidates.empty()) {
        best = static_cast<std::size_t>(std::max_element(row, row + v) - row);
      } else {
        best = static_cast<std::size_t>(s.candidates.front());
        for (Token c : s.candidates)
          if (row[c] > row[best]) best = static_cast<std::size_t>(c);
      }
      if (best != b.targets[t]) ok[b.owner[t]] = 0;
    }
    r.n_correct += static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
  }
  r.percent = 100.0 * double(r.n_correct) / double(r.n_samples);
  return r;
}

double chance_accuracy(std::span<const Sample> data, std::size_t vocab_size) {
  if (data.empty()) return 0.0;
  double total = 0;
  for (const Sample& s : data) {
    const double k = s.candidates.empty() ? double(vocab_size) : double(s.candidates.size());
    total += std::pow(1.0 / k, double(s.answer.size()));
  }
  return 100.0 * total / double(data.size());
}

Split sample_calibration(std::span<const Sample> valid, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw InputError("sample_calibration: calibration set must not be empty");
  if (k > valid.size()) {
    throw SizeError("sample_calibration: asked for " + std::to_string(k) + " of " +
                    std::to_string(valid.size()) + " samples");
  }
  std::vector<std::size_t> idx(valid.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are a uniform sample in random order.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  Split out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(valid[idx[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL multiple choice

McqLoadResult load_mcq_jsonl(const std::filesystem::path& path, const McqLoadOptions& options) {
  if (options.vocab_size <= static_cast<std::size_t>(vocab::first_free)) {
    throw ConfigError("load_mcq_jsonl: vocabulary too small for byte tokens");
  }
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  const std::size_t byte_span =
      std::min<std::size_t>(256, options.vocab_size - static_cast<std::size_t>(vocab::first_free));
  auto encode = [&](const std::string& text, std::vector<Token>& out) {
    for (unsigned char c : text) out.push_back(vocab::first_free + Token(c % byte_span));
  };

  McqLoadResult result;
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + " line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw InputError(where + ": expected a JSON object");
    for (const char* field : {"question", "choices", "answer"}) {
      if (!obj.contains(field)) throw InputError(where + ": missing field '" + field + "'");
    }
    if (!obj["question"].is_string()) throw InputError(where + ": 'question' must be a string");
    const auto& choices = obj["choices"];
    if (!choices.is_array() || choices.empty() || choices.size() > vocab::max_choices) {
      throw InputError(where + ": 'choices' must be an array of 1.." +
                       std::to_string(vocab::max_choices) + " strings");
    }
    if (!obj["answer"].is_number_integer()) throw InputError(where + ": 'answer' must be an integer");
    const auto answer = obj["answer"].get<std::int64_t>();
    if (answer < 0 || static_cast<std::size_t>(answer) >= choices.size()) {
      throw InputError(where + ": answer index " + std::to_string(answer) + " out of range");
    }
    Sample s;
    s.prompt.push_back(vocab::bos);
    encode(obj["question"].get<std::string>(), s.prompt);
    for (std::size_t i = 0; i < choices.size(); ++i) {
      if (!choices[i].is_string()) throw InputError(where + ": choices must be strings");
      s.prompt.push_back(vocab::choice_base + Token(i));
      encode(choices[i].get<std::string>(), s.prompt);
      s.candidates.push_back(vocab::choice_base + Token(i));
    }
    s.prompt.push_back(vocab::ans);
    s.answer = {vocab::choice_base + Token(answer)};
    if (options.max_seq_len != 0 && s.prompt.size() + s.answer.size() > options.max_seq_len) {
      ++result.skipped_too_long;
      continue;
    }
    samples.push_back(std::move(s));
  }
  if (line_no == 0 || (samples.empty() && result.skipped_too_long == 0)) {
    throw InputError(path.string() + ": file contains no samples");
  }
  Rng rng(substream_seed(options.seed, "mcq_split"));
  std::shuffle(samples.begin(), samples.end(), rng);
  const auto n = samples.size();
  const auto n_valid = static_cast<std::size_t>(options.valid_fraction * double(n));
  const auto n_test = static_cast<std::size_t>(options.test_fraction * double(n));
  Dataset& ds = result.dataset;
  ds.provenance = path.string();
  auto it = samples.begin();
  ds.valid.assign(it, it + static_cast<std::ptrdiff_t>(n_valid));
  ds.test.assign(it + static_cast<std::ptrdiff_t>(n_valid),
                 it + static_cast<std::ptrdiff_t>(n_valid + n_test));
  ds.train.assign(it + static_cast<std::ptrdiff_t>(n_valid + n_test), samples.end());
  return result;
}

template AccuracyResult evaluate_accuracy<float>(const TrimModel<float>&, std::span<const Sample>,
                                                 const UnitMask*, std::size_t);
template AccuracyResult evaluate_accuracy<double>(const TrimModel<double>&, std::span<const Sample>,
                                                  const UnitMask*, std::size_t);

}  // namespace trimllm
