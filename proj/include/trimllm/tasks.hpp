#pragma once

// Synthetic multi-domain tasks, a multiple-choice JSONL loader, and
// teacher-forced answer accuracy.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trimllm/model.hpp"

namespace trimllm {

/// Token ids shared by every domain ("grammar" tokens).
namespace vocab {
inline constexpr Token pad = 0;
inline constexpr Token bos = 1;
inline constexpr Token sep = 2;
inline constexpr Token ans = 3;
inline constexpr Token plus = 4;
inline constexpr Token choice_base = 8;
inline constexpr std::size_t max_choices = 8;
/// First id available for domain-exclusive ranges.
inline constexpr Token first_free = 16;
}  // namespace vocab

enum class TaskKind { kv_recall, modular_arithmetic, sequence_reversal };

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

struct DomainSpec {
  std::size_t domain_id = 0;
  Token vocab_base = vocab::first_free;
  std::size_t vocab_span = 32;
  TaskKind kind = TaskKind::kv_recall;
  // kv_recall: n_pairs stored pairs drawn from n_keys keys and n_values values.
  std::size_t n_pairs = 4;
  std::size_t n_keys = 16;
  std::size_t n_values = 16;
  // modular_arithmetic
  std::size_t modulus = 16;
  // sequence_reversal: length symbols drawn from n_symbols.
  std::size_t length = 4;
  std::size_t n_symbols = 16;
  std::uint64_t seed = 0;

  /// Tokens of the domain-exclusive range the task actually uses.
  std::size_t tokens_needed() const;
  /// Answer alphabet (every answer token is one of these).
  std::vector<Token> answer_tokens() const;
  /// Longest prompt+answer sequence the task emits.
  std::size_t max_sequence_length() const;
  void validate(std::size_t vocab_size) const;
};

/// Throws ConfigError unless the exclusive ranges are pairwise disjoint.
void validate_disjoint(std::span<const DomainSpec> specs);

struct Sample {
  std::vector<Token> prompt;
  std::vector<Token> answer;
  /// Answer alphabet for multiple-choice scoring; empty means full vocabulary.
  std::vector<Token> candidates;

  std::vector<Token> sequence() const;
  /// Positions of `sequence()` whose tokens are scored (answer positions).
  std::vector<std::size_t> loss_positions() const;
};

using Split = std::vector<Sample>;

struct Dataset {
  Split train, valid, test;
  std::string provenance;
};

Dataset gen_domain_dataset(const DomainSpec& spec, std::size_t n_train, std::size_t n_valid,
                           std::size_t n_test, std::size_t vocab_size);

/// Concatenates each split across datasets and shuffles deterministically.
Dataset mix_datasets(std::span<const Dataset> parts, std::uint64_t seed);

/// Teacher-forced inputs and answer targets for a group of samples.
struct LmBatch {
  TokenBatch inputs;
  std::vector<std::size_t> target_rows;  // flattened rows of `inputs`
  std::vector<std::size_t> targets;      // token id per target row
  std::vector<std::size_t> owner;        // sample index per target row
};

LmBatch make_lm_batch(std::span<const Sample> samples);

struct AccuracyResult {
  double percent = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_correct = 0;
  /// Set when the split was empty (percent is then 0 by definition).
  bool empty_warning = false;
};

/// Percentage of samples whose answer tokens are all argmax-correct under
/// teacher forcing (argmax over `candidates` when present).
template <class Real>
AccuracyResult evaluate_accuracy(const TrimModel<Real>& model, std::span<const Sample> data,
                                 const UnitMask* mask_override = nullptr,
                                 std::size_t batch_size = 64);

/// Expected accuracy of uniform guessing over each sample's answer alphabet.
double chance_accuracy(std::span<const Sample> data, std::size_t vocab_size);

/// k samples drawn uniformly without replacement.
Split sample_calibration(std::span<const Sample> valid, std::size_t k, std::uint64_t seed);

struct McqLoadOptions {
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;
  double valid_fraction = 0.0;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct McqLoadResult {
  Dataset dataset;
  std::size_t skipped_too_long = 0;
};

/// Reads one {"question", "choices", "answer"} object per line. Text is mapped
/// byte-wise into the vocabulary above the reserved ids; answers become
/// choice-label tokens.
McqLoadResult load_mcq_jsonl(const std::filesystem::path& path, const McqLoadOptions& options);

}  // namespace trimllm
