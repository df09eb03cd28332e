#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "outflip/common.hpp"

namespace outflip {

struct LabeledExample {
  std::vector<TokenId> tokens;    // filled by encode(); empty until then
  std::vector<std::string> text;  // lowercased whitespace tokens
  int label = kOodLabel;          // dataset label id, or kOodLabel
  std::int64_t example_id = 0;
};

// Word <-> id table. Ids 0..2 are PAD, UNK and MASK; everything else is a
// corpus word ordered by training frequency (desc), then lexicographically.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kReservedCount = 3;

  Vocab();
  // Rebuilds a vocab from its non-reserved words in id order.
  static Vocab from_words(std::span<const std::string> words);

  std::size_t size() const noexcept { return words_.size(); }
  std::optional<TokenId> find(std::string_view word) const;
  TokenId id(std::string_view word) const;  // UNK when absent
  const std::string& word(TokenId id) const { return words_.at(id); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  static constexpr bool is_reserved(TokenId id) noexcept { return id < kReservedCount; }

  std::vector<TokenId> encode(std::span<const std::string> text) const;
  std::uint64_t hash() const;

 private:
  friend Vocab build_vocab(std::span<const LabeledExample> train);
  void add(std::string word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Dataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> dev;
  std::vector<LabeledExample> test;
  std::vector<std::string> labels;  // label id -> name

  std::size_t num_labels() const noexcept { return labels.size(); }
  std::optional<int> label_id(std::string_view name) const;
};

struct KnownIntentSelection {
  std::uint64_t seed = 0;
  double fraction = 1.0;
  std::vector<int> known_labels;  // ascending dataset label ids
  std::vector<LabeledExample> train;  // known labels only
  std::vector<LabeledExample> dev;    // known labels only
  std::vector<LabeledExample> test;   // every label

  bool is_known(int label) const;
};

enum class DatasetFormat { jsonl, tsv, atis, snips };

DatasetFormat parse_dataset_format(std::string_view name);
std::string_view to_string(DatasetFormat format);

std::vector<std::string> tokenize(std::string_view text);

// jsonl/tsv: a single file (train only) or a directory holding
// train/dev/test files. atis: <dir>/{train,valid,test}/{seq.in,label}.
// snips: <dir>/<Intent>/{train_<Intent>_full.json,validate_<Intent>.json}.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

void write_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples,
                 std::span<const std::string> labels);

std::vector<std::size_t> label_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_labels);

// Moves round(ratio * n_y) examples of every label y from train to test.
Dataset make_test_split(const Dataset& dataset, double ratio, std::uint64_t seed);

// round-half-up of fraction * total, at least 1.
std::size_t known_intent_count(double fraction, std::size_t total);

KnownIntentSelection select_known_intents(const Dataset& dataset, double fraction,
                                          std::uint64_t seed);

Vocab build_vocab(std::span<const LabeledExample> train);

// Fills tokens for every split; unseen words map to UNK.
void encode(Dataset& dataset, const Vocab& vocab);

}  // namespace outflip
