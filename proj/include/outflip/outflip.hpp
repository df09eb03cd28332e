#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "outflip/classifier.hpp"
#include "outflip/embeddings.hpp"

// Out-of-domain sample generation by gradient-guided word flips: find the
// word the reference model relies on most, and swap it for a dissimilar
// word chosen among those that change the loss least, keeping only results
// the model still assigns to the original intent.
namespace outflip {

struct OutFlipConfig {
  double t_sim = 0.3;                 // keep replacements with cosine <= t_sim
  double candidate_fraction = 0.01;   // share of |V| kept after sorting by loss change
  std::size_t cct_size = 5;           // core class tokens per intent
  std::size_t iterations = 3;
  bool strict_similarity = false;     // use cosine < t_sim instead
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t candidate_prefix(std::size_t vocab_size) const;
};

struct CctEntry {
  TokenId word = 0;
  std::size_t frequency = 0;
};

// Per in-domain class: up to cct_size most frequent most-important words,
// by frequency desc then word id asc.
struct CctMap {
  std::vector<std::vector<CctEntry>> by_class;

  bool contains(std::size_t label, TokenId word) const;
};

struct ImportantWord {
  std::size_t position = 0;
  TokenId word = 0;
  double importance = 0.0;
};

struct OodSample {
  std::vector<TokenId> tokens;
  std::vector<std::string> text;
  std::int64_t source_id = 0;
  std::size_t position = 0;
  TokenId original = 0;
  TokenId replacement = 0;
  std::size_t iteration = 0;
  std::size_t source_label = 0;     // class index of the source sentence
  std::size_t predicted_label = 0;  // reference model's argmax on the sample
};

struct GenerationStats {
  std::size_t examples = 0;
  std::size_t cct_hits = 0;
  std::size_t no_candidate = 0;
  std::size_t classification_changed = 0;
  std::size_t duplicates = 0;
  std::size_t emitted = 0;
};

// o_y(x) - o_y(x with position replaced by MASK).
template <class T>
double word_importance(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t label,
                       std::size_t position);

// Argmax of word_importance over non-reserved positions; ties go to the
// lowest position. Throws when every position holds a reserved token.
template <class T>
ImportantWord most_important_word(const TextModel<T>& model, std::span<const TokenId> tokens,
                                  std::size_t label);

struct CctExtraction {
  CctMap cct;
  std::vector<std::optional<ImportantWord>> per_example;  // aligned with the input; nullopt = skipped
};

// Tallies the most important word of every in-domain training example
// (label < num_in_domain) per class.
template <class T>
CctExtraction extract_cct(const TextModel<T>& model, std::span<const LabeledExample> train,
                          std::size_t num_in_domain, std::size_t cct_size = 5);

// Full loss-change row: out[b] = dot(E_b, dL/de_i) over the model's embedding.
template <class T>
std::vector<T> flip_score_row(const TextModel<T>& model, const Matrix<T>& input_grad, std::size_t position);

// Eligible words (non-reserved, pretrained, nonzero) sorted ascending by
// loss change, truncated to the configured prefix, then filtered by cosine
// to the current word on the reference table; the current word is dropped.
template <class T>
std::vector<TokenId> candidate_replacements(const TextModel<T>& model, const EmbeddingTable& table,
                                            std::span<const TokenId> tokens, std::size_t label,
                                            std::size_t position, const OutFlipConfig& config);

struct TokenSequenceSet {
  struct Hash {
    std::size_t operator()(const std::vector<TokenId>& v) const noexcept;
  };
  std::unordered_set<std::vector<TokenId>, Hash> items;

  bool insert(const std::vector<TokenId>& tokens) { return items.insert(tokens).second; }
  bool contains(const std::vector<TokenId>& tokens) const { return items.count(tokens) > 0; }
};


// One pass of the generator over the training split. `exclude` holds token
// sequences that must not be emitted (training sentences are always
// excluded); emitted sequences are added to it. With a vocab, sample text
// is the source text with the flipped word rewritten.
template <class T>
std::vector<OodSample> generate_ood(const TextModel<T>& model, const EmbeddingTable& table,
                                    std::span<const LabeledExample> train, std::size_t num_in_domain,
                                    const OutFlipConfig& config, std::size_t iteration,
                                    TokenSequenceSet* exclude = nullptr, GenerationStats* stats = nullptr,
                                    const Vocab* vocab = nullptr);

struct HotFlipResult {
  std::vector<TokenId> tokens;
  std::size_t position = 0;
  TokenId original = 0;
  TokenId replacement = 0;
  double score = 0.0;  // first-order loss increase
  std::size_t prediction_before = 0;
  std::size_t prediction_after = 0;
  bool prediction_changed = false;
};

// Single flip maximizing the first-order loss increase over all positions
// and eligible words with cosine >= t_sim to the replaced word.
template <class T>
std::optional<HotFlipResult> hotflip_attack(const TextModel<T>& model, const EmbeddingTable& table,
                                            std::span<const TokenId> tokens, std::size_t label, double t_sim);

}  // namespace outflip
