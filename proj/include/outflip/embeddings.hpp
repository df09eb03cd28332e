#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "outflip/corpus.hpp"

namespace outflip {

// |V| x d word vectors aligned with a Vocab. The rows are the frozen
// reference copy: similarity queries always read these, never a model's
// (possibly fine-tuned) embedding parameters.
class EmbeddingTable {
 public:
  EmbeddingTable(std::size_t rows, std::size_t dim, std::vector<double> values,
                 std::vector<bool> pretrained);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> row(TokenId id) const {
    return {values_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<const double> values() const noexcept { return values_; }
  double norm(TokenId id) const { return norms_.at(id); }
  bool is_pretrained(TokenId id) const { return pretrained_.at(id); }
  // Share of non-reserved rows that came from the pretrained file.
  double coverage() const noexcept { return coverage_; }

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<double> values_;
  std::vector<bool> pretrained_;
  std::vector<double> norms_;
  double coverage_ = 0.0;
};

// Text format: "word v_1 ... v_d" per line; an optional "count dim" header
// line is skipped. Vocab words absent from the file, and UNK, get seeded
// uniform [-0.1, 0.1] rows; PAD and MASK rows are zero.
EmbeddingTable load_pretrained(const std::filesystem::path& path, const Vocab& vocab,
                               std::uint64_t seed);
EmbeddingTable load_pretrained(std::istream& in, const Vocab& vocab, std::uint64_t seed,
                               const std::string& source = "<stream>");

// Builds a vocabulary from the words of an embedding file (file order), for
// tools that work on the embeddings alone. max_words == 0 reads everything.
Vocab vocab_from_embedding_file(const std::filesystem::path& path, std::size_t max_words = 0);

double cosine_similarity(TokenId a, TokenId b, const EmbeddingTable& table);

struct AnalogyResult {
  double accuracy = 0.0;  // correct / attempted (0 when nothing attempted)
  std::size_t attempted = 0;
  std::size_t correct = 0;
  std::size_t skipped = 0;  // questions with a word outside the pretrained vocabulary
};

// 3CosAdd: for "a b c d", predicts argmax_w cos(w, b - a + c) over pretrained,
// non-reserved rows other than a, b, c. Lines starting with ':' are section
// headers.
AnalogyResult analogy_eval(std::istream& questions, const Vocab& vocab, const EmbeddingTable& table);
AnalogyResult analogy_eval(const std::filesystem::path& questions, const Vocab& vocab,
                           const EmbeddingTable& table);

}  // namespace outflip
