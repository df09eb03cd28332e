#include "outflip/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "outflip/kernels.hpp"

namespace outflip {

EmbeddingTable::EmbeddingTable(std::size_t rows, std::size_t dim, std::vector<double> values,
                               std::vector<bool> pretrained)
    : rows_(rows), dim_(dim), values_(std::move(values)), pretrained_(std::move(pretrained)) {
  if (dim_ == 0) throw Error("embedding dimension must be positive");
  if (values_.size() != rows_ * dim_ || pretrained_.size() != rows_) {
    throw Error("embedding table shape mismatch");
  }
  norms_.resize(rows_);
  std::size_t covered = 0;
  for (std::size_t r = 0; r < rows_; ++r) {
    auto v = row(static_cast<TokenId>(r));
    norms_[r] = std::sqrt(kernels::dot(v, v));
    if (!Vocab::is_reserved(static_cast<TokenId>(r)) && pretrained_[r]) ++covered;
  }
  const std::size_t regular = rows_ > Vocab::kReservedCount ? rows_ - Vocab::kReservedCount : 0;
  coverage_ = regular ? static_cast<double>(covered) / static_cast<double>(regular) : 0.0;
}

namespace {

// Splits on single spaces/tabs without allocating per field.
void split_fields(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
}

bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_count_header(const std::vector<std::string_view>& fields) {
  if (fields.size() != 2) return false;
  auto is_int = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  return is_int(fields[0]) && is_int(fields[1]);
}

}  // namespace

EmbeddingTable load_pretrained(std::istream& in, const Vocab& vocab, std::uint64_t seed,
                               const std::string& source) {
  const std::size_t rows = vocab.size();
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<bool> pretrained(rows, false);

  std::string line;
  std::vector<std::string_view> fields;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    const auto first_space = view.find_first_of(" \t");
    if (first_space == std::string_view::npos) continue;
    const auto word = view.substr(0, first_space);
    const auto id = vocab.find(word);
    if (lineno == 1) {
      split_fields(view, fields);
      if (is_count_header(fields)) continue;
    }
    if (!id || pretrained[*id]) continue;
    split_fields(view, fields);
    const std::size_t d = fields.size() - 1;
    if (dim == 0) {
      if (d == 0) throw Error(source + ":" + std::to_string(lineno) + ": no vector components");
      dim = d;
      values.assign(rows * dim, 0.0);
    } else if (d != dim) {
      throw Error(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                  " components, found " + std::to_string(d));
    }
    double* dst = values.data() + static_cast<std::size_t>(*id) * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      if (!parse_double(fields[k + 1], dst[k])) {
        throw Error(source + ":" + std::to_string(lineno) + ": bad number '" +
                    std::string(fields[k + 1]) + "'");
      }
    }
    pretrained[*id] = true;
  }
  if (dim == 0) throw Error(source + ": no vocabulary word has a pretrained vector");

  for (std::size_t r = 0; r < rows; ++r) {
    const auto id = static_cast<TokenId>(r);
    if (pretrained[r] || id == Vocab::kPad || id == Vocab::kMask) continue;
    Rng rng(derive_seed(seed, r));
    std::uniform_real_distribution<double> init(-0.1, 0.1);
    for (std::size_t k = 0; k < dim; ++k) values[r * dim + k] = init(rng);
  }
  EmbeddingTable table(rows, dim, std::move(values), std::move(pretrained));
  log::info(source + ": embedding coverage " + std::to_string(table.coverage()) + " over " +
            std::to_string(rows) + " rows, d=" + std::to_string(dim));
  return table;
}

EmbeddingTable load_pretrained(const std::filesystem::path& path, const Vocab& vocab,
                               std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embeddings " + path.string());
  return load_pretrained(in, vocab, seed, path.string());
}

Vocab vocab_from_embedding_file(const std::filesystem::path& path, std::size_t max_words) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embeddings " + path.string());
  std::vector<std::string> words;
  std::unordered_map<std::string, bool> seen;
  const Vocab reserved;
  std::string line;
  std::vector<std::string_view> fields;
  bool first = true;
  while (std::getline(in, line) && (max_words == 0 || words.size() < max_words)) {
    split_fields(line, fields);
    if (fields.empty()) continue;
    if (first && is_count_header(fields)) {
      first = false;
      continue;
    }
    first = false;
    std::string w(fields[0]);
    if (reserved.words().end() != std::find(reserved.words().begin(), reserved.words().end(), w)) continue;
    if (seen.emplace(w, true).second) words.push_back(std::move(w));
  }
  return Vocab::from_words(words);
}

double cosine_similarity(TokenId a, TokenId b, const EmbeddingTable& table) {
  const double na = table.norm(a);
  const double nb = table.norm(b);
  if (na == 0.0) throw Error("cosine_similarity: zero vector for word id " + std::to_string(a));
  if (nb == 0.0) throw Error("cosine_similarity: zero vector for word id " + std::to_string(b));
  const double c = kernels::dot(table.row(a), table.row(b)) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

AnalogyResult analogy_eval(std::istream& questions, const Vocab& vocab, const EmbeddingTable& table) {
  const std::size_t rows = table.rows();
  const std::size_t dim = table.dim();
  // Unit rows for pretrained, non-reserved words; everything else is excluded.
  std::vector<double> unit(rows * dim, 0.0);
  std::vector<bool> candidate(rows, false);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto id = static_cast<TokenId>(r);
    if (Vocab::is_reserved(id) || !table.is_pretrained(id) || table.norm(id) == 0.0) continue;
    candidate[r] = true;
    auto src = table.row(id);
    for (std::size_t k = 0; k < dim; ++k) unit[r * dim + k] = src[k] / table.norm(id);
  }

  AnalogyResult result;
  std::string line;
  std::size_t lineno = 0;
  std::size_t total = 0;
  std::vector<double> target(dim), sims(rows);
  while (std::getline(questions, line)) {
    ++lineno;
    auto words = tokenize(line);
    if (words.empty() || words[0].front() == ':') continue;
    if (words.size() != 4) {
      throw Error("analogy line " + std::to_string(lineno) + ": expected 4 words");
    }
    ++total;
    TokenId ids[4];
    bool ok = true;
    for (int k = 0; k < 4; ++k) {
      auto id = vocab.find(words[k]);
      if (!id || *id >= rows || !candidate[*id]) {
        ok = false;
        break;
      }
      ids[k] = *id;
    }
    if (!ok) {
      ++result.skipped;
      continue;
    }
    for (std::size_t k = 0; k < dim; ++k) {
      target[k] = unit[ids[1] * dim + k] - unit[ids[0] * dim + k] + unit[ids[2] * dim + k];
    }
    kernels::gemv(unit, rows, target, sims);
    TokenId best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      if (!candidate[r] || r == ids[0] || r == ids[1] || r == ids[2]) continue;
      if (sims[r] > best_sim) {
        best_sim = sims[r];
        best = static_cast<TokenId>(r);
      }
    }
    ++result.attempted;
    if (best_sim > -std::numeric_limits<double>::infinity() && best == ids[3]) ++result.correct;
  }
  if (total == 0) throw Error("analogy_eval: no questions found");
  result.accuracy =
      result.attempted ? static_cast<double>(result.correct) / static_cast<double>(result.attempted) : 0.0;
  return result;
}

AnalogyResult analogy_eval(const std::filesystem::path& questions, const Vocab& vocab,
                           const EmbeddingTable& table) {
  std::ifstream in(questions);
  if (!in) throw Error("cannot open analogy file " + questions.string());
  return analogy_eval(in, vocab, table);
}

}  // namespace outflip
