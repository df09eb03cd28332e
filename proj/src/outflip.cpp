#include "outflip/outflip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "outflip/kernels.hpp"

namespace outflip {

void OutFlipConfig::validate() const {
  if (!(candidate_fraction > 0.0 && candidate_fraction <= 1.0)) {
    throw Error("outflip: candidate_fraction must lie in (0, 1]");
  }
  if (!(t_sim >= -1.0 && t_sim <= 1.0)) throw Error("outflip: t_sim must lie in [-1, 1]");
  if (cct_size == 0) throw Error("outflip: cct_size must be positive");
}

std::size_t OutFlipConfig::candidate_prefix(std::size_t vocab_size) const {
  const double raw = candidate_fraction * static_cast<double>(vocab_size);
  const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::max<std::size_t>(1, n);
}

bool CctMap::contains(std::size_t label, TokenId word) const {
  if (label >= by_class.size()) return false;
  const auto& entries = by_class[label];
  return std::any_of(entries.begin(), entries.end(), [&](const CctEntry& e) { return e.word == word; });
}

std::size_t TokenSequenceSet::Hash::operator()(const std::vector<TokenId>& v) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto t : v) h = mix_seed(h ^ t);
  return static_cast<std::size_t>(h);
}

namespace {

bool similarity_ok(double cosine, const OutFlipConfig& config) {
  return config.strict_similarity ? cosine < config.t_sim : cosine <= config.t_sim;
}

bool eligible_candidate(TokenId id, const EmbeddingTable& table) {
  return !Vocab::is_reserved(id) && table.is_pretrained(id) && table.norm(id) > 0.0;
}

}  // namespace

template <class T>
double word_importance(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t label,
                       std::size_t position) {
  if (position >= tokens.size()) throw Error("word_importance: position out of range");
  std::vector<TokenId> masked(tokens.begin(), tokens.end());
  masked[position] = Vocab::kMask;
  const auto full = model.logits(tokens);
  const auto without = model.logits(masked);
  return static_cast<double>(full.at(label)) - static_cast<double>(without.at(label));
}

template <class T>
ImportantWord most_important_word(const TextModel<T>& model, std::span<const TokenId> tokens,
                                  std::size_t label) {
  const auto full = model.logits(tokens);
  const double base = static_cast<double>(full.at(label));
  std::optional<ImportantWord> best;
  std::vector<TokenId> masked(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (Vocab::is_reserved(tokens[i])) continue;
    masked[i] = Vocab::kMask;
    const double imp = base - static_cast<double>(model.logits(masked)[label]);
    masked[i] = tokens[i];
    if (!best || imp > best->importance) best = ImportantWord{i, tokens[i], imp};
  }
  if (!best) throw Error("most_important_word: sentence has no non-reserved token");
  return *best;
}

template <class T>
CctExtraction extract_cct(const TextModel<T>& model, std::span<const LabeledExample> train,
                          std::size_t num_in_domain, std::size_t cct_size) {
  CctExtraction out;
  out.per_example.resize(train.size());
  std::vector<std::map<TokenId, std::size_t>> tally(num_in_domain);
  for (std::size_t e = 0; e < train.size(); ++e) {
    const auto& ex = train[e];
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_in_domain) continue;
    if (std::all_of(ex.tokens.begin(), ex.tokens.end(), [](TokenId t) { return Vocab::is_reserved(t); })) {
      continue;
    }
    out.per_example[e] = most_important_word(model, ex.tokens, static_cast<std::size_t>(ex.label));
    ++tally[ex.label][out.per_example[e]->word];
  }
  out.cct.by_class.resize(num_in_domain);
  for (std::size_t y = 0; y < num_in_domain; ++y) {
    std::vector<CctEntry> entries;
    for (const auto& [word, freq] : tally[y]) entries.push_back({word, freq});
    std::stable_sort(entries.begin(), entries.end(), [](const CctEntry& a, const CctEntry& b) {
      if (a.frequency != b.frequency) return a.frequency > b.frequency;
      return a.word < b.word;
    });
    if (entries.size() > cct_size) entries.resize(cct_size);
    out.cct.by_class[y] = std::move(entries);
  }
  return out;
}

template <class T>
std::vector<T> flip_score_row(const TextModel<T>& model, const Matrix<T>& input_grad, std::size_t position) {
  const auto& emb = model.embedding();
  const std::size_t rows = emb.shape.at(0);
  std::vector<T> out(rows);
  kernels::gemv(std::span<const T>(emb.value), rows, input_grad.row(position), std::span<T>(out));
  return out;
}

namespace {

template <class T>
std::vector<TokenId> candidates_from_grad(const TextModel<T>& model, const EmbeddingTable& table,
                                          std::span<const TokenId> tokens, std::size_t position,
                                          const Matrix<T>& grad, const OutFlipConfig& config) {
  const TokenId current = tokens[position];
  const auto scores = flip_score_row(model, grad, position);
  std::vector<TokenId> order;
  order.reserve(scores.size());
  for (std::size_t b = 0; b < scores.size(); ++b) {
    if (eligible_candidate(static_cast<TokenId>(b), table)) order.push_back(static_cast<TokenId>(b));
  }
  const std::size_t prefix = std::min(order.size(), config.candidate_prefix(table.rows()));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(prefix), order.end(),
                    [&](TokenId a, TokenId b) {
                      if (scores[a] != scores[b]) return scores[a] < scores[b];
                      return a < b;
                    });
  order.resize(prefix);
  std::vector<TokenId> out;
  const bool current_has_direction = table.norm(current) > 0.0;
  for (TokenId b : order) {
    if (b == current) continue;
    if (!current_has_direction) continue;
    if (!similarity_ok(cosine_similarity(current, b, table), config)) continue;
    out.push_back(b);
  }
  return out;
}

}  // namespace

template <class T>
std::vector<TokenId> candidate_replacements(const TextModel<T>& model, const EmbeddingTable& table,
                                            std::span<const TokenId> tokens, std::size_t label,
                                            std::size_t position, const OutFlipConfig& config) {
  config.validate();
  if (position >= tokens.size()) throw Error("candidate_replacements: position out of range");
  const auto grad = embedding_input_gradient(model, tokens, label);
  return candidates_from_grad(model, table, tokens, position, grad, config);
}

template <class T>
std::vector<OodSample> generate_ood(const TextModel<T>& model, const EmbeddingTable& table,
                                    std::span<const LabeledExample> train, std::size_t num_in_domain,
                                    const OutFlipConfig& config, std::size_t iteration,
                                    TokenSequenceSet* exclude, GenerationStats* stats, const Vocab* vocab) {
  config.validate();
  TokenSequenceSet local;
  TokenSequenceSet& seen = exclude ? *exclude : local;
  for (const auto& ex : train) seen.insert(ex.tokens);

  GenerationStats st;
  const auto extraction = extract_cct(model, train, num_in_domain, config.cct_size);
  std::vector<OodSample> out;
  for (std::size_t e = 0; e < train.size(); ++e) {
    const auto& ex = train[e];
    const auto& important = extraction.per_example[e];
    if (!important) continue;
    ++st.examples;
    const auto label = static_cast<std::size_t>(ex.label);
    if (!extraction.cct.contains(label, important->word)) continue;
    ++st.cct_hits;

    const auto grad = embedding_input_gradient(model, std::span<const TokenId>(ex.tokens), label);
    const auto candidates = candidates_from_grad(model, table, ex.tokens, important->position, grad, config);
    if (candidates.empty()) {
      ++st.no_candidate;
      continue;
    }
    Rng rng(derive_seed(config.seed, iteration, static_cast<std::uint64_t>(ex.example_id)));
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const TokenId replacement = candidates[pick(rng)];

    std::vector<TokenId> flipped = ex.tokens;
    flipped[important->position] = replacement;
    const std::size_t predicted = model.predict(flipped);
    if (predicted != label) {
      ++st.classification_changed;
      continue;
    }
    if (!seen.insert(flipped)) {
      ++st.duplicates;
      continue;
    }
    OodSample s;
    s.tokens = std::move(flipped);
    if (vocab && ex.text.size() == ex.tokens.size()) {
      s.text = ex.text;
      s.text[important->position] = vocab->word(replacement);
    }
    s.source_id = ex.example_id;
    s.position = important->position;
    s.original = important->word;
    s.replacement = replacement;
    s.iteration = iteration;
    s.source_label = label;
    s.predicted_label = predicted;
    out.push_back(std::move(s));
  }
  st.emitted = out.size();
  if (stats) *stats = st;
  return out;
}

template <class T>
std::optional<HotFlipResult> hotflip_attack(const TextModel<T>& model, const EmbeddingTable& table,
                                            std::span<const TokenId> tokens, std::size_t label, double t_sim) {
  const auto grad = embedding_input_gradient(model, tokens, label);
  std::optional<HotFlipResult> best;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId current = tokens[i];
    if (Vocab::is_reserved(current) || table.norm(current) == 0.0) continue;
    const auto scores = flip_score_row(model, grad, i);
    for (std::size_t b = 0; b < scores.size(); ++b) {
      const auto cand = static_cast<TokenId>(b);
      if (cand == current || !eligible_candidate(cand, table)) continue;
      if (cosine_similarity(current, cand, table) < t_sim) continue;
      const double score = static_cast<double>(scores[b]) - static_cast<double>(scores[current]);
      if (!best || score > best->score) {
        best = HotFlipResult{};
        best->position = i;
        best->original = current;
        best->replacement = cand;
        best->score = score;
      }
    }
  }
  if (!best) return std::nullopt;
  best->tokens.assign(tokens.begin(), tokens.end());
  best->tokens[best->position] = best->replacement;
  best->prediction_before = model.predict(tokens);
  best->prediction_after = model.predict(best->tokens);
  best->prediction_changed = best->prediction_before != best->prediction_after;
  return best;
}

#define OUTFLIP_INSTANTIATE(T)                                                                           \
  template double word_importance<T>(const TextModel<T>&, std::span<const TokenId>, std::size_t,         \
                                     std::size_t);                                                       \
  template ImportantWord most_important_word<T>(const TextModel<T>&, std::span<const TokenId>,           \
                                                std::size_t);                                            \
  template CctExtraction extract_cct<T>(const TextModel<T>&, std::span<const LabeledExample>,            \
                                        std::size_t, std::size_t);                                       \
  template std::vector<T> flip_score_row<T>(const TextModel<T>&, const Matrix<T>&, std::size_t);         \
  template std::vector<TokenId> candidate_replacements<T>(const TextModel<T>&, const EmbeddingTable&,    \
                                                          std::span<const TokenId>, std::size_t,         \
                                                          std::size_t, const OutFlipConfig&);            \
  template std::vector<OodSample> generate_ood<T>(const TextModel<T>&, const EmbeddingTable&,            \
                                                  std::span<const LabeledExample>, std::size_t,          \
                                                  const OutFlipConfig&, std::size_t, TokenSequenceSet*,  \
                                                  GenerationStats*, const Vocab*);                       \
  template std::optional<HotFlipResult> hotflip_attack<T>(const TextModel<T>&, const EmbeddingTable&,   \
                                                          std::span<const TokenId>, std::size_t, double);

OUTFLIP_INSTANTIATE(float)
OUTFLIP_INSTANTIATE(double)

#undef OUTFLIP_INSTANTIATE

}  // namespace outflip
