#include "outflip/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace outflip::synthetic {

namespace {

std::string numbered(const char* prefix, std::size_t i, std::size_t j = static_cast<std::size_t>(-1)) {
  char buf[48];
  if (j == static_cast<std::size_t>(-1)) {
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  } else {
    std::snprintf(buf, sizeof buf, "%s%02zu%c", prefix, i, static_cast<char>('a' + j % 26));
  }
  return buf;
}

std::vector<double> unit_gaussian(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

// Splits total over weights by largest remainder, each share at least floor_count.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights,
                                   std::size_t floor_count) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  const std::size_t k = weights.size();
  std::vector<std::size_t> out(k, floor_count);
  const std::size_t reserved = floor_count * k;
  if (total <= reserved) return out;
  const double rest = static_cast<double>(total - reserved);
  std::vector<double> frac(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double share = rest * weights[i] / sum;
    out[i] += static_cast<std::size_t>(std::floor(share));
    used += static_cast<std::size_t>(std::floor(share));
    frac[i] = share - std::floor(share);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; used < total - reserved; ++i, ++used) ++out[order[i % k]];
  return out;
}

}  // namespace

Corpus generate(const Spec& spec) {
  if (spec.num_intents == 0 || spec.keywords_per_intent == 0 || spec.filler_words == 0) {
    throw Error("synthetic: intents, keywords and filler words must be positive");
  }
  if (spec.min_length < 2 || spec.max_length < spec.min_length) throw Error("synthetic: bad length range");
  if (!spec.intent_weights.empty() && spec.intent_weights.size() != spec.num_intents) {
    throw Error("synthetic: intent_weights must have one entry per intent");
  }
  Rng rng(spec.seed);
  Corpus corpus;

  std::vector<std::string> filler(spec.filler_words), entities(spec.entity_words);
  for (std::size_t i = 0; i < filler.size(); ++i) filler[i] = numbered("fill", i);
  for (std::size_t i = 0; i < entities.size(); ++i) entities[i] = numbered("ent", i);
  corpus.keywords.resize(spec.num_intents);
  for (std::size_t y = 0; y < spec.num_intents; ++y) {
    for (std::size_t j = 0; j < spec.keywords_per_intent; ++j) corpus.keywords[y].push_back(numbered("key", y, j));
  }

  std::ostringstream emb;
  emb.precision(6);
  auto emit = [&](const std::string& word, const std::vector<double>& v) {
    emb << word;
    for (double x : v) emb << ' ' << x;
    emb << '\n';
  };
  for (std::size_t y = 0; y < spec.num_intents; ++y) {
    const auto center = unit_gaussian(spec.dim, rng);
    for (const auto& word : corpus.keywords[y]) {
      auto noise = unit_gaussian(spec.dim, rng);
      std::vector<double> v(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) v[d] = center[d] + spec.keyword_spread * noise[d];
      emit(word, v);
    }
  }
  for (const auto& word : filler) emit(word, unit_gaussian(spec.dim, rng));
  for (const auto& word : entities) emit(word, unit_gaussian(spec.dim, rng));
  corpus.embeddings = emb.str();

  auto& ds = corpus.dataset;
  for (std::size_t y = 0; y < spec.num_intents; ++y) ds.labels.push_back(numbered("intent", y));

  const std::vector<double> weights =
      spec.intent_weights.empty() ? std::vector<double>(spec.num_intents, 1.0) : spec.intent_weights;
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_entity(0, entities.empty() ? 0 : entities.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_keyword(0, spec.keywords_per_intent - 1);
  std::bernoulli_distribution entity_slot(entities.empty() ? 0.0 : 0.35);
  std::int64_t next_id = 0;

  auto sentence = [&](std::size_t y) {
    LabeledExample ex;
    const std::size_t n = length(rng);
    std::uniform_int_distribution<std::size_t> at(0, n - 1);
    const std::size_t key_pos = at(rng);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == key_pos) {
        ex.text.push_back(corpus.keywords[y][pick_keyword(rng)]);
      } else if (entity_slot(rng)) {
        ex.text.push_back(entities[pick_entity(rng)]);
      } else {
        ex.text.push_back(filler[pick_filler(rng)]);
      }
    }
    ex.label = static_cast<int>(y);
    ex.example_id = next_id++;
    return ex;
  };
  auto fill = [&](std::vector<LabeledExample>& split, std::size_t total) {
    const auto counts = apportion(total, weights, spec.min_per_intent);
    std::vector<int> order;
    for (std::size_t y = 0; y < counts.size(); ++y) order.insert(order.end(), counts[y], static_cast<int>(y));
    std::shuffle(order.begin(), order.end(), rng);
    for (int y : order) split.push_back(sentence(static_cast<std::size_t>(y)));
  };
  fill(ds.train, spec.train_size);
  fill(ds.dev, spec.dev_size);
  fill(ds.test, spec.test_size);
  return corpus;
}

Spec planted_keyword_spec() {
  Spec s;
  s.num_intents = 4;
  s.train_size = 120;
  s.dev_size = 40;
  s.test_size = 40;
  s.keywords_per_intent = 1;
  s.filler_words = 30;
  s.entity_words = 120;
  s.dim = 32;
  s.seed = 4;
  return s;
}

Spec snips_like_spec() {
  Spec s;
  s.train_size = 9600;
  s.dev_size = 700;
  s.test_size = 1600;
  return s;
}

Spec atis_like_spec() {
  Spec s;
  s.num_intents = 18;
  s.intent_weights.assign(18, 0.0);
  double tail = 0.0;
  for (std::size_t y = 1; y < 18; ++y) tail += std::pow(0.78, static_cast<double>(y));
  s.intent_weights[0] = 70.0;
  for (std::size_t y = 1; y < 18; ++y) s.intent_weights[y] = 30.0 * std::pow(0.78, static_cast<double>(y)) / tail;
  s.train_size = 4478;
  s.dev_size = 500;
  s.test_size = 893;
  s.min_per_intent = 2;
  s.keywords_per_intent = 3;
  s.filler_words = 60;
  s.entity_words = 880;
  s.min_length = 5;
  s.max_length = 12;
  s.seed = 18;
  return s;
}

}  // namespace outflip::synthetic
