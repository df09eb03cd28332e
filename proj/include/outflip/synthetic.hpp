#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "outflip/corpus.hpp"

// Generated intent corpora with matching word vectors, for runs where no
// real dataset or pretrained embedding file is at hand.
//
// Every sentence carries one keyword of its intent among shared filler and
// entity words. Keyword vectors of one intent cluster around an intent
// direction; filler and entity vectors are isotropic noise.
namespace outflip::synthetic {

struct Spec {
  std::size_t num_intents = 8;
  std::vector<double> intent_weights;  // relative train share per intent; empty = uniform
  std::size_t train_size = 960;
  std::size_t dev_size = 160;
  std::size_t test_size = 320;
  std::size_t min_per_intent = 3;      // floor on each split's per-intent count
  std::size_t keywords_per_intent = 3;
  std::size_t filler_words = 40;
  std::size_t entity_words = 900;
  std::size_t min_length = 4;          // sentence length range, keyword included
  std::size_t max_length = 9;
  std::size_t dim = 50;
  double keyword_spread = 0.35;        // noise norm relative to the intent direction
  std::uint64_t seed = 11;
};

struct Corpus {
  Dataset dataset;                               // text and labels, not yet encoded
  std::vector<std::vector<std::string>> keywords;  // per intent
  std::string embeddings;                        // "word v_1 ... v_d" lines
};

Corpus generate(const Spec& spec);

// 4 intents x 30 training sentences, one dominant keyword per intent.
Spec planted_keyword_spec();
// 8 balanced intents, 1,200 training sentences each.
Spec snips_like_spec();
// 18 intents, one holding about 70% of 4,478 training sentences; 500 dev,
// 893 test.
Spec atis_like_spec();

}  // namespace outflip::synthetic
