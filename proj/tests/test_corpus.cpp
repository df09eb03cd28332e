#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "outflip/corpus.hpp"
#include "support.hpp"

using namespace outflip;

namespace {

Dataset labeled(const std::vector<std::size_t>& per_label) {
  Dataset ds;
  std::int64_t id = 0;
  for (std::size_t y = 0; y < per_label.size(); ++y) {
    ds.labels.push_back("l" + std::to_string(y));
    for (std::size_t i = 0; i < per_label[y]; ++i) {
      LabeledExample ex;
      ex.text = {"w" + std::to_string(i % 7), "x"};
      ex.label = static_cast<int>(y);
      ex.example_id = id++;
      ds.train.push_back(ex);
      if (i % 5 == 0) {
        ex.example_id = id++;
        ds.dev.push_back(ex);
      }
    }
  }
  return ds;
}

// Exact inclusion probabilities of successive weighted draws without
// replacement, by enumerating every draw order.
void inclusion(const std::vector<double>& w, std::vector<bool>& taken, std::size_t left, double p,
               std::vector<double>& out) {
  if (left == 0) return;
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!taken[i]) total += w[i];
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (taken[i]) continue;
    const double q = p * w[i] / total;
    out[i] += q;
    taken[i] = true;
    inclusion(w, taken, left - 1, q, out);
    taken[i] = false;
  }
}

std::vector<double> inclusion_oracle(const std::vector<double>& w, std::size_t k) {
  std::vector<double> out(w.size(), 0.0);
  std::vector<bool> taken(w.size(), false);
  inclusion(w, taken, k, 1.0, out);
  return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on whitespace") {
  CHECK(tokenize("  Show me\tFlights\n to DENVER ") ==
        std::vector<std::string>{"show", "me", "flights", "to", "denver"});
  CHECK(tokenize(" \t ").empty());
}

TEST_CASE("load_dataset") {
  support::TempDir dir("corpus");

  SUBCASE("two-line jsonl file") {
    const auto p = dir.write("tiny.jsonl",
                             "{\"text\": \"Book a table\", \"label\": \"book\"}\n"
                             "\n"
                             "{\"text\": \"reserve a seat\", \"label\": \"book\"}\n");
    const auto ds = load_dataset(p, DatasetFormat::jsonl);
    CHECK(ds.train.size() == 2);
    CHECK(ds.num_labels() == 1);
    CHECK(ds.train[0].text == std::vector<std::string>{"book", "a", "table"});
    CHECK(ds.dev.empty());
    CHECK(ds.test.empty());
  }
  SUBCASE("jsonl directory with three splits and unique ids") {
    dir.write("d/train.jsonl", "{\"text\":\"a b\",\"label\":\"x\"}\n{\"text\":\"c\",\"label\":\"y\"}\n");
    dir.write("d/dev.jsonl", "{\"text\":\"a\",\"label\":\"x\"}\n");
    dir.write("d/test.jsonl", "{\"text\":\"d\",\"label\":\"z\"}\n");
    const auto ds = load_dataset(dir.path() / "d", DatasetFormat::jsonl);
    CHECK(ds.labels == std::vector<std::string>{"x", "y", "z"});
    CHECK(ds.train.size() == 2);
    CHECK(ds.dev.size() == 1);
    CHECK(ds.test.size() == 1);
    CHECK(ds.test[0].label == 2);
    std::set<std::int64_t> ids;
    for (const auto* s : {&ds.train, &ds.dev, &ds.test})
      for (const auto& ex : *s) ids.insert(ex.example_id);
    CHECK(ids.size() == 4);
  }
  SUBCASE("tsv") {
    const auto p = dir.write("t.tsv", "greet\tHello there\nbye\tsee you\n");
    const auto ds = load_dataset(p, DatasetFormat::tsv);
    CHECK(ds.train.size() == 2);
    CHECK(ds.labels == std::vector<std::string>{"bye", "greet"});
    CHECK(ds.train[0].label == 1);
  }
  SUBCASE("atis layout keeps the first of several labels") {
    dir.write("atis/train/seq.in", "show flights to denver\nwhat fare\n");
    dir.write("atis/train/label", "atis_flight\natis_airfare#atis_flight\n");
    dir.write("atis/valid/seq.in", "flights\n");
    dir.write("atis/valid/label", "atis_flight\n");
    log::set_level(log::Level::quiet);
    const auto ds = load_dataset(dir.path() / "atis", DatasetFormat::atis);
    log::set_level(log::Level::warn);
    CHECK(ds.labels == std::vector<std::string>{"atis_airfare", "atis_flight"});
    CHECK(ds.train.size() == 2);
    CHECK(ds.train[1].label == 0);
    CHECK(ds.dev.size() == 1);
  }
  SUBCASE("snips layout") {
    dir.write("snips/PlayMusic/train_PlayMusic_full.json",
              R"({"PlayMusic": [{"data": [{"text": "play "}, {"text": "queen", "entity": "artist"}]}]})");
    dir.write("snips/PlayMusic/validate_PlayMusic.json",
              R"({"PlayMusic": [{"data": [{"text": "play jazz"}]}]})");
    dir.write("snips/GetWeather/train_GetWeather_full.json",
              R"({"GetWeather": [{"data": [{"text": "rain "}, {"text": "today"}]}]})");
    const auto ds = load_dataset(dir.path() / "snips", DatasetFormat::snips);
    CHECK(ds.labels == std::vector<std::string>{"GetWeather", "PlayMusic"});
    CHECK(ds.train.size() == 2);
    CHECK(ds.dev.size() == 1);
    const auto& play = ds.train[0].label == 1 ? ds.train[0] : ds.train[1];
    CHECK(play.text == std::vector<std::string>{"play", "queen"});
  }
  SUBCASE("malformed record names its line") {
    const auto p = dir.write("bad.jsonl", "{\"text\":\"a\",\"label\":\"x\"}\n{\"text\": 3}\n");
    try {
      load_dataset(p, DatasetFormat::jsonl);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
    }
    const auto q = dir.write("bad.tsv", "x\ta\nno tab here\n");
    try {
      load_dataset(q, DatasetFormat::tsv);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("bad.tsv:2") != std::string::npos);
    }
  }
  SUBCASE("empty or missing dataset") {
    CHECK_THROWS_AS(load_dataset(dir.write("empty.jsonl", "\n\n"), DatasetFormat::jsonl), Error);
    CHECK_THROWS_AS(load_dataset(dir.path() / "nope.jsonl", DatasetFormat::jsonl), Error);
  }
  SUBCASE("write_jsonl round-trips") {
    const auto p = dir.write("src.jsonl", "{\"text\":\"a b\",\"label\":\"x\"}\n{\"text\":\"c\",\"label\":\"y\"}\n");
    const auto ds = load_dataset(p, DatasetFormat::jsonl);
    write_jsonl(dir.path() / "out.jsonl", ds.train, ds.labels);
    const auto back = load_dataset(dir.path() / "out.jsonl", DatasetFormat::jsonl);
    REQUIRE(back.train.size() == 2);
    CHECK(back.train[0].text == ds.train[0].text);
    CHECK(back.labels == ds.labels);
  }
  CHECK(parse_dataset_format(to_string(DatasetFormat::snips)) == DatasetFormat::snips);
  CHECK_THROWS_AS(parse_dataset_format("csv"), Error);
}

TEST_CASE("make_test_split") {
  SUBCASE("ten examples, ratio 0.3") {
    const auto ds = labeled({10});
    const auto out = make_test_split(Dataset{ds.train, ds.dev, {}, ds.labels}, 0.3, 9);
    CHECK(out.test.size() == 3);
    CHECK(out.train.size() == 7);
    std::set<std::int64_t> train_ids;
    for (const auto& ex : out.train) train_ids.insert(ex.example_id);
    for (const auto& ex : out.test) CHECK(train_ids.count(ex.example_id) == 0);
    CHECK(out.dev.size() == ds.dev.size());
  }
  SUBCASE("stratified per label and deterministic") {
    auto ds = labeled({20, 7, 3});
    const auto a = make_test_split(ds, 0.3, 4);
    const auto b = make_test_split(ds, 0.3, 4);
    const auto counts = label_counts(a.test, 3);
    CHECK(counts == std::vector<std::size_t>{6, 2, 1});
    REQUIRE(a.test.size() == b.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].example_id == b.test[i].example_id);
    const auto c = make_test_split(ds, 0.3, 5);
    bool differs = false;
    for (std::size_t i = 0; i < a.test.size(); ++i) differs |= a.test[i].example_id != c.test[i].example_id;
    CHECK(differs);
  }
  SUBCASE("errors") {
    auto ds = labeled({5, 1});
    try {
      make_test_split(ds, 0.3, 1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("'l1'") != std::string::npos);
    }
    CHECK_THROWS_AS(make_test_split(labeled({5}), 0.0, 1), Error);
    CHECK_THROWS_AS(make_test_split(labeled({5}), 1.0, 1), Error);
    auto with_test = labeled({5});
    with_test.test.push_back(with_test.train[0]);
    CHECK_THROWS_AS(make_test_split(with_test, 0.3, 1), Error);
  }
}

TEST_CASE("known intent count rounds half up") {
  CHECK(known_intent_count(0.25, 18) == 5);
  CHECK(known_intent_count(0.25, 7) == 2);
  CHECK(known_intent_count(0.5, 7) == 4);
  CHECK(known_intent_count(0.75, 7) == 5);
  CHECK(known_intent_count(0.75, 18) == 14);
  CHECK(known_intent_count(0.01, 7) == 1);
  CHECK(known_intent_count(1.0, 7) == 7);
}

TEST_CASE("select_known_intents") {
  SUBCASE("full fraction keeps everything") {
    const auto ds = labeled({4, 6, 2});
    const auto sel = select_known_intents(ds, 1.0, 3);
    CHECK(sel.known_labels == std::vector<int>{0, 1, 2});
    CHECK(sel.train.size() == ds.train.size());
    CHECK(sel.dev.size() == ds.dev.size());
  }
  SUBCASE("filters train and dev but not test") {
    auto ds = labeled({10, 10, 10, 10});
    ds.test = ds.dev;
    const auto sel = select_known_intents(ds, 0.5, 8);
    CHECK(sel.known_labels.size() == 2);
    CHECK(std::is_sorted(sel.known_labels.begin(), sel.known_labels.end()));
    for (const auto& ex : sel.train) CHECK(sel.is_known(ex.label));
    for (const auto& ex : sel.dev) CHECK(sel.is_known(ex.label));
    CHECK(sel.test.size() == ds.test.size());
    CHECK(select_known_intents(ds, 0.5, 8).known_labels == sel.known_labels);
  }
  SUBCASE("two equal labels are each picked about half the time") {
    const auto ds = labeled({10, 10});
    std::size_t first = 0;
    const std::size_t trials = 10000;
    for (std::size_t s = 0; s < trials; ++s) first += select_known_intents(ds, 0.5, s).known_labels[0] == 0;
    const double rate = static_cast<double>(first) / trials;
    // 4 standard errors of a fair coin over 10k draws.
    CHECK(std::abs(rate - 0.5) < 0.02);
  }
  SUBCASE("inclusion frequencies follow weighted sampling without replacement") {
    const std::vector<std::size_t> sizes{40, 5, 20, 1, 10};
    const auto ds = labeled(sizes);
    const auto expected = inclusion_oracle({40, 5, 20, 1, 10}, 2);
    std::vector<double> seen(sizes.size(), 0.0);
    const std::size_t trials = 4000;
    for (std::size_t s = 0; s < trials; ++s)
      for (int y : select_known_intents(ds, 0.4, s).known_labels) seen[y] += 1.0 / trials;
    for (std::size_t y = 0; y < sizes.size(); ++y) {
      CAPTURE(y);
      CHECK(std::abs(seen[y] - expected[y]) < 0.03);
    }
    std::vector<double> counts(sizes.begin(), sizes.end());
    CHECK(spearman(seen, counts) > 0.9);
  }
  SUBCASE("dominant class of an atis-shaped label set") {
    std::vector<std::size_t> sizes{3300};
    for (std::size_t y = 1; y < 18; ++y) sizes.push_back(std::max<std::size_t>(2, 400 >> (y / 2)));
    const auto ds = labeled(sizes);
    std::vector<double> w(sizes.begin(), sizes.end());
    std::size_t hit = 0;
    const std::size_t trials = 1000;
    for (std::size_t s = 0; s < trials; ++s) {
      const auto sel = select_known_intents(ds, 0.25, s);
      CHECK(sel.known_labels.size() == 5);
      hit += sel.is_known(0);
    }
    // First-draw probability alone already exceeds the share of the class.
    const double share = w[0] / std::accumulate(w.begin(), w.end(), 0.0);
    CHECK(static_cast<double>(hit) / trials > share);
    CHECK(static_cast<double>(hit) / trials > 0.7);
  }
  SUBCASE("bad fraction") {
    CHECK_THROWS_AS(select_known_intents(labeled({3}), 0.0, 1), Error);
    CHECK_THROWS_AS(select_known_intents(labeled({3}), 1.5, 1), Error);
  }
}

TEST_CASE("build_vocab orders by frequency then spelling") {
  LabeledExample ex;
  ex.text = {"b", "a", "c", "a", "b", "d"};
  std::vector<LabeledExample> train{ex};
  const auto v = build_vocab(train);
  REQUIRE(v.size() == 7);
  CHECK(v.word(Vocab::kPad) == "<pad>");
  CHECK(v.word(3) == "a");
  CHECK(v.word(4) == "b");
  CHECK(v.word(5) == "c");
  CHECK(v.word(6) == "d");
  CHECK(build_vocab(train).hash() == v.hash());
  CHECK(v.id("zzz") == Vocab::kUnk);
  CHECK_FALSE(v.find("<mask>").has_value());
  CHECK(v.encode(std::vector<std::string>{"d", "q"}) == std::vector<TokenId>{6, Vocab::kUnk});

  LabeledExample aba;
  aba.text = {"a", "b", "a"};
  const auto v2 = build_vocab(std::vector<LabeledExample>{aba});
  CHECK(v2.words() == std::vector<std::string>{"<pad>", "<unk>", "<mask>", "a", "b"});
  CHECK(Vocab::from_words(std::vector<std::string>{"a", "b"}).hash() == v2.hash());
  CHECK_THROWS_AS(Vocab::from_words(std::vector<std::string>{"a", "a"}), Error);
  CHECK_THROWS_AS(build_vocab(std::vector<LabeledExample>{}), Error);
}

TEST_CASE("encode fills every split") {
  auto ds = labeled({3, 3});
  ds.test = ds.dev;
  ds.test[0].text = {"unseen"};
  const auto v = build_vocab(ds.train);
  encode(ds, v);
  for (const auto* s : {&ds.train, &ds.dev, &ds.test})
    for (const auto& ex : *s) CHECK(ex.tokens.size() == ex.text.size());
  CHECK(ds.test[0].tokens == std::vector<TokenId>{Vocab::kUnk});
}
