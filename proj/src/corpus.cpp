#include "outflip/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace outflip {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
  add("<mask>");
}

Vocab Vocab::from_words(std::span<const std::string> words) {
  Vocab v;
  for (const auto& w : words) {
    if (v.index_.count(w)) throw Error("duplicate or reserved vocabulary word: " + w);
    v.add(w);
  }
  return v;
}

void Vocab::add(std::string word) {
  const auto id = static_cast<TokenId>(words_.size());
  index_.emplace(word, id);
  words_.push_back(std::move(word));
}

std::optional<TokenId> Vocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end() || is_reserved(it->second)) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view word) const { return find(word).value_or(kUnk); }

std::vector<TokenId> Vocab::encode(std::span<const std::string> text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (const auto& w : text) out.push_back(id(w));
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& w : words_) {
    h = fnv1a(w, h);
    h = fnv1a("\n", h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Dataset helpers

std::optional<int> Dataset::label_id(std::string_view name) const {
  auto it = std::find(labels.begin(), labels.end(), name);
  if (it == labels.end()) return std::nullopt;
  return static_cast<int>(it - labels.begin());
}

bool KnownIntentSelection::is_known(int label) const {
  return std::binary_search(known_labels.begin(), known_labels.end(), label);
}

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "jsonl") return DatasetFormat::jsonl;
  if (name == "tsv") return DatasetFormat::tsv;
  if (name == "atis" || name == "atis-layout") return DatasetFormat::atis;
  if (name == "snips" || name == "snips-layout") return DatasetFormat::snips;
  throw Error("unknown dataset format: " + std::string(name));
}

std::string_view to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::jsonl: return "jsonl";
    case DatasetFormat::tsv: return "tsv";
    case DatasetFormat::atis: return "atis";
    case DatasetFormat::snips: return "snips";
  }
  return "?";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

struct RawRecord {
  std::string text;
  std::string label;
  std::size_t line = 0;
};

using RawSplit = std::vector<RawRecord>;

std::string first_label(const std::string& label, const std::string& where) {
  // ATIS marks multi-intent utterances as "a#b"; the first intent wins.
  auto pos = label.find('#');
  if (pos == std::string::npos) return label;
  log::warn(where + ": multi-label record '" + label + "', keeping '" + label.substr(0, pos) + "'");
  return label.substr(0, pos);
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::ifstream open_or_throw(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

RawSplit read_jsonl(const fs::path& path) {
  auto in = open_or_throw(path);
  RawSplit out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(where + ": malformed JSON record (" + e.what() + ")");
    }
    if (!rec.is_object() || !rec.contains("text") || !rec.contains("label") ||
        !rec["text"].is_string() || !rec["label"].is_string()) {
      throw Error(where + ": record needs string fields \"text\" and \"label\"");
    }
    out.push_back({rec["text"].get<std::string>(), first_label(rec["label"].get<std::string>(), where),
                   lineno});
  }
  return out;
}

RawSplit read_tsv(const fs::path& path) {
  auto in = open_or_throw(path);
  RawSplit out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(where + ": expected 'label<TAB>text'");
    std::string label = trim(line.substr(0, tab));
    if (label.empty()) throw Error(where + ": empty label");
    out.push_back({line.substr(tab + 1), first_label(label, where), lineno});
  }
  return out;
}

std::optional<fs::path> first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    if (fs::exists(dir / n)) return dir / n;
  }
  return std::nullopt;
}

RawSplit read_atis_split(const fs::path& dir) {
  auto text_in = open_or_throw(dir / "seq.in");
  auto label_in = open_or_throw(dir / "label");
  RawSplit out;
  std::string text, label;
  std::size_t lineno = 0;
  while (std::getline(text_in, text)) {
    ++lineno;
    if (!std::getline(label_in, label)) {
      throw Error((dir / "label").string() + ":" + std::to_string(lineno) + ": missing label line");
    }
    const std::string where = (dir / "label").string() + ":" + std::to_string(lineno);
    label = trim(label);
    if (label.empty()) throw Error(where + ": empty label");
    out.push_back({text, first_label(label, where), lineno});
  }
  if (std::getline(label_in, label) && !trim(label).empty()) {
    throw Error((dir / "label").string() + ": more labels than sentences");
  }
  return out;
}

RawSplit read_snips_json(const fs::path& path) {
  auto in = open_or_throw(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  RawSplit out;
  if (!doc.is_object()) throw Error(path.string() + ": expected an object keyed by intent");
  for (const auto& [intent, items] : doc.items()) {
    std::size_t idx = 0;
    for (const auto& item : items) {
      ++idx;
      std::string text;
      for (const auto& chunk : item.at("data")) text += chunk.at("text").get<std::string>();
      out.push_back({text, intent, idx});
    }
  }
  return out;
}

Dataset assemble(std::vector<RawSplit> splits, const std::string& source) {
  std::set<std::string> names;
  for (const auto& s : splits)
    for (const auto& r : s) names.insert(r.label);
  Dataset ds;
  ds.labels.assign(names.begin(), names.end());
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < ds.labels.size(); ++i) ids[ds.labels[i]] = static_cast<int>(i);

  std::int64_t next_id = 0;
  std::vector<LabeledExample>* dests[3] = {&ds.train, &ds.dev, &ds.test};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    for (auto& r : splits[s]) {
      LabeledExample ex;
      ex.text = tokenize(r.text);
      if (ex.text.empty()) {
        throw Error(source + ": empty sentence at record " + std::to_string(r.line));
      }
      ex.label = ids.at(r.label);
      ex.example_id = next_id++;
      dests[s]->push_back(std::move(ex));
    }
  }
  if (ds.train.empty()) throw Error(source + ": dataset has no training examples");
  log::info(source + ": " + std::to_string(ds.train.size()) + " train / " +
            std::to_string(ds.dev.size()) + " dev / " + std::to_string(ds.test.size()) + " test, " +
            std::to_string(ds.labels.size()) + " classes");
  return ds;
}

Dataset load_flat(const fs::path& path, DatasetFormat format) {
  auto reader = format == DatasetFormat::jsonl ? read_jsonl : read_tsv;
  const char* ext = format == DatasetFormat::jsonl ? ".jsonl" : ".tsv";
  if (!fs::is_directory(path)) {
    if (!fs::exists(path)) throw Error("dataset not found: " + path.string());
    return assemble({reader(path), {}, {}}, path.string());
  }
  auto named = [&](std::initializer_list<std::string> stems) -> std::optional<fs::path> {
    for (const auto& s : stems) {
      if (fs::exists(path / (s + ext))) return path / (s + ext);
    }
    return std::nullopt;
  };
  auto train = named({"train"});
  if (!train) throw Error(path.string() + ": no train" + ext);
  auto dev = named({"dev", "valid", "validation"});
  auto test = named({"test"});
  return assemble({reader(*train), dev ? reader(*dev) : RawSplit{}, test ? reader(*test) : RawSplit{}},
                  path.string());
}

Dataset load_atis(const fs::path& dir) {
  if (!fs::is_directory(dir / "train")) throw Error(dir.string() + ": expected train/ subdirectory");
  RawSplit dev, test;
  if (auto d = first_existing(dir, {"valid", "dev"})) dev = read_atis_split(*d);
  if (fs::is_directory(dir / "test")) test = read_atis_split(dir / "test");
  return assemble({read_atis_split(dir / "train"), std::move(dev), std::move(test)}, dir.string());
}

Dataset load_snips(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + ": expected a directory of intent folders");
  std::vector<fs::path> intent_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) intent_dirs.push_back(e.path());
  }
  std::sort(intent_dirs.begin(), intent_dirs.end());
  RawSplit train, dev;
  for (const auto& idir : intent_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(idir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::optional<fs::path> train_file, dev_file;
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      if (f.extension() != ".json") continue;
      if (name.rfind("train_", 0) == 0) {
        if (!train_file || name.find("_full") != std::string::npos) train_file = f;
      } else if (name.rfind("validate_", 0) == 0) {
        dev_file = f;
      }
    }
    if (!train_file) continue;
    auto t = read_snips_json(*train_file);
    train.insert(train.end(), t.begin(), t.end());
    if (dev_file) {
      auto d = read_snips_json(*dev_file);
      dev.insert(dev.end(), d.begin(), d.end());
    }
  }
  return assemble({std::move(train), std::move(dev), {}}, dir.string());
}

}  // namespace

Dataset load_dataset(const fs::path& path, DatasetFormat format) {
  switch (format) {
    case DatasetFormat::jsonl:
    case DatasetFormat::tsv: return load_flat(path, format);
    case DatasetFormat::atis: return load_atis(path);
    case DatasetFormat::snips: return load_snips(path);
  }
  throw Error("unreachable dataset format");
}

void write_jsonl(const fs::path& path, std::span<const LabeledExample> examples,
                 std::span<const std::string> labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& ex : examples) {
    std::string text;
    for (const auto& w : ex.text) {
      if (!text.empty()) text += ' ';
      text += w;
    }
    json rec{{"text", text},
             {"label", ex.label == kOodLabel ? std::string("<ood>") : labels[ex.label]}};
    out << rec.dump() << '\n';
  }
}

std::vector<std::size_t> label_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_labels) {
  std::vector<std::size_t> counts(num_labels, 0);
  for (const auto& ex : examples) {
    if (ex.label >= 0 && static_cast<std::size_t>(ex.label) < num_labels) ++counts[ex.label];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Splitting and selection

Dataset make_test_split(const Dataset& dataset, double ratio, std::uint64_t seed) {
  if (!dataset.test.empty()) throw Error("make_test_split: dataset already has a test split");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("make_test_split: ratio must lie in (0, 1)");

  std::vector<std::vector<std::size_t>> by_label(dataset.num_labels());
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    by_label[dataset.train[i].label].push_back(i);
  }
  std::vector<bool> to_test(dataset.train.size(), false);
  for (std::size_t y = 0; y < by_label.size(); ++y) {
    auto& idx = by_label[y];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw Error("make_test_split: label '" + dataset.labels[y] + "' has fewer than 2 examples");
    }
    Rng rng(derive_seed(seed, y));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size()) + 0.5));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) to_test[idx[k]] = true;
  }
  Dataset out;
  out.labels = dataset.labels;
  out.dev = dataset.dev;
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    (to_test[i] ? out.test : out.train).push_back(dataset.train[i]);
  }
  return out;
}

std::size_t known_intent_count(double fraction, std::size_t total) {
  auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 0.5));
  return std::clamp<std::size_t>(n, 1, total);
}

KnownIntentSelection select_known_intents(const Dataset& dataset, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error("select_known_intents: fraction must lie in (0, 1]");
  }
  if (dataset.num_labels() == 0) throw Error("select_known_intents: dataset has no labels");
  const auto counts = label_counts(dataset.train, dataset.num_labels());
  const std::size_t want = known_intent_count(fraction, dataset.num_labels());

  std::vector<int> remaining(dataset.num_labels());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<int> chosen;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (chosen.size() < want) {
    double total = 0.0;
    for (int y : remaining) total += static_cast<double>(counts[y]);
    std::size_t pick = remaining.size() - 1;
    if (total > 0.0) {
      const double r = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < remaining.size(); ++i) {
        acc += static_cast<double>(counts[remaining[i]]);
        if (r < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(remaining.size()));
      pick = std::min(pick, remaining.size() - 1);
    }
    chosen.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(chosen.begin(), chosen.end());

  KnownIntentSelection sel;
  sel.seed = seed;
  sel.fraction = fraction;
  sel.known_labels = chosen;
  for (const auto& ex : dataset.train)
    if (sel.is_known(ex.label)) sel.train.push_back(ex);
  for (const auto& ex : dataset.dev)
    if (sel.is_known(ex.label)) sel.dev.push_back(ex);
  sel.test = dataset.test;
  return sel;
}

Vocab build_vocab(std::span<const LabeledExample> train) {
  if (train.empty()) throw Error("build_vocab: empty training split");
  std::unordered_map<std::string, std::size_t> freq;
  const Vocab reserved;
  for (const auto& ex : train)
    for (const auto& w : ex.text)
      if (!reserved.index_.count(w)) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(items.size());
  for (auto& [w, c] : items) words.push_back(w);
  return Vocab::from_words(words);
}

void encode(Dataset& dataset, const Vocab& vocab) {
  for (auto* split : {&dataset.train, &dataset.dev, &dataset.test}) {
    for (auto& ex : *split) ex.tokens = vocab.encode(ex.text);
  }
}

}  // namespace outflip
