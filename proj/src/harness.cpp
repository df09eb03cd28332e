#include "outflip/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "outflip/synthetic.hpp"

namespace outflip {

// ---------------------------------------------------------------------------
// Metrics

EvalReport macro_f1(std::span<const int> predictions, std::span<const int> truths, std::size_t num_known) {
  if (predictions.size() != truths.size()) throw Error("macro_f1: predictions and truths differ in length");
  const std::size_t classes = num_known + 1;
  auto bucket = [&](int v) {
    return v < 0 || static_cast<std::size_t>(v) >= num_known ? num_known : static_cast<std::size_t>(v);
  };
  std::vector<std::size_t> tp(classes, 0), predicted(classes, 0), actual(classes, 0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto p = bucket(predictions[i]);
    const auto t = bucket(truths[i]);
    ++predicted[p];
    ++actual[t];
    if (p == t) ++tp[p];
  }
  EvalReport r;
  r.count = truths.size();
  r.precision.resize(classes);
  r.recall.resize(classes);
  r.f1.resize(classes);
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double p = predicted[c] ? static_cast<double>(tp[c]) / static_cast<double>(predicted[c]) : 0.0;
    const double q = actual[c] ? static_cast<double>(tp[c]) / static_cast<double>(actual[c]) : 0.0;
    r.precision[c] = p;
    r.recall[c] = q;
    r.f1[c] = p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
    sum += r.f1[c];
  }
  // With no unknown intents in play there is no OOD class to average over.
  const bool ood_present = predicted[num_known] || actual[num_known];
  r.macro_f1 = sum / static_cast<double>(ood_present ? classes : num_known);
  return r;
}

EvalReport macro_f1(std::span<const Decision> decisions, std::span<const int> truths, std::size_t num_known) {
  std::vector<int> predictions(decisions.size());
  std::transform(decisions.begin(), decisions.end(), predictions.begin(),
                 [](const Decision& d) { return d.rejected() ? kOodLabel : d.label; });
  return macro_f1(predictions, truths, num_known);
}

Json to_json(const EvalReport& report) {
  Json j;
  j["macro_f1"] = report.macro_f1;
  j["count"] = report.count;
  j["f1"] = report.f1;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  return j;
}

// ---------------------------------------------------------------------------
// Data

namespace {

synthetic::Spec synthetic_spec(const std::string& name) {
  if (name == "snips") return synthetic::snips_like_spec();
  if (name == "atis") return synthetic::atis_like_spec();
  if (name == "planted") return synthetic::planted_keyword_spec();
  throw Error("unknown synthetic corpus '" + name + "' (expected snips, atis or planted)");
}

}  // namespace

PreparedData prepare_data(const DataSource& source) {
  PreparedData out;
  std::string embedding_text;
  if (!source.synthetic.empty()) {
    auto corpus = synthetic::generate(synthetic_spec(source.synthetic));
    out.dataset = std::move(corpus.dataset);
    embedding_text = std::move(corpus.embeddings);
    out.description = "synthetic:" + source.synthetic;
  } else {
    if (source.dataset.empty()) throw Error("no dataset given (set a dataset path or a synthetic corpus)");
    out.dataset = load_dataset(source.dataset, parse_dataset_format(source.format));
    out.description = source.dataset;
  }
  auto& ds = out.dataset;
  if (ds.test.empty()) ds = make_test_split(ds, source.test_ratio, source.split_seed);
  if (ds.dev.empty()) {
    Dataset tmp;
    tmp.labels = ds.labels;
    tmp.train = std::move(ds.train);
    tmp = make_test_split(tmp, source.dev_ratio, derive_seed(source.split_seed, 1));
    ds.train = std::move(tmp.train);
    ds.dev = std::move(tmp.test);
  }
  out.vocab = build_vocab(ds.train);
  encode(ds, out.vocab);
  if (!source.embeddings.empty()) {
    out.table = load_pretrained(source.embeddings, out.vocab, source.oov_seed);
  } else if (!embedding_text.empty()) {
    std::istringstream in(embedding_text);
    out.table = load_pretrained(in, out.vocab, source.oov_seed, out.description);
  }
  return out;
}

Episode make_episode(const Dataset& dataset, double fraction, std::uint64_t seed, std::size_t max_train_per_class) {
  auto selection = select_known_intents(dataset, fraction, seed);
  Episode ep;
  ep.seed = seed;
  ep.fraction = fraction;
  ep.known_labels = selection.known_labels;
  std::map<int, int> index;
  for (std::size_t i = 0; i < ep.known_labels.size(); ++i) index[ep.known_labels[i]] = static_cast<int>(i);
  auto remap = [&](std::vector<LabeledExample> split) {
    for (auto& ex : split) {
      auto it = index.find(ex.label);
      ex.label = it == index.end() ? kOodLabel : it->second;
    }
    return split;
  };
  ep.train = remap(std::move(selection.train));
  ep.dev = remap(std::move(selection.dev));
  ep.test = remap(std::move(selection.test));
  if (max_train_per_class > 0) {
    std::vector<std::vector<std::size_t>> by_class(ep.num_known());
    for (std::size_t i = 0; i < ep.train.size(); ++i) by_class[ep.train[i].label].push_back(i);
    Rng rng(derive_seed(seed, 0x5ab5));
    std::vector<bool> keep(ep.train.size(), false);
    for (auto& idx : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i = 0; i < std::min(idx.size(), max_train_per_class); ++i) keep[idx[i]] = true;
    }
    std::vector<LabeledExample> kept;
    for (std::size_t i = 0; i < ep.train.size(); ++i) {
      if (keep[i]) kept.push_back(std::move(ep.train[i]));
    }
    ep.train = std::move(kept);
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Iterative OOD population

OodSplit split_ood_for_training(std::span<const OodSample> samples, std::uint64_t seed, int ood_label,
                                std::int64_t first_id) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = samples.size();
  if (samples.size() < 10) {
    if (!samples.empty()) log::warn("fewer than 10 OOD samples; all go to the training split");
  } else {
    n_train = (9 * samples.size() + 5) / 10;
  }
  OodSplit out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& s = samples[order[k]];
    LabeledExample ex;
    ex.tokens = s.tokens;
    ex.text = s.text;
    ex.label = ood_label;
    ex.example_id = first_id + static_cast<std::int64_t>(order[k]);
    (k < n_train ? out.train : out.dev).push_back(std::move(ex));
  }
  return out;
}

namespace {

std::string model_hash(const Model& model) {
  std::uint64_t h = fnv1a("");
  for (const auto& p : model.params()) {
    const std::string_view bytes(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(float));
    h = fnv1a(bytes, h);
  }
  return hex64(h);
}

std::int64_t next_example_id(const Episode& ep) {
  std::int64_t m = -1;
  for (const auto* split : {&ep.train, &ep.dev, &ep.test}) {
    for (const auto& ex : *split) m = std::max(m, ex.example_id);
  }
  return m + 1;
}

Model train_model(const PipelineConfig& config, const EmbeddingTable& table, std::size_t classes,
                  std::uint64_t model_seed, std::uint64_t train_seed, std::span<const LabeledExample> train,
                  std::span<const LabeledExample> dev, TrainRecord* record) {
  CnnConfig mc = config.model;
  mc.vocab_size = table.rows();
  mc.embedding_dim = table.dim();
  mc.num_classes = classes;
  mc.loss = loss_for(config.detector.kind);
  mc.seed = model_seed;
  TrainConfig tc = config.train;
  tc.seed = train_seed;
  auto trained = train_classifier<float>(mc, table, train, dev, tc);
  if (record) *record = std::move(trained.record);
  return std::move(trained.model);
}

}  // namespace

EvalReport evaluate(const Model& model, const Episode& episode, const FittedDetector& detector) {
  std::vector<Decision> decisions;
  std::vector<int> truths;
  decisions.reserve(episode.test.size());
  const bool needs_features = detector.params.kind == DetectorKind::lmcl_lof;
  for (const auto& ex : episode.test) {
    const auto lf = model.logits(ex.tokens);
    const std::vector<double> logits(lf.begin(), lf.end());
    std::vector<double> features;
    if (needs_features) {
      const auto ff = model.features(ex.tokens);
      features.assign(ff.begin(), ff.end());
    }
    decisions.push_back(composed_decide(logits, features, detector));
    truths.push_back(ex.label);
  }
  return macro_f1(decisions, truths, episode.num_known());
}

EvalReport evaluate(const Model& model, const Episode& episode, const DetectorParams& params) {
  const auto detector = fit_detector(model, std::span<const LabeledExample>(episode.train), episode.num_known(), params);
  return evaluate(model, episode, detector);
}

IterateResult outflip_iterate(const Episode& episode, const EmbeddingTable& table, const PipelineConfig& config,
                              const Vocab* vocab, const std::filesystem::path& checkpoint_dir) {
  config.outflip.validate();
  const std::size_t k = episode.num_known();
  if (k == 0) throw Error("outflip_iterate: no known intents");
  IterateResult result;
  result.stop_reason = "completed";
  std::vector<LabeledExample> train = episode.train;
  std::vector<LabeledExample> dev = episode.dev;
  std::int64_t next_id = next_example_id(episode);
  TokenSequenceSet seen;
  DetectorParams argmax_params = config.detector;
  argmax_params.kind = DetectorKind::none;

  auto finish_state = [&](IterationState& st, const Model& model) {
    st.train_size = train.size();
    st.dev_size = dev.size();
    st.model_hash = model_hash(model);
    st.detector = evaluate(model, episode, config.detector);
    st.argmax = evaluate(model, episode, argmax_params);
    if (!checkpoint_dir.empty()) {
      std::filesystem::create_directories(checkpoint_dir);
      save_checkpoint(checkpoint_dir / ("iteration" + std::to_string(st.iteration) + ".ckpt"), model, vocab);
    }
    log::info("iteration " + std::to_string(st.iteration) + ": generated " + std::to_string(st.generated) +
              ", macro F1 " + std::to_string(st.detector.macro_f1));
  };

  IterationState base;
  Model model = train_model(config, table, k, derive_seed(config.model.seed, 0), derive_seed(config.train.seed, 0),
                            train, dev, &base.training);
  finish_state(base, model);
  result.states.push_back(std::move(base));

  for (std::size_t it = 1; it <= config.outflip.iterations; ++it) {
    IterationState st;
    st.iteration = it;
    auto samples = generate_ood(model, table, std::span<const LabeledExample>(train), k, config.outflip, it, &seen,
                                &st.generation, vocab);
    if (samples.empty()) {
      result.stop_reason = "no_samples";
      log::info("iteration " + std::to_string(it) + " generated no samples; stopping");
      break;
    }
    st.generated = samples.size();
    auto split = split_ood_for_training(samples, derive_seed(config.outflip.seed, it, 0x0dd), static_cast<int>(k),
                                        next_id);
    next_id += static_cast<std::int64_t>(samples.size());
    std::move(split.train.begin(), split.train.end(), std::back_inserter(train));
    std::move(split.dev.begin(), split.dev.end(), std::back_inserter(dev));
    std::move(samples.begin(), samples.end(), std::back_inserter(result.samples));
    const auto& prev = result.states.back();
    st.ood_train = prev.ood_train + (train.size() - prev.train_size);
    st.ood_dev = prev.ood_dev + (dev.size() - prev.dev_size);
    if (config.warm_start) {
      if (it == 1) model = model.with_extra_class();
      TrainConfig tc = config.train;
      tc.seed = derive_seed(config.train.seed, it);
      st.training = fit<float>(model, train, dev, tc);
    } else {
      model = train_model(config, table, k + 1, derive_seed(config.model.seed, it),
                          derive_seed(config.train.seed, it), train, dev, &st.training);
    }
    finish_state(st, model);
    result.states.push_back(std::move(st));
  }
  result.final_model.emplace(std::move(model));
  return result;
}

Json to_json(const IterationState& state) {
  Json j;
  j["iteration"] = state.iteration;
  j["train_size"] = state.train_size;
  j["dev_size"] = state.dev_size;
  j["generated"] = state.generated;
  j["ood_train"] = state.ood_train;
  j["ood_dev"] = state.ood_dev;
  j["generation"] = {{"examples", state.generation.examples},
                     {"cct_hits", state.generation.cct_hits},
                     {"no_candidate", state.generation.no_candidate},
                     {"classification_changed", state.generation.classification_changed},
                     {"duplicates", state.generation.duplicates},
                     {"emitted", state.generation.emitted}};
  j["training"] = {{"epochs", state.training.epochs.size()},
                   {"chosen_epoch", state.training.chosen_epoch},
                   {"best_dev_accuracy", state.training.best_dev_accuracy},
                   {"stop_reason", state.training.stop_reason}};
  j["model_hash"] = state.model_hash;
  j["detector"] = to_json(state.detector);
  j["argmax"] = to_json(state.argmax);
  return j;
}

// ---------------------------------------------------------------------------
// Benchmark, sweep, transfer

std::uint64_t selection_seed(std::uint64_t master_seed, std::size_t fraction_index, std::size_t selection) {
  return derive_seed(master_seed, fraction_index, selection);
}

std::string system_name(DetectorKind kind, bool with_outflip) {
  std::string base;
  switch (kind) {
    case DetectorKind::none: return "OutFlip";
    case DetectorKind::msp: base = "MSP"; break;
    case DetectorKind::doc: base = "DOC"; break;
    case DetectorKind::lmcl_lof: base = "LMCL+LOF"; break;
  }
  return with_outflip ? base + "+OutFlip" : base;
}

namespace {

void summarize(Cell& cell) {
  const double n = static_cast<double>(cell.per_selection.size());
  if (cell.per_selection.empty()) return;
  cell.mean = std::accumulate(cell.per_selection.begin(), cell.per_selection.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : cell.per_selection) ss += (v - cell.mean) * (v - cell.mean);
  cell.stddev = std::sqrt(ss / n);
}

// Cells in first-insertion order.
class CellTable {
 public:
  void add(double fraction, const std::string& system, double value) {
    for (auto& c : cells_) {
      if (c.fraction == fraction && c.system == system) {
        c.per_selection.push_back(value);
        return;
      }
    }
    cells_.push_back({fraction, system, {value}, 0.0, 0.0});
  }
  std::vector<Cell> finish() {
    for (auto& c : cells_) summarize(c);
    return std::move(cells_);
  }

 private:
  std::vector<Cell> cells_;
};

const EmbeddingTable& require_table(const PreparedData& data) {
  if (!data.table) throw Error("an embedding file is required");
  return *data.table;
}

// Per-selection seeds for every random component of a run.
PipelineConfig seeded(const PipelineConfig& pipeline, std::uint64_t sel_seed) {
  PipelineConfig pc = pipeline;
  pc.model.seed = derive_seed(pipeline.model.seed, sel_seed);
  pc.train.seed = derive_seed(pipeline.train.seed, sel_seed);
  pc.outflip.seed = derive_seed(pipeline.outflip.seed, sel_seed);
  return pc;
}

template <class Visit>
void for_each_run(const PreparedData& data, const PipelineConfig& pipeline, const BenchmarkConfig& bench,
                  Visit&& visit) {
  const auto& table = require_table(data);
  if (bench.fractions.empty() || bench.selections == 0 || bench.detectors.empty()) {
    throw Error("benchmark needs at least one fraction, selection and detector");
  }
  for (std::size_t fi = 0; fi < bench.fractions.size(); ++fi) {
    for (std::size_t j = 0; j < bench.selections; ++j) {
      const auto sel_seed = selection_seed(bench.master_seed, fi, j);
      try {
        const auto ep = make_episode(data.dataset, bench.fractions[fi], sel_seed, bench.max_train_per_class);
        for (auto kind : bench.detectors) {
          PipelineConfig pc = seeded(pipeline, sel_seed);
          pc.detector.kind = kind;
          visit(fi, j, kind, ep, table, pc);
        }
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "cell fraction=" << bench.fractions[fi] << " selection=" << j << ": " << e.what();
        throw Error(msg.str());
      }
    }
  }
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

Json cells_json(const std::vector<Cell>& cells) {
  Json arr = Json::array();
  for (const auto& c : cells) {
    arr.push_back({{"fraction", c.fraction},
                   {"system", c.system},
                   {"mean", c.mean},
                   {"stddev", c.stddev},
                   {"per_selection", c.per_selection}});
  }
  return arr;
}

std::string cells_table(const std::vector<Cell>& cells, const std::string& title) {
  std::vector<double> fractions;
  std::vector<std::string> systems;
  for (const auto& c : cells) {
    if (std::find(fractions.begin(), fractions.end(), c.fraction) == fractions.end()) fractions.push_back(c.fraction);
    if (std::find(systems.begin(), systems.end(), c.system) == systems.end()) systems.push_back(c.system);
  }
  std::size_t width = title.size();
  for (const auto& s : systems) width = std::max(width, s.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << title;
  for (double f : fractions) out << "  " << std::right << std::setw(15) << (percent(f) + "% known");
  out << '\n';
  for (const auto& s : systems) {
    out << std::left << std::setw(static_cast<int>(width)) << s;
    for (double f : fractions) {
      auto it = std::find_if(cells.begin(), cells.end(),
                             [&](const Cell& c) { return c.fraction == f && c.system == s; });
      const std::string v = it == cells.end() ? "-" : percent(it->mean) + " +- " + percent(it->stddev);
      out << "  " << std::right << std::setw(15) << v;
    }
    out << '\n';
  }
  return out.str();
}

const Cell* find_cell(const std::vector<Cell>& cells, double fraction, const std::string& system) {
  for (const auto& c : cells) {
    if (c.fraction == fraction && c.system == system) return &c;
  }
  return nullptr;
}

}  // namespace

const Cell* BenchmarkReport::find(double fraction, const std::string& system) const {
  return find_cell(cells, fraction, system);
}

Json BenchmarkReport::to_json() const {
  Json j;
  j["fingerprint"] = fingerprint;
  j["config"] = config;
  j["cells"] = cells_json(cells);
  j["generated"] = generated;
  return j;
}

std::string BenchmarkReport::table() const {
  std::string out = cells_table(cells, "macro F1 (%)");
  for (std::size_t fi = 0; fi < generated.size(); ++fi) {
    std::size_t max_it = 0;
    for (const auto& sel : generated[fi]) max_it = std::max(max_it, sel.size());
    if (max_it == 0) continue;
    std::ostringstream line;
    line << "generated samples, fraction " << percent(config.at("benchmark").at("fractions").at(fi).get<double>())
         << "%:";
    for (std::size_t it = 0; it < max_it; ++it) {
      double sum = 0.0;
      for (const auto& sel : generated[fi]) sum += it < sel.size() ? static_cast<double>(sel[it]) : 0.0;
      line << " it" << it + 1 << '=' << std::fixed << std::setprecision(1)
           << sum / static_cast<double>(generated[fi].size());
    }
    out += line.str() + '\n';
  }
  return out;
}

BenchmarkReport run_benchmark(const PreparedData& data, const PipelineConfig& pipeline, const BenchmarkConfig& bench,
                              const Json& config) {
  BenchmarkReport report;
  report.config = config;
  report.fingerprint = hex64(fnv1a(config.dump()));
  report.generated.assign(bench.fractions.size(), std::vector<std::vector<std::size_t>>(bench.selections));
  CellTable baselines, outflips;
  const DetectorKind reference = bench.detectors.front();
  for_each_run(data, pipeline, bench,
               [&](std::size_t fi, std::size_t j, DetectorKind kind, const Episode& ep, const EmbeddingTable& table,
                   PipelineConfig pc) {
                 if (!bench.outflip) pc.outflip.iterations = 0;
                 const auto res = outflip_iterate(ep, table, pc, &data.vocab);
                 const double f = bench.fractions[fi];
                 baselines.add(f, system_name(kind, false), res.states.front().detector.macro_f1);
                 if (!bench.outflip) return;
                 if (kind == DetectorKind::msp) outflips.add(f, system_name(DetectorKind::none, true), res.states.back().argmax.macro_f1);
                 outflips.add(f, system_name(kind, true), res.states.back().detector.macro_f1);
                 if (kind == reference) {
                   for (std::size_t s = 1; s < res.states.size(); ++s) report.generated[fi][j].push_back(res.states[s].generated);
                 }
               });
  report.cells = baselines.finish();
  for (auto& c : outflips.finish()) report.cells.push_back(std::move(c));
  return report;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "t_sim" || name == "tsim") return SweepAxis::t_sim;
  if (name == "iterations") return SweepAxis::iterations;
  throw Error("unknown sweep axis '" + std::string(name) + "' (expected t_sim or iterations)");
}

std::string_view to_string(SweepAxis axis) { return axis == SweepAxis::t_sim ? "t_sim" : "iterations"; }

std::vector<SweepRow> run_sweep(const PreparedData& data, const PipelineConfig& pipeline,
                                const BenchmarkConfig& bench, SweepAxis axis, std::span<const double> grid) {
  if (grid.empty()) throw Error("sweep: empty grid");
  std::vector<CellTable> tables(grid.size());
  auto record = [&](std::size_t g, double f, DetectorKind kind, const IterationState& st) {
    if (kind == DetectorKind::msp) tables[g].add(f, system_name(DetectorKind::none, true), st.argmax.macro_f1);
    tables[g].add(f, system_name(kind, true), st.detector.macro_f1);
  };
  if (axis == SweepAxis::t_sim) {
    for (std::size_t g = 0; g < grid.size(); ++g) {
      PipelineConfig pc = pipeline;
      pc.outflip.t_sim = grid[g];
      for_each_run(data, pc, bench,
                   [&](std::size_t fi, std::size_t, DetectorKind kind, const Episode& ep, const EmbeddingTable& table,
                       const PipelineConfig& run) {
                     const auto res = outflip_iterate(ep, table, run, &data.vocab);
                     record(g, bench.fractions[fi], kind, res.states.back());
                   });
    }
  } else {
    double top = 0.0;
    for (double v : grid) {
      if (v < 0.0 || v != std::floor(v)) throw Error("sweep: iteration values must be nonnegative integers");
      top = std::max(top, v);
    }
    PipelineConfig pc = pipeline;
    pc.outflip.iterations = static_cast<std::size_t>(top);
    for_each_run(data, pc, bench,
                 [&](std::size_t fi, std::size_t, DetectorKind kind, const Episode& ep, const EmbeddingTable& table,
                     const PipelineConfig& run) {
                   const auto res = outflip_iterate(ep, table, run, &data.vocab);
                   for (std::size_t g = 0; g < grid.size(); ++g) {
                     const auto idx = std::min(static_cast<std::size_t>(grid[g]), res.states.size() - 1);
                     record(g, bench.fractions[fi], kind, res.states[idx]);
                   }
                 });
  }
  std::vector<SweepRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (const auto& c : tables[g].finish()) rows.push_back({axis, grid[g], c.fraction, c.system, c.mean, c.stddev});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "axis,value,fraction,system,mean_macro_f1,stddev\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << to_string(r.axis) << ',' << r.value << ',' << r.fraction << ',' << r.system << ',' << r.mean << ','
        << r.stddev << '\n';
  }
  return out.str();
}

TransferResult transfer_experiment(const Episode& episode, const EmbeddingTable& table,
                                   const PipelineConfig& pipeline, std::uint64_t student_seed,
                                   std::size_t student_filters) {
  TransferResult out;
  const auto teacher = outflip_iterate(episode, table, pipeline);
  out.teacher = teacher.states.back().detector;
  out.ood_samples = teacher.samples.size();

  PipelineConfig student = pipeline;
  if (student_filters > 0) student.model.filters = student_filters;
  const std::size_t k = episode.num_known();
  const auto model_seed = derive_seed(student_seed, 1);
  const auto train_seed = derive_seed(student_seed, 2);

  auto split = split_ood_for_training(teacher.samples, derive_seed(student_seed, 3), static_cast<int>(k),
                                      next_example_id(episode));
  std::vector<LabeledExample> train = episode.train, dev = episode.dev;
  train.insert(train.end(), split.train.begin(), split.train.end());
  dev.insert(dev.end(), split.dev.begin(), split.dev.end());
  const std::size_t classes = teacher.samples.empty() ? k : k + 1;
  const auto with = train_model(student, table, classes, model_seed, train_seed, train, dev, nullptr);
  out.student_with = evaluate(with, episode, student.detector);
  const auto without = train_model(student, table, k, model_seed, train_seed, episode.train, episode.dev, nullptr);
  out.student_without = evaluate(without, episode, student.detector);
  return out;
}

const Cell* TransferReport::find(double fraction, const std::string& system) const {
  return find_cell(cells, fraction, system);
}

Json TransferReport::to_json() const {
  Json j;
  j["fingerprint"] = fingerprint;
  j["config"] = config;
  j["cells"] = cells_json(cells);
  return j;
}

std::string TransferReport::table() const { return cells_table(cells, "macro F1 (%)"); }

TransferReport run_transfer(const PreparedData& data, const PipelineConfig& pipeline, const BenchmarkConfig& bench,
                            std::uint64_t student_seed, std::size_t student_filters, const Json& config) {
  TransferReport report;
  report.config = config;
  report.fingerprint = hex64(fnv1a(config.dump()));
  CellTable cells;
  BenchmarkConfig one = bench;
  one.detectors.resize(1);
  for_each_run(data, pipeline, one,
               [&](std::size_t fi, std::size_t, DetectorKind, const Episode& ep, const EmbeddingTable& table,
                   const PipelineConfig& pc) {
                 const auto r = transfer_experiment(ep, table, pc, derive_seed(student_seed, ep.seed), student_filters);
                 const double f = bench.fractions[fi];
                 cells.add(f, "teacher", r.teacher.macro_f1);
                 cells.add(f, "student+ood", r.student_with.macro_f1);
                 cells.add(f, "student", r.student_without.macro_f1);
               });
  report.cells = cells.finish();
  return report;
}

// ---------------------------------------------------------------------------
// Configuration

Json ExperimentConfig::to_json() const {
  Json j;
  j["data"] = {{"dataset", data.dataset},
               {"format", data.format},
               {"embeddings", data.embeddings},
               {"synthetic", data.synthetic},
               {"test_ratio", data.test_ratio},
               {"dev_ratio", data.dev_ratio},
               {"split_seed", data.split_seed},
               {"oov_seed", data.oov_seed}};
  const auto& m = pipeline.model;
  j["model"] = {{"kernel_widths", m.kernel_widths},
                {"filters", m.filters},
                {"lmcl_scale", m.lmcl_scale},
                {"lmcl_margin", m.lmcl_margin},
                {"trainable_embedding", m.trainable_embedding},
                {"seed", m.seed}};
  const auto& t = pipeline.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"lr_decay", t.lr_decay},
                {"decay_every", t.decay_every},
                {"patience", t.patience},
                {"max_epochs", t.max_epochs},
                {"seed", t.seed},
                {"warm_start", pipeline.warm_start}};
  const auto& o = pipeline.outflip;
  j["outflip"] = {{"t_sim", o.t_sim},
                  {"candidate_fraction", o.candidate_fraction},
                  {"cct_size", o.cct_size},
                  {"iterations", o.iterations},
                  {"strict_similarity", o.strict_similarity},
                  {"seed", o.seed}};
  const auto& d = pipeline.detector;
  j["detector"] = {{"msp_threshold", d.msp_threshold},
                   {"doc_alpha", d.doc_alpha},
                   {"lof_k", d.lof_k},
                   {"lof_threshold", d.lof_threshold}};
  std::vector<std::string> detectors;
  for (auto k : bench.detectors) detectors.emplace_back(outflip::to_string(k));
  j["benchmark"] = {{"fractions", bench.fractions},
                    {"selections", bench.selections},
                    {"master_seed", bench.master_seed},
                    {"detectors", detectors},
                    {"outflip", bench.outflip},
                    {"max_train_per_class", bench.max_train_per_class}};
  j["transfer"] = {{"student_seed", student_seed}, {"student_filters", student_filters}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  auto get = [](const Json& obj, const char* key, auto& field) {
    if (obj.contains(key)) obj.at(key).get_to(field);
  };
  if (j.contains("data")) {
    const auto& s = j.at("data");
    get(s, "dataset", c.data.dataset);
    get(s, "format", c.data.format);
    get(s, "embeddings", c.data.embeddings);
    get(s, "synthetic", c.data.synthetic);
    get(s, "test_ratio", c.data.test_ratio);
    get(s, "dev_ratio", c.data.dev_ratio);
    get(s, "split_seed", c.data.split_seed);
    get(s, "oov_seed", c.data.oov_seed);
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    get(s, "kernel_widths", c.pipeline.model.kernel_widths);
    get(s, "filters", c.pipeline.model.filters);
    get(s, "lmcl_scale", c.pipeline.model.lmcl_scale);
    get(s, "lmcl_margin", c.pipeline.model.lmcl_margin);
    get(s, "trainable_embedding", c.pipeline.model.trainable_embedding);
    get(s, "seed", c.pipeline.model.seed);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    auto& t = c.pipeline.train;
    get(s, "batch_size", t.batch_size);
    get(s, "learning_rate", t.learning_rate);
    get(s, "lr_decay", t.lr_decay);
    get(s, "decay_every", t.decay_every);
    get(s, "patience", t.patience);
    get(s, "max_epochs", t.max_epochs);
    get(s, "seed", t.seed);
    get(s, "warm_start", c.pipeline.warm_start);
  }
  if (j.contains("outflip")) {
    const auto& s = j.at("outflip");
    auto& o = c.pipeline.outflip;
    get(s, "t_sim", o.t_sim);
    get(s, "candidate_fraction", o.candidate_fraction);
    get(s, "cct_size", o.cct_size);
    get(s, "iterations", o.iterations);
    get(s, "strict_similarity", o.strict_similarity);
    get(s, "seed", o.seed);
  }
  if (j.contains("detector")) {
    const auto& s = j.at("detector");
    auto& d = c.pipeline.detector;
    get(s, "msp_threshold", d.msp_threshold);
    get(s, "doc_alpha", d.doc_alpha);
    get(s, "lof_k", d.lof_k);
    get(s, "lof_threshold", d.lof_threshold);
  }
  if (j.contains("benchmark")) {
    const auto& s = j.at("benchmark");
    get(s, "fractions", c.bench.fractions);
    get(s, "selections", c.bench.selections);
    get(s, "master_seed", c.bench.master_seed);
    get(s, "outflip", c.bench.outflip);
    get(s, "max_train_per_class", c.bench.max_train_per_class);
    if (s.contains("detectors")) {
      c.bench.detectors.clear();
      for (const auto& name : s.at("detectors")) c.bench.detectors.push_back(parse_detector_kind(name.get<std::string>()));
    }
  }
  if (j.contains("transfer")) {
    get(j.at("transfer"), "student_seed", c.student_seed);
    get(j.at("transfer"), "student_filters", c.student_filters);
  }
  return c;
}

std::string ExperimentConfig::fingerprint() const { return hex64(fnv1a(to_json().dump())); }

Json to_json(std::span<const OodSample> samples, const Vocab& vocab) {
  Json arr = Json::array();
  for (const auto& s : samples) {
    std::vector<std::string> words;
    if (!s.text.empty()) {
      words = s.text;
    } else {
      for (auto t : s.tokens) words.push_back(vocab.word(t));
    }
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    arr.push_back({{"text", text},
                   {"label", "ood"},
                   {"source_id", s.source_id},
                   {"position", s.position},
                   {"original", vocab.word(s.original)},
                   {"replacement", vocab.word(s.replacement)},
                   {"iteration", s.iteration},
                   {"source_label", s.source_label},
                   {"predicted_label", s.predicted_label}});
  }
  return arr;
}

void write_ood_jsonl(const std::filesystem::path& path, std::span<const OodSample> samples, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& rec : to_json(samples, vocab)) out << rec.dump() << '\n';
}

}  // namespace outflip
