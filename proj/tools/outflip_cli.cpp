#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "outflip/harness.hpp"
#include "outflip/kernels.hpp"
#include "outflip/synthetic.hpp"

namespace fs = std::filesystem;
using namespace outflip;

namespace {

struct Options {
  ExperimentConfig cfg;
  std::vector<std::string> detectors{"msp", "doc", "lmcl_lof"};
  std::string detector = "msp";
  bool no_outflip = false;
  std::string simd = "auto";
  bool quiet = false;
  bool verbose = false;

  // per-subcommand
  double fraction = 0.75;
  std::size_t selection = 0;
  std::string out;
  std::string checkpoint;
  std::string checkpoint_dir;
  std::string export_ood;
  std::string replay;
  std::string axis = "t_sim";
  std::vector<double> grid;
  std::string questions;
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

void add_common(CLI::App& app, Options& o) {
  auto& c = o.cfg;
  app.set_config("--config", "", "key=value (INI/TOML) file with any of the long options");

  auto* data = "Data";
  app.add_option("--dataset", c.data.dataset, "Dataset file or directory")->envname("OUTFLIP_DATASET")->group(data);
  app.add_option("--format", c.data.format, "jsonl, tsv, atis or snips")->envname("OUTFLIP_FORMAT")->group(data);
  app.add_option("--embeddings", c.data.embeddings, "Word vector text file")->envname("OUTFLIP_EMBEDDINGS")->group(data);
  app.add_option("--synthetic", c.data.synthetic, "Generated corpus instead of a dataset: snips, atis or planted")
      ->group(data);
  app.add_option("--test-ratio", c.data.test_ratio, "Test share when the dataset has no test split")->group(data);
  app.add_option("--dev-ratio", c.data.dev_ratio, "Dev share when the dataset has no dev split")->group(data);
  app.add_option("--split-seed", c.data.split_seed)->group(data);
  app.add_option("--oov-seed", c.data.oov_seed, "Seed for rows of words missing from the embeddings")->group(data);

  auto* model = "Model";
  app.add_option("--kernel-widths", c.pipeline.model.kernel_widths)->delimiter(',')->group(model);
  app.add_option("--filters", c.pipeline.model.filters, "Filters per kernel width")->group(model);
  app.add_option("--lmcl-scale", c.pipeline.model.lmcl_scale)->group(model);
  app.add_option("--lmcl-margin", c.pipeline.model.lmcl_margin)->group(model);
  app.add_flag("--trainable-embedding", c.pipeline.model.trainable_embedding)->group(model);
  app.add_option("--model-seed", c.pipeline.model.seed)->group(model);

  auto* train = "Training";
  app.add_option("--batch-size", c.pipeline.train.batch_size)->group(train);
  app.add_option("--lr", c.pipeline.train.learning_rate)->group(train);
  app.add_option("--lr-decay", c.pipeline.train.lr_decay)->group(train);
  app.add_option("--decay-every", c.pipeline.train.decay_every, "Epochs per decay step")->group(train);
  app.add_option("--patience", c.pipeline.train.patience)->group(train);
  app.add_option("--max-epochs", c.pipeline.train.max_epochs)->group(train);
  app.add_flag("--warm-start", c.pipeline.warm_start, "Continue from the previous iteration's weights")->group(train);
  app.add_option("--train-seed", c.pipeline.train.seed)->group(train);

  auto* gen = "OutFlip";
  app.add_option("--t-sim", c.pipeline.outflip.t_sim, "Keep replacements with cosine <= t-sim")->group(gen);
  app.add_option("--candidate-fraction", c.pipeline.outflip.candidate_fraction)->group(gen);
  app.add_option("--cct-size", c.pipeline.outflip.cct_size)->group(gen);
  app.add_option("--iterations", c.pipeline.outflip.iterations)->group(gen);
  app.add_flag("--strict-similarity", c.pipeline.outflip.strict_similarity, "Use cosine < t-sim")->group(gen);
  app.add_option("--outflip-seed", c.pipeline.outflip.seed)->group(gen);

  auto* det = "Detectors";
  app.add_option("--detector", o.detector, "none, msp, doc or lmcl_lof (single-run commands)")->group(det);
  app.add_option("--msp-threshold", c.pipeline.detector.msp_threshold)->group(det);
  app.add_option("--doc-alpha", c.pipeline.detector.doc_alpha)->group(det);
  app.add_option("--lof-k", c.pipeline.detector.lof_k)->group(det);
  app.add_option("--lof-threshold", c.pipeline.detector.lof_threshold)->group(det);

  auto* bench = "Benchmark";
  app.add_option("--fractions", c.bench.fractions, "Known-intent fractions")->delimiter(',')->group(bench);
  app.add_option("--selections", c.bench.selections, "Known-intent selections per fraction")->group(bench);
  app.add_option("--master-seed", c.bench.master_seed)->group(bench);
  app.add_option("--detectors", o.detectors, "Detectors to benchmark")->delimiter(',')->group(bench);
  app.add_flag("--no-outflip", o.no_outflip, "Baselines only")->group(bench);
  app.add_option("--max-train-examples", c.bench.max_train_per_class, "Per-class training cap (0 = none)")
      ->group(bench);
  app.add_option("--student-seed", c.student_seed)->group(bench);
  app.add_option("--student-filters", c.student_filters, "0 = same as the teacher")->group(bench);

  app.add_option("--simd", o.simd, "auto, scalar or avx2")->group("Runtime");
  app.add_flag("-q,--quiet", o.quiet)->group("Runtime");
  app.add_flag("-v,--verbose", o.verbose)->group("Runtime");
}

void finalize(Options& o) {
  if (o.quiet) log::set_level(log::Level::quiet);
  if (o.verbose) log::set_level(log::Level::info);
  if (o.simd == "scalar") {
    kernels::set_simd_level(kernels::SimdLevel::scalar);
  } else if (o.simd == "avx2") {
    if (!kernels::avx2_supported()) throw Error("AVX2 requested but not available");
    kernels::set_simd_level(kernels::SimdLevel::avx2);
  } else if (o.simd != "auto") {
    throw Error("--simd must be auto, scalar or avx2");
  }
  o.cfg.bench.detectors.clear();
  for (const auto& d : o.detectors) o.cfg.bench.detectors.push_back(parse_detector_kind(d));
  o.cfg.bench.outflip = !o.no_outflip;
  o.cfg.pipeline.detector.kind = parse_detector_kind(o.detector);
}

Episode single_episode(const PreparedData& data, const Options& o) {
  return make_episode(data.dataset, o.fraction, selection_seed(o.cfg.bench.master_seed, 0, o.selection),
                      o.cfg.bench.max_train_per_class);
}

PipelineConfig single_pipeline(const Options& o, const Episode& ep) {
  PipelineConfig pc = o.cfg.pipeline;
  pc.model.seed = derive_seed(pc.model.seed, ep.seed);
  pc.train.seed = derive_seed(pc.train.seed, ep.seed);
  pc.outflip.seed = derive_seed(pc.outflip.seed, ep.seed);
  return pc;
}

const EmbeddingTable& table_of(const PreparedData& data) {
  if (!data.table) throw Error("an embedding file is required (--embeddings or OUTFLIP_EMBEDDINGS)");
  return *data.table;
}

Json episode_json(const Episode& ep, const PreparedData& data) {
  std::vector<std::string> known;
  for (int l : ep.known_labels) known.push_back(data.dataset.labels[l]);
  return {{"seed", ep.seed},
          {"fraction", ep.fraction},
          {"known_labels", known},
          {"train", ep.train.size()},
          {"dev", ep.dev.size()},
          {"test", ep.test.size()}};
}

int cmd_train(Options& o) {
  const auto data = prepare_data(o.cfg.data);
  const auto ep = single_episode(data, o);
  auto pc = single_pipeline(o, ep);
  pc.outflip.iterations = 0;
  const auto res = outflip_iterate(ep, table_of(data), pc, &data.vocab);
  if (!o.checkpoint.empty()) save_checkpoint(o.checkpoint, *res.final_model, &data.vocab);
  Json j;
  j["fingerprint"] = o.cfg.fingerprint();
  j["config"] = o.cfg.to_json();
  j["episode"] = episode_json(ep, data);
  j["state"] = to_json(res.states.front());
  write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_iterate(Options& o, bool samples_only) {
  const auto data = prepare_data(o.cfg.data);
  const auto ep = single_episode(data, o);
  const auto pc = single_pipeline(o, ep);
  const auto res = outflip_iterate(ep, table_of(data), pc, &data.vocab, o.checkpoint_dir);
  if (samples_only) {
    if (o.out.empty()) throw Error("export-ood needs --out");
    write_ood_jsonl(o.out, res.samples, data.vocab);
    std::cout << res.samples.size() << " samples written to " << o.out << '\n';
    return 0;
  }
  if (!o.export_ood.empty()) write_ood_jsonl(o.export_ood, res.samples, data.vocab);
  Json j;
  j["fingerprint"] = o.cfg.fingerprint();
  j["config"] = o.cfg.to_json();
  j["episode"] = episode_json(ep, data);
  j["stop_reason"] = res.stop_reason;
  j["states"] = Json::array();
  for (const auto& st : res.states) j["states"].push_back(to_json(st));
  write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_generate(Options& o) {
  const auto data = prepare_data(o.cfg.data);
  const auto ep = single_episode(data, o);
  auto pc = single_pipeline(o, ep);
  pc.outflip.iterations = 0;
  const auto& table = table_of(data);
  const auto res = outflip_iterate(ep, table, pc, &data.vocab);
  GenerationStats stats;
  const auto samples = generate_ood(*res.final_model, table, std::span<const LabeledExample>(ep.train),
                                    ep.num_known(), pc.outflip, 1, nullptr, &stats, &data.vocab);
  if (o.out.empty()) {
    for (const auto& rec : to_json(samples, data.vocab)) std::cout << rec.dump() << '\n';
  } else {
    write_ood_jsonl(o.out, samples, data.vocab);
  }
  std::cerr << "examples " << stats.examples << ", cct hits " << stats.cct_hits << ", no candidate "
            << stats.no_candidate << ", label changed " << stats.classification_changed << ", duplicates "
            << stats.duplicates << ", emitted " << stats.emitted << '\n';
  return 0;
}

int cmd_benchmark(Options& o) {
  if (!o.replay.empty()) {
    std::ifstream in(o.replay);
    if (!in) throw Error("cannot read " + o.replay);
    const auto report = Json::parse(in);
    o.cfg = ExperimentConfig::from_json(report.at("config"));
  }
  const auto data = prepare_data(o.cfg.data);
  const auto report = run_benchmark(data, o.cfg.pipeline, o.cfg.bench, o.cfg.to_json());
  if (!o.out.empty()) write_text(o.out, report.to_json().dump(2) + "\n");
  std::cout << "dataset " << data.description << ", fingerprint " << report.fingerprint << '\n' << report.table();
  return 0;
}

int cmd_sweep(Options& o) {
  const auto axis = parse_sweep_axis(o.axis);
  if (o.grid.empty()) {
    o.grid = axis == SweepAxis::t_sim ? std::vector<double>{-0.1, 0.1, 0.3, 0.5, 0.7}
                                      : std::vector<double>{0, 1, 2, 3, 4};
  }
  if (axis == SweepAxis::t_sim && o.cfg.pipeline.outflip.iterations == OutFlipConfig{}.iterations) {
    o.cfg.pipeline.outflip.iterations = 2;
  }
  const auto data = prepare_data(o.cfg.data);
  const auto rows = run_sweep(data, o.cfg.pipeline, o.cfg.bench, axis, o.grid);
  write_text(o.out, sweep_csv(rows));
  return 0;
}

int cmd_transfer(Options& o) {
  const auto data = prepare_data(o.cfg.data);
  const auto report = run_transfer(data, o.cfg.pipeline, o.cfg.bench, o.cfg.student_seed, o.cfg.student_filters,
                                   o.cfg.to_json());
  if (!o.out.empty()) write_text(o.out, report.to_json().dump(2) + "\n");
  std::cout << "dataset " << data.description << ", fingerprint " << report.fingerprint << '\n' << report.table();
  return 0;
}

int cmd_analogy(Options& o) {
  if (o.cfg.data.embeddings.empty()) throw Error("analogy-eval needs --embeddings");
  if (o.questions.empty()) throw Error("analogy-eval needs --questions");
  const auto vocab = vocab_from_embedding_file(o.cfg.data.embeddings, o.cfg.data.max_embedding_words);
  const auto table = load_pretrained(o.cfg.data.embeddings, vocab, o.cfg.data.oov_seed);
  const auto r = analogy_eval(fs::path(o.questions), vocab, table);
  Json j = {{"accuracy", r.accuracy}, {"attempted", r.attempted}, {"correct", r.correct}, {"skipped", r.skipped}};
  write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int cmd_synthesize(Options& o) {
  if (o.out.empty()) throw Error("synthesize needs --out <directory>");
  const std::string name = o.cfg.data.synthetic.empty() ? "snips" : o.cfg.data.synthetic;
  synthetic::Spec spec = name == "atis"      ? synthetic::atis_like_spec()
                         : name == "planted" ? synthetic::planted_keyword_spec()
                                             : synthetic::snips_like_spec();
  const auto corpus = synthetic::generate(spec);
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  write_jsonl(dir / "train.jsonl", corpus.dataset.train, corpus.dataset.labels);
  write_jsonl(dir / "dev.jsonl", corpus.dataset.dev, corpus.dataset.labels);
  write_jsonl(dir / "test.jsonl", corpus.dataset.test, corpus.dataset.labels);
  write_text((dir / "embeddings.txt").string(), corpus.embeddings);
  std::cout << "wrote " << name << " corpus to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-domain sample generation by gradient-guided word flips"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  add_common(app, o);

  auto* train = app.add_subcommand("train", "Train the baseline classifier on one known-intent selection");
  auto* generate = app.add_subcommand("generate", "One generation pass with a freshly trained baseline");
  auto* iterate = app.add_subcommand("iterate", "Iterative OOD population on one known-intent selection");
  auto* benchmark = app.add_subcommand("benchmark", "Macro-F1 grid over fractions and selections");
  auto* sweep = app.add_subcommand("sweep", "Macro F1 over a t_sim or iteration grid (CSV)");
  auto* transfer = app.add_subcommand("transfer", "Train a differently seeded student on teacher samples");
  auto* analogy = app.add_subcommand("analogy-eval", "Word analogy accuracy of an embedding file");
  auto* export_ood = app.add_subcommand("export-ood", "Run the iteration loop and write every sample as JSONL");
  auto* synthesize = app.add_subcommand("synthesize", "Write a generated corpus and its embeddings");

  for (auto* sub : {train, generate, iterate, export_ood}) {
    sub->add_option("--fraction", o.fraction, "Known-intent fraction");
    sub->add_option("--selection", o.selection, "Selection index (seeded from --master-seed)");
  }
  for (auto* sub : {train, generate, iterate, benchmark, sweep, transfer, analogy, export_ood, synthesize}) {
    sub->add_option("-o,--out", o.out, "Output file (stdout when omitted)");
  }
  train->add_option("--checkpoint", o.checkpoint, "Write the trained model here");
  iterate->add_option("--checkpoint-dir", o.checkpoint_dir, "Write one checkpoint per iteration");
  iterate->add_option("--export-ood", o.export_ood, "Also write the generated samples as JSONL");
  benchmark->add_option("--replay", o.replay, "Rerun with the config embedded in a report");
  sweep->add_option("--axis", o.axis, "t_sim or iterations");
  sweep->add_option("--grid", o.grid, "Grid values")->delimiter(',');
  analogy->add_option("--questions", o.questions, "Analogy file, four words per line")->required();
  analogy->add_option("--max-words", o.cfg.data.max_embedding_words, "Read at most this many vectors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    finalize(o);
    if (*train) return cmd_train(o);
    if (*generate) return cmd_generate(o);
    if (*iterate) return cmd_iterate(o, false);
    if (*export_ood) return cmd_iterate(o, true);
    if (*benchmark) return cmd_benchmark(o);
    if (*sweep) return cmd_sweep(o);
    if (*transfer) return cmd_transfer(o);
    if (*analogy) return cmd_analogy(o);
    if (*synthesize) return cmd_synthesize(o);
  } catch (const std::exception& e) {
    std::cerr << "outflip: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
