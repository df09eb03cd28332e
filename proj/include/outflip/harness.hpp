#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outflip/classifier.hpp"
#include "outflip/corpus.hpp"
#include "outflip/detectors.hpp"
#include "outflip/embeddings.hpp"
#include "outflip/outflip.hpp"

namespace outflip {

using Json = nlohmann::ordered_json;
using Model = CnnClassifier<float>;

// ---------------------------------------------------------------------------
// Metrics

// Classes 0..num_known-1 are the known intents, class num_known is OOD.
struct EvalReport {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_f1 = 0.0;
  std::size_t count = 0;
};

// Predictions and truths are known-class indices or kOodLabel; any other
// negative value or index >= num_known also counts as OOD. Undefined
// precision, recall or F1 (0/0) is 0. The OOD class is left out of the
// average when it is neither true nor predicted anywhere.
EvalReport macro_f1(std::span<const int> predictions, std::span<const int> truths, std::size_t num_known);
EvalReport macro_f1(std::span<const Decision> decisions, std::span<const int> truths, std::size_t num_known);

Json to_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// Data

struct DataSource {
  std::string dataset;             // path; empty with synthetic set
  std::string format = "jsonl";
  std::string embeddings;          // word vector text file
  std::string synthetic;           // "", "snips", "atis" or "planted"
  double test_ratio = 0.3;         // used when the dataset has no test split
  double dev_ratio = 0.1;          // used when the dataset has no dev split
  std::uint64_t split_seed = 1;
  std::uint64_t oov_seed = 1;      // rows for words missing from the embeddings
  std::size_t max_embedding_words = 0;  // analogy-eval only; 0 = all
};

struct PreparedData {
  Dataset dataset;  // encoded
  Vocab vocab;
  std::optional<EmbeddingTable> table;
  std::string description;
};

// Loads (or synthesizes) the corpus, fills missing test/dev splits by
// stratified draws, builds the vocabulary over the whole training split and
// loads the embeddings against it.
PreparedData prepare_data(const DataSource& source);

// One known-intent selection with labels remapped: known intents become
// 0..k-1 in ascending dataset-id order, unknown test examples kOodLabel.
struct Episode {
  std::uint64_t seed = 0;
  double fraction = 1.0;
  std::vector<int> known_labels;
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> dev;
  std::vector<LabeledExample> test;

  std::size_t num_known() const noexcept { return known_labels.size(); }
};

// max_train_per_class > 0 keeps a seeded subsample of that many training
// examples per known class.
Episode make_episode(const Dataset& dataset, double fraction, std::uint64_t seed,
                     std::size_t max_train_per_class = 0);

// ---------------------------------------------------------------------------
// Iterative OOD population

struct PipelineConfig {
  CnnConfig model;  // vocab size, dimension, classes, loss and seed are set per run
  TrainConfig train;
  OutFlipConfig outflip;
  DetectorParams detector;
  // Continue from the previous iteration's weights instead of a fresh init.
  bool warm_start = false;
};

struct OodSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> dev;
};

// Seeded shuffle, then round-half-up(0.9 n) to train and the rest to dev,
// every example labeled ood_label with ids from first_id upward. Fewer than
// 10 samples all go to train.
OodSplit split_ood_for_training(std::span<const OodSample> samples, std::uint64_t seed, int ood_label,
                                std::int64_t first_id);

struct IterationState {
  std::size_t iteration = 0;
  std::size_t train_size = 0;
  std::size_t dev_size = 0;
  std::size_t generated = 0;  // samples produced by this iteration's generation pass
  std::size_t ood_train = 0;  // accumulated OOD examples in train
  std::size_t ood_dev = 0;
  GenerationStats generation;
  TrainRecord training;
  std::string model_hash;
  EvalReport detector;  // the configured detector on the model
  EvalReport argmax;    // the model alone; only its OOD output rejects
};

struct IterateResult {
  std::vector<IterationState> states;  // states[0] is the baseline
  std::vector<OodSample> samples;
  std::string stop_reason;             // "completed" or "no_samples"
  std::optional<Model> final_model;
};

// Iteration 0 trains the k-class baseline. Each later iteration generates
// samples with the current model, adds a 90/10 split of them under the OOD
// class and retrains a (k+1)-class model from scratch. An iteration that
// generates nothing ends the loop.
IterateResult outflip_iterate(const Episode& episode, const EmbeddingTable& table, const PipelineConfig& config,
                              const Vocab* vocab = nullptr,
                              const std::filesystem::path& checkpoint_dir = {});

EvalReport evaluate(const Model& model, const Episode& episode, const DetectorParams& params);
EvalReport evaluate(const Model& model, const Episode& episode, const FittedDetector& detector);

Json to_json(const IterationState& state);

// ---------------------------------------------------------------------------
// Benchmark, sweep, transfer

struct BenchmarkConfig {
  std::vector<double> fractions{0.25, 0.5, 0.75};
  std::size_t selections = 10;
  std::uint64_t master_seed = 1;
  std::vector<DetectorKind> detectors{DetectorKind::msp, DetectorKind::doc, DetectorKind::lmcl_lof};
  bool outflip = true;
  std::size_t max_train_per_class = 0;
};

// Selection j of fraction f uses the same seed for every system.
std::uint64_t selection_seed(std::uint64_t master_seed, std::size_t fraction_index, std::size_t selection);

struct Cell {
  double fraction = 0.0;
  std::string system;
  std::vector<double> per_selection;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct BenchmarkReport {
  Json config;
  std::string fingerprint;
  std::vector<Cell> cells;
  // generated[fraction index][selection][iteration - 1], softmax reference model
  std::vector<std::vector<std::vector<std::size_t>>> generated;

  const Cell* find(double fraction, const std::string& system) const;
  Json to_json() const;
  std::string table() const;
};

std::string system_name(DetectorKind kind, bool with_outflip);

BenchmarkReport run_benchmark(const PreparedData& data, const PipelineConfig& pipeline,
                              const BenchmarkConfig& bench, const Json& config);

enum class SweepAxis { t_sim, iterations };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis);

struct SweepRow {
  SweepAxis axis = SweepAxis::t_sim;
  double value = 0.0;
  double fraction = 0.0;
  std::string system;
  double mean = 0.0;
  double stddev = 0.0;
};

// t_sim: one OutFlip run per grid value. iterations: one run with the
// largest grid value, read off at every requested iteration (a run that
// stopped early keeps its last model).
std::vector<SweepRow> run_sweep(const PreparedData& data, const PipelineConfig& pipeline,
                                const BenchmarkConfig& bench, SweepAxis axis, std::span<const double> grid);
std::string sweep_csv(std::span<const SweepRow> rows);

struct TransferResult {
  EvalReport teacher;
  EvalReport student_with;
  EvalReport student_without;
  std::size_t ood_samples = 0;
};

// The teacher is the OutFlip run of the pipeline; students use
// student_seed (and student_filters when nonzero) and train once.
TransferResult transfer_experiment(const Episode& episode, const EmbeddingTable& table,
                                   const PipelineConfig& pipeline, std::uint64_t student_seed,
                                   std::size_t student_filters = 0);

struct TransferReport {
  Json config;
  std::string fingerprint;
  std::vector<Cell> cells;  // systems "teacher", "student+ood", "student"

  const Cell* find(double fraction, const std::string& system) const;
  Json to_json() const;
  std::string table() const;
};

TransferReport run_transfer(const PreparedData& data, const PipelineConfig& pipeline, const BenchmarkConfig& bench,
                            std::uint64_t student_seed, std::size_t student_filters, const Json& config);

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  DataSource data;
  PipelineConfig pipeline;
  BenchmarkConfig bench;
  std::uint64_t student_seed = 2;
  std::size_t student_filters = 0;

  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  std::string fingerprint() const;  // hash of the canonical JSON
};

Json to_json(std::span<const OodSample> samples, const Vocab& vocab);
void write_ood_jsonl(const std::filesystem::path& path, std::span<const OodSample> samples, const Vocab& vocab);

}  // namespace outflip
