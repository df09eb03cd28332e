// Acceptance runner: one PASS/FAIL line per criterion. argv[1] is the CLI
// binary used by the determinism check.
//
// Real corpora are used when OUTFLIP_SNIPS, OUTFLIP_ATIS (dataset
// directories in their native formats) and OUTFLIP_GLOVE (word vectors) are
// set; otherwise the generated stand-ins are.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "outflip/kernels.hpp"
#include "outflip/outflip.hpp"
#include "outflip/synthetic.hpp"
#include "support.hpp"

using namespace outflip;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v && *v ? v : nullptr;
}

bool real_data() { return env("OUTFLIP_SNIPS") && env("OUTFLIP_ATIS") && env("OUTFLIP_GLOVE"); }

DataSource source(const char* var, const char* format, const char* synthetic) {
  DataSource s;
  if (real_data()) {
    s.dataset = env(var);
    s.format = format;
    s.embeddings = env("OUTFLIP_GLOVE");
  } else {
    s.synthetic = synthetic;
  }
  return s;
}

Matrix<double> rows_of(const TextModel<double>& model, std::span<const TokenId> tokens) {
  const std::size_t d = model.embedding_dim();
  Matrix<double> x(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) x(i, k) = model.embedding().value[tokens[i] * d + k];
  return x;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& c : support::check_primitives(seed)) {
      if (c.max_rel_error > worst) {
        worst = c.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  std::mt19937_64 rng(11);
  const auto table = support::random_table(9, 4, rng);
  std::vector<LabeledExample> batch;
  for (int i = 0; i < 5; ++i) {
    LabeledExample ex;
    ex.tokens = support::random_sentence(3 + i % 5, table.rows(), rng);
    ex.label = i % 3;
    ex.example_id = i;
    batch.push_back(ex);
  }
  std::size_t checked = 0;
  for (auto loss : {LossKind::softmax_ce, LossKind::sigmoid_bce, LossKind::lmcl}) {
    auto model = support::tiny_cnn<double>(table, 3, loss, 4, true, {2, 3, 4, 5}, 4);
    const auto r = gradnet::finite_diff_check<double>(model, batch, 1e-5, 1000000);
    checked += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = "CNN " + std::string(gradnet::to_string(loss));
    }
  }
  return {worst < 1e-5, fmt("max relative error %.2e", worst) + " (" + worst_name + "), " +
                            std::to_string(checked) + " CNN parameters"};
}

Outcome direction_identity() {
  std::mt19937_64 rng(2024);
  const LossKind losses[] = {LossKind::softmax_ce, LossKind::sigmoid_bce, LossKind::lmcl};
  double worst_identity = 0.0, worst_fd = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t words = 8 + rng() % 30, dim = 2 + rng() % 6, classes = 2 + rng() % 3;
    const auto table = support::random_table(words, dim, rng);
    const auto model = support::tiny_cnn<double>(table, classes, losses[inst % 3], rng(), true, {2, 3}, 3 + rng() % 4);
    const auto s = support::random_sentence(1 + rng() % 8, table.rows(), rng);
    const std::size_t label = rng() % classes, i = rng() % s.size();
    TokenId b;
    do b = static_cast<TokenId>(Vocab::kReservedCount + rng() % words);
    while (b == s[i]);

    const double score = onehot_direction_score(model, s, label, i, b);
    const auto g = embedding_input_gradient(model, s, label);
    const auto& e = model.embedding().value;
    double dot = 0.0;
    for (std::size_t k = 0; k < dim; ++k) dot += (e[b * dim + k] - e[s[i] * dim + k]) * g(i, k);
    worst_identity = std::max(worst_identity, support::rel_error(score, dot));

    auto x = rows_of(model, s);
    const auto base = x;
    auto at = [&](double t) {
      for (std::size_t k = 0; k < dim; ++k) x(i, k) = base(i, k) + t * (e[b * dim + k] - base(i, k));
      return model.loss_embedded(x, label);
    };
    // Central differences balance truncation against roundoff at cbrt(eps).
    const double h = std::cbrt(std::numeric_limits<double>::epsilon());
    worst_fd = std::max(worst_fd, support::rel_error(score, (at(h) - at(-h)) / (2.0 * h)));
  }
  return {worst_identity < 1e-12 && worst_fd < 1e-6,
          fmt("dot-product identity %.2e, relaxed-input difference %.2e", worst_identity, worst_fd)};
}

Outcome brute_force_equivalence() {
  kernels::ScopedSimdLevel scalar(kernels::SimdLevel::scalar);
  std::mt19937_64 rng(77);
  std::size_t candidate_cases = 0, candidate_mismatch = 0, hotflip_cases = 0, hotflip_mismatch = 0;
  for (int inst = 0; inst < 60; ++inst) {
    // At most 50 rows including the reserved ones.
    const std::size_t words = 4 + rng() % 44;
    const auto base = support::random_table(words, 2 + rng() % 5, rng);
    std::vector<bool> pretrained(base.rows(), true);
    for (TokenId r = 0; r < Vocab::kReservedCount; ++r) pretrained[r] = false;
    pretrained[Vocab::kReservedCount + rng() % words] = false;
    const EmbeddingTable table(base.rows(), base.dim(),
                               std::vector<double>(base.values().begin(), base.values().end()), pretrained);
    const std::size_t classes = 2 + rng() % 3;
    support::BagModel m(table, classes);
    m.weight().value = support::uniform_vector(m.weight().size(), rng);
    m.bias().value = support::uniform_vector(classes, rng);
    const auto s = support::random_sentence(1 + rng() % 5, table.rows(), rng);
    const std::size_t label = rng() % classes;
    const auto g = support::bag_gradient(m, s, label);
    for (double frac : {0.05, 0.3, 1.0}) {
      for (double t_sim : {-0.4, 0.0, 0.3, 1.0}) {
        OutFlipConfig cfg;
        cfg.candidate_fraction = frac;
        cfg.t_sim = t_sim;
        for (std::size_t i = 0; i < s.size(); ++i) {
          ++candidate_cases;
          if (candidate_replacements(m, table, s, label, i, cfg) !=
              support::brute_candidates(table, g, s[i], frac, t_sim))
            ++candidate_mismatch;
        }
        ++hotflip_cases;
        const auto got = hotflip_attack(m, table, s, label, t_sim);
        const auto want = support::brute_hotflip(table, s, std::vector<std::vector<double>>(s.size(), g), t_sim);
        const bool same = got.has_value() == want.has_value() &&
                          (!got || (got->position == want->position && got->replacement == want->word));
        hotflip_mismatch += same ? 0 : 1;
      }
    }
  }

  std::size_t lof_mismatch = 0, lof_queries = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 5 + rng() % 196, dim = 1 + rng() % 6;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(20, n - 1);
    std::vector<std::vector<double>> pts(n), queries(6);
    for (auto& p : pts) p = support::uniform_vector(dim, rng);
    for (auto& q : queries) q = support::uniform_vector(dim, rng);
    if (inst % 5 == 0) pts[1] = pts[0];
    queries.back() = pts[2];
    Matrix<double> m(n, dim);
    for (std::size_t r = 0; r < n; ++r) std::copy(pts[r].begin(), pts[r].end(), m.row(r).begin());
    const auto model = lof_fit(std::move(m), k);
    const auto expected = support::brute_force_lof(pts, queries, k);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      ++lof_queries;
      lof_mismatch += model.score(queries[q]) == expected[q] ? 0 : 1;
    }
  }

  std::size_t f1_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t known = 1 + rng() % 6, n = 1 + rng() % 60;
    std::uniform_int_distribution<int> pick(-1, static_cast<int>(known));
    std::vector<int> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = pick(rng);
      y[i] = pick(rng);
    }
    f1_mismatch += macro_f1(p, y, known).macro_f1 == support::confusion_macro_f1(p, y, known) ? 0 : 1;
  }
  const bool pass = candidate_mismatch == 0 && hotflip_mismatch == 0 && lof_mismatch == 0 && f1_mismatch == 0;
  std::ostringstream d;
  d << "candidates " << candidate_cases - candidate_mismatch << "/" << candidate_cases << ", hotflip "
    << hotflip_cases - hotflip_mismatch << "/" << hotflip_cases << ", LOF " << lof_queries - lof_mismatch << "/"
    << lof_queries << ", macro F1 " << 1000 - f1_mismatch << "/1000";
  return {pass, d.str()};
}

Outcome planted_fidelity() {
  auto planted = support::planted_model();
  const auto& data = planted.data;
  const auto& model = *planted.model;
  const auto& train = data.dataset.train;
  const auto corpus = synthetic::generate(synthetic::planted_keyword_spec());
  const std::size_t classes = data.dataset.num_labels();

  const auto cct = extract_cct(model, std::span<const LabeledExample>(train), classes);
  std::size_t recovered = 0;
  for (std::size_t y = 0; y < classes; ++y) {
    if (!cct.cct.by_class[y].empty() && data.vocab.word(cct.cct.by_class[y][0].word) == corpus.keywords[y][0])
      ++recovered;
  }

  OutFlipConfig cfg;
  cfg.candidate_fraction = 0.1;
  const auto samples = generate_ood(model, *data.table, std::span<const LabeledExample>(train), classes, cfg, 1);
  std::size_t violations = 0;
  for (const auto& s : samples) {
    const auto src = std::find_if(train.begin(), train.end(), [&](const auto& e) { return e.example_id == s.source_id; });
    if (src == train.end() || src->tokens.size() != s.tokens.size()) {
      ++violations;
      continue;
    }
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) hamming += s.tokens[i] != src->tokens[i];
    const auto important = most_important_word(model, src->tokens, static_cast<std::size_t>(src->label));
    const bool ok = hamming == 1 && important.position == s.position && important.word == s.original &&
                    support::cosine(*data.table, s.original, s.replacement) <= cfg.t_sim &&
                    model.predict(s.tokens) == static_cast<std::size_t>(src->label);
    violations += ok ? 0 : 1;
  }
  std::ostringstream d;
  d << "keywords at rank 1: " << recovered << "/" << classes << ", samples " << samples.size()
    << ", invariant violations " << violations;
  return {recovered == classes && !samples.empty() && violations == 0, d.str()};
}

Outcome atis_counts() {
  const auto data = prepare_data(source("OUTFLIP_ATIS", "atis", "atis"));
  PipelineConfig pc;
  pc.outflip.iterations = 4;
  pc.outflip.t_sim = 0.3;
  BenchmarkConfig bench;
  bench.fractions = {0.75};
  bench.selections = 3;
  bench.detectors = {DetectorKind::msp};
  ExperimentConfig ec;
  ec.data = source("OUTFLIP_ATIS", "atis", "atis");
  ec.pipeline = pc;
  ec.bench = bench;
  const auto report = run_benchmark(data, pc, bench, ec.to_json());
  // Mean over selections; a run that stopped early generated nothing later.
  std::vector<double> mean(4, 0.0);
  for (const auto& sel : report.generated[0]) {
    for (std::size_t it = 0; it < sel.size() && it < 4; ++it) mean[it] += static_cast<double>(sel[it]);
  }
  for (auto& m : mean) m /= static_cast<double>(bench.selections);
  bool decreasing = true;
  for (std::size_t it = 2; it < mean.size(); ++it) decreasing &= mean[it] <= mean[it - 1];
  std::ostringstream d;
  d << data.description << ", mean samples per iteration:";
  for (double m : mean) d << ' ' << fmt("%.1f", m);
  return {mean[0] >= 500.0 && mean[0] <= 6000.0 && decreasing, d.str()};
}

ExperimentConfig snips_config() {
  ExperimentConfig ec;
  ec.data = source("OUTFLIP_SNIPS", "snips", "snips");
  ec.pipeline.outflip.iterations = 3;
  ec.pipeline.outflip.t_sim = 0.3;
  ec.bench.fractions = {0.25};
  ec.bench.selections = 3;
  ec.bench.detectors = {DetectorKind::msp};
  return ec;
}

const PreparedData& snips_data() {
  static const PreparedData data = prepare_data(snips_config().data);
  return data;
}

const BenchmarkReport& snips_benchmark() {
  static const BenchmarkReport r = [] {
    const auto ec = snips_config();
    return run_benchmark(snips_data(), ec.pipeline, ec.bench, ec.to_json());
  }();
  return r;
}

const TransferReport& snips_transfer() {
  static const TransferReport r = [] {
    const auto ec = snips_config();
    return run_transfer(snips_data(), ec.pipeline, ec.bench, ec.student_seed, ec.student_filters, ec.to_json());
  }();
  return r;
}

Outcome gap(const std::string& better, const std::string& worse, double needed, bool transfer) {
  const Cell* a = transfer ? snips_transfer().find(0.25, better) : snips_benchmark().find(0.25, better);
  const Cell* b = transfer ? snips_transfer().find(0.25, worse) : snips_benchmark().find(0.25, worse);
  if (!a || !b) return {false, "missing cell"};
  const double delta = 100.0 * (a->mean - b->mean);
  return {delta >= needed, better + " " + fmt("%.2f", 100.0 * a->mean) + " vs " + worse + " " +
                               fmt("%.2f", 100.0 * b->mean) + fmt(" (+%.2f, needs %.0f)", delta, needed)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cli_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path given"};
  support::TempDir dir("acceptance");
  std::vector<std::string> reports;
  for (int run = 0; run < 2; ++run) {
    const auto out = dir.path() / ("report" + std::to_string(run) + ".json");
    const std::string cmd = "\"" + cli +
                            "\" benchmark --synthetic planted --fractions 0.5 --selections 2 "
                            "--detectors msp,doc,lmcl_lof --iterations 2 --candidate-fraction 0.1 -q -o \"" +
                            out.string() + "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "benchmark command failed"};
    reports.push_back(slurp(out));
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, std::to_string(reports[0].size()) + " bytes, " + (same ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  log::set_level(log::Level::warn);
  const std::string cli = argc > 1 ? argv[1] : "";
  const bool real = real_data();
  std::printf("data: %s\n", real ? "real corpora and word vectors" : "generated stand-in corpora");

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_seconds;  // 0 = none
  };
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_correctness, 60.0},
      {"flip direction identity", direction_identity, 0.0},
      {"brute-force oracle equivalence", brute_force_equivalence, 0.0},
      {"planted-keyword generation", planted_fidelity, 120.0},
      {"per-iteration sample counts", atis_counts, 0.0},
      {"OutFlip over MSP", [real] { return gap("OutFlip", "MSP", real ? 15.0 : 10.0, false); }, 1800.0},
      {"MSP+OutFlip over MSP", [] { return gap("MSP+OutFlip", "MSP", 15.0, false); }, 0.0},
      {"student transfer", [] { return gap("student+ood", "student", 10.0, true); }, 0.0},
      {"benchmark determinism", [&cli] { return cli_determinism(cli); }, 0.0},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (criteria[i].limit_seconds > 0.0 && secs >= criteria[i].limit_seconds) {
      o.pass = false;
      o.detail += fmt(", over the %.0f s budget", criteria[i].limit_seconds);
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %zu %s  %s: %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
