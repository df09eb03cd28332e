#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "outflip/classifier.hpp"
#include "outflip/embeddings.hpp"
#include "outflip/gradnet.hpp"
#include "outflip/harness.hpp"

namespace support {

using namespace outflip;
using gradnet::Matrix;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("outflip_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& body) const {
    const auto p = path_ / name;
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p) << body;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> uniform_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Table with the three reserved rows (PAD and MASK zero, UNK random)
// followed by `words` random pretrained rows.
inline EmbeddingTable random_table(std::size_t words, std::size_t dim, std::mt19937_64& rng) {
  const std::size_t rows = words + Vocab::kReservedCount;
  std::vector<double> values(rows * dim, 0.0);
  std::vector<bool> pretrained(rows, true);
  for (TokenId r = 0; r < Vocab::kReservedCount; ++r) pretrained[r] = false;
  auto v = uniform_vector(rows * dim, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    if (r == Vocab::kPad || r == Vocab::kMask) continue;
    std::copy(v.begin() + r * dim, v.begin() + (r + 1) * dim, values.begin() + r * dim);
  }
  return EmbeddingTable(rows, dim, std::move(values), std::move(pretrained));
}

inline EmbeddingTable table_from_rows(const std::vector<std::vector<double>>& word_rows) {
  const std::size_t dim = word_rows.front().size();
  const std::size_t rows = word_rows.size() + Vocab::kReservedCount;
  std::vector<double> values(rows * dim, 0.0);
  std::vector<bool> pretrained(rows, true);
  for (TokenId r = 0; r < Vocab::kReservedCount; ++r) pretrained[r] = false;
  for (std::size_t i = 0; i < word_rows.size(); ++i) {
    std::copy(word_rows[i].begin(), word_rows[i].end(), values.begin() + (i + Vocab::kReservedCount) * dim);
  }
  // UNK gets a small fixed row so it is not zero.
  for (std::size_t c = 0; c < dim; ++c) values[Vocab::kUnk * dim + c] = 0.01 * static_cast<double>(c + 1);
  return EmbeddingTable(rows, dim, std::move(values), std::move(pretrained));
}

inline std::vector<TokenId> random_sentence(std::size_t length, std::size_t rows, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> pick(Vocab::kReservedCount, static_cast<TokenId>(rows - 1));
  std::vector<TokenId> s(length);
  for (auto& t : s) t = pick(rng);
  return s;
}

template <class T>
CnnClassifier<T> tiny_cnn(const EmbeddingTable& table, std::size_t classes, LossKind loss, std::uint64_t seed,
                          bool trainable_embedding = true, std::vector<std::size_t> widths = {2, 3},
                          std::size_t filters = 3) {
  CnnConfig c;
  c.vocab_size = table.rows();
  c.embedding_dim = table.dim();
  c.kernel_widths = std::move(widths);
  c.filters = filters;
  c.num_classes = classes;
  c.loss = loss;
  c.trainable_embedding = trainable_embedding;
  c.seed = seed;
  CnnClassifier<T> model(c, table);
  // Nonzero biases so every bias gradient path is exercised.
  std::mt19937_64 rng(seed);
  for (auto& p : model.params()) {
    if (p.name.find("bias") != std::string::npos) {
      for (auto& v : p.value) v = static_cast<T>(std::uniform_real_distribution<double>(-0.1, 0.1)(rng));
    }
  }
  return model;
}

// Linear bag-of-embeddings probe: logits = W (sum_i e_i) + b, softmax loss.
// Every quantity has a closed form, so importance and gradient fixtures can
// be set by hand.
class BagModel final : public TextModel<double> {
 public:
  BagModel(const EmbeddingTable& table, std::size_t classes)
      : emb_("embedding", {table.rows(), table.dim()}, false),
        w_("dense.weight", {classes, table.dim()}),
        b_("dense.bias", {classes}),
        classes_(classes),
        dim_(table.dim()) {
    std::copy(table.values().begin(), table.values().end(), emb_.value.begin());
  }

  Param<double>& weight() { return w_; }
  Param<double>& bias() { return b_; }
  const Param<double>& weight() const { return w_; }

  std::size_t num_classes() const override { return classes_; }
  std::size_t embedding_dim() const override { return dim_; }
  LossKind loss_kind() const override { return LossKind::softmax_ce; }
  const Param<double>& embedding() const override { return emb_; }

  std::vector<double> logits(std::span<const TokenId> tokens) const override { return logits_embedded(rows(tokens)); }
  std::vector<double> logits_embedded(const Matrix<double>& x) const override {
    const auto h = pooled(x);
    std::vector<double> z(classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
      z[c] = b_.value[c];
      for (std::size_t j = 0; j < dim_; ++j) z[c] += w_.value[c * dim_ + j] * h[j];
    }
    return z;
  }
  std::vector<double> features(std::span<const TokenId> tokens) const override { return pooled(rows(tokens)); }
  double loss(std::span<const TokenId> tokens, std::size_t label) const override {
    return loss_embedded(rows(tokens), label);
  }
  double loss_embedded(const Matrix<double>& x, std::size_t label) const override {
    const auto z = logits_embedded(x);
    std::vector<double> g(classes_);
    return gradnet::ops::softmax_ce<double>(z, label, g);
  }
  double input_gradient(std::span<const TokenId> tokens, std::size_t label, Matrix<double>& grad) const override {
    const auto z = logits(tokens);
    std::vector<double> g(classes_);
    const double l = gradnet::ops::softmax_ce<double>(z, label, g);
    grad = Matrix<double>(tokens.size(), dim_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == Vocab::kPad) continue;
      for (std::size_t j = 0; j < dim_; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes_; ++c) s += g[c] * w_.value[c * dim_ + j];
        grad(i, j) = s;
      }
    }
    return l;
  }
  double accumulate_gradient(std::span<const TokenId> tokens, std::size_t label, double scale) override {
    const auto h = features(tokens);
    const auto z = logits(tokens);
    std::vector<double> g(classes_);
    const double l = gradnet::ops::softmax_ce<double>(z, label, g);
    for (std::size_t c = 0; c < classes_; ++c) {
      b_.grad[c] += scale * g[c];
      for (std::size_t j = 0; j < dim_; ++j) w_.grad[c * dim_ + j] += scale * g[c] * h[j];
    }
    return l;
  }
  std::vector<Param<double>*> parameters() override { return {&emb_, &w_, &b_}; }

 private:
  Matrix<double> rows(std::span<const TokenId> tokens) const {
    Matrix<double> x(tokens.size(), dim_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      for (std::size_t j = 0; j < dim_; ++j) x(i, j) = emb_.value[tokens[i] * dim_ + j];
    }
    return x;
  }
  std::vector<double> pooled(const Matrix<double>& x) const {
    std::vector<double> h(dim_, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) h[j] += x(i, j);
    }
    return h;
  }

  Param<double> emb_, w_, b_;
  std::size_t classes_, dim_;
};

// ---------------------------------------------------------------------------
// Flip oracles

// Closed-form input gradient row of the bag model: W^T (softmax(z) - onehot).
inline std::vector<double> bag_gradient(const BagModel& m, std::span<const TokenId> tokens, std::size_t label) {
  const auto z = m.logits(tokens);
  auto p = gradnet::softmax<double>(z);
  p[label] -= 1.0;
  const std::size_t d = m.embedding_dim();
  std::vector<double> g(d, 0.0);
  for (std::size_t c = 0; c < p.size(); ++c)
    for (std::size_t k = 0; k < d; ++k) g[k] += m.weight().value[c * d + k] * p[c];
  return g;
}

inline double dot_row(const EmbeddingTable& t, TokenId w, const std::vector<double>& g) {
  double s = 0.0;
  for (std::size_t k = 0; k < t.dim(); ++k) s += t.row(w)[k] * g[k];
  return s;
}

inline double cosine(const EmbeddingTable& t, TokenId a, TokenId b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < t.dim(); ++k) {
    ab += t.row(a)[k] * t.row(b)[k];
    aa += t.row(a)[k] * t.row(a)[k];
    bb += t.row(b)[k] * t.row(b)[k];
  }
  return ab / std::sqrt(aa * bb);
}

inline bool eligible(const EmbeddingTable& t, TokenId w) {
  return w >= Vocab::kReservedCount && t.is_pretrained(w) && t.norm(w) > 0.0;
}

// Score every word, sort by (score, id), keep the prefix, filter.
inline std::vector<TokenId> brute_candidates(const EmbeddingTable& t, const std::vector<double>& g, TokenId current,
                                             double frac, double t_sim) {
  std::vector<std::pair<double, TokenId>> all;
  for (TokenId w = 0; w < t.rows(); ++w)
    if (eligible(t, w)) all.push_back({dot_row(t, w, g), w});
  std::sort(all.begin(), all.end());
  const auto prefix = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(frac * t.rows() - 1e-9)));
  all.resize(std::min(all.size(), prefix));
  std::vector<TokenId> out;
  for (auto [s, w] : all)
    if (w != current && cosine(t, current, w) <= t_sim) out.push_back(w);
  return out;
}

struct BruteFlip {
  std::size_t position = 0;
  TokenId word = 0;
  double score = 0.0;
};

// Every (position, word) pair with cosine >= t_sim; largest first-order
// loss increase, first found on ties.
inline std::optional<BruteFlip> brute_hotflip(const EmbeddingTable& t, std::span<const TokenId> s,
                                              const std::vector<std::vector<double>>& g, double t_sim) {
  std::optional<BruteFlip> best;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] >= Vocab::kReservedCount && t.norm(s[i]) > 0.0)) continue;
    for (TokenId b = 0; b < t.rows(); ++b) {
      if (b == s[i] || !eligible(t, b) || cosine(t, s[i], b) < t_sim) continue;
      const double score = dot_row(t, b, g[i]) - dot_row(t, s[i], g[i]);
      if (!best || score > best->score) best = BruteFlip{i, b, score};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Finite differences

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), gradnet::kGradCheckFloor});
}

// Max relative error between `analytic` and central differences of f at x.
inline double fd_compare(std::vector<double>& x, const std::function<double()>& f,
                         const std::vector<double>& analytic, double eps = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f();
    x[i] = saved - eps;
    const double down = f();
    x[i] = saved;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

struct PrimitiveCheck {
  std::string name;
  double max_rel_error = 0.0;
};

// Every primitive under a random linear read-out L = r . out (or the loss
// itself), each input compared against central differences.
inline std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed) {
  namespace ops = gradnet::ops;
  std::mt19937_64 rng(seed);
  std::vector<PrimitiveCheck> out;

  {  // gather + scatter_add
    const std::size_t rows = 7, d = 4;
    Param<double> table("t", {rows, d});
    table.value = uniform_vector(rows * d, rng);
    const std::vector<TokenId> tokens{3, 5, 3, 0, 6, 2};
    const auto r = uniform_vector(tokens.size() * d, rng);
    auto f = [&] {
      Matrix<double> m;
      ops::gather(table, tokens, m);
      double s = 0;
      for (std::size_t i = 0; i < m.data.size(); ++i) s += r[i] * m.data[i];
      return s;
    };
    Matrix<double> g(tokens.size(), d);
    g.data = r;
    table.zero_grad();
    ops::scatter_add(tokens, g, table);
    // PAD and MASK rows are held at zero in the model, so scatter skips them.
    std::vector<double> analytic = table.grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < table.value.size(); ++i) {
      const std::size_t row = i / d;
      if (row == Vocab::kPad || row == Vocab::kMask) continue;
      const double saved = table.value[i];
      table.value[i] = saved + 1e-6;
      const double up = f();
      table.value[i] = saved - 1e-6;
      const double down = f();
      table.value[i] = saved;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / 2e-6));
    }
    out.push_back({"embedding gather", worst});
  }

  {  // conv1d
    const std::size_t L = 6, d = 3, w = 3, F = 4;
    Matrix<double> x(L, d);
    x.data = uniform_vector(L * d, rng);
    auto W = uniform_vector(F * w * d, rng);
    auto b = uniform_vector(F, rng);
    const auto r = uniform_vector((L - w + 1) * F, rng);
    auto f = [&] {
      Matrix<double> o;
      ops::conv1d_forward<double>(x, W, b, w, F, o);
      double s = 0;
      for (std::size_t i = 0; i < o.data.size(); ++i) s += r[i] * o.data[i];
      return s;
    };
    Matrix<double> g(L - w + 1, F);
    g.data = r;
    std::vector<double> gW(W.size(), 0.0), gb(F, 0.0);
    Matrix<double> gx(L, d);
    ops::conv1d_backward<double>(x, W, w, F, g, gW, gb, &gx);
    double worst = fd_compare(W, f, gW);
    worst = std::max(worst, fd_compare(b, f, gb));
    worst = std::max(worst, fd_compare(x.data, f, gx.data));
    out.push_back({"convolution", worst});
  }

  {  // max over time
    const std::size_t L = 5, F = 4;
    Matrix<double> in(L, F);
    in.data = uniform_vector(L * F, rng);
    const auto r = uniform_vector(F, rng);
    auto f = [&] {
      std::vector<double> o(F);
      std::vector<std::size_t> am(F);
      ops::max_over_time_forward<double>(in, o, am);
      double s = 0;
      for (std::size_t i = 0; i < F; ++i) s += r[i] * o[i];
      return s;
    };
    std::vector<double> o(F);
    std::vector<std::size_t> am(F);
    ops::max_over_time_forward<double>(in, o, am);
    Matrix<double> g(L, F);
    ops::max_over_time_backward<double>(am, r, g);
    out.push_back({"max-pool", fd_compare(in.data, f, g.data)});
  }

  {  // relu
    auto in = uniform_vector(9, rng);
    const auto r = uniform_vector(9, rng);
    auto f = [&] {
      std::vector<double> o(in.size());
      ops::relu_forward<double>(in, o);
      double s = 0;
      for (std::size_t i = 0; i < o.size(); ++i) s += r[i] * o[i];
      return s;
    };
    std::vector<double> g(in.size(), 0.0);
    ops::relu_backward<double>(in, r, g);
    out.push_back({"relu", fd_compare(in, f, g)});
  }

  {  // dense
    const std::size_t C = 3, H = 5;
    auto W = uniform_vector(C * H, rng), b = uniform_vector(C, rng), h = uniform_vector(H, rng);
    const auto r = uniform_vector(C, rng);
    auto f = [&] {
      std::vector<double> o(C);
      ops::dense_forward<double>(W, b, h, o);
      double s = 0;
      for (std::size_t i = 0; i < C; ++i) s += r[i] * o[i];
      return s;
    };
    std::vector<double> gW(W.size(), 0.0), gb(C, 0.0), gh(H, 0.0);
    ops::dense_backward<double>(W, h, r, gW, gb, gh);
    double worst = fd_compare(W, f, gW);
    worst = std::max(worst, fd_compare(b, f, gb));
    worst = std::max(worst, fd_compare(h, f, gh));
    out.push_back({"dense", worst});
  }

  {  // cosine head
    const std::size_t C = 3, H = 5;
    auto W = uniform_vector(C * H, rng), h = uniform_vector(H, rng);
    const auto r = uniform_vector(C, rng);
    auto f = [&] {
      std::vector<double> o(C);
      ops::cosine_dense_forward<double>(W, h, o);
      double s = 0;
      for (std::size_t i = 0; i < C; ++i) s += r[i] * o[i];
      return s;
    };
    std::vector<double> cos(C), gW(W.size(), 0.0), gh(H, 0.0);
    ops::cosine_dense_forward<double>(W, h, cos);
    ops::cosine_dense_backward<double>(W, h, cos, r, gW, gh);
    double worst = fd_compare(W, f, gW);
    worst = std::max(worst, fd_compare(h, f, gh));
    out.push_back({"cosine head", worst});
  }

  {  // losses
    auto z = uniform_vector(4, rng, -3.0, 3.0);
    std::vector<double> g(4);
    ops::softmax_ce<double>(z, 2, g);
    auto f1 = [&] {
      std::vector<double> tmp(4);
      return ops::softmax_ce<double>(z, 2, tmp);
    };
    out.push_back({"softmax cross-entropy", fd_compare(z, f1, g)});

    ops::sigmoid_bce<double>(z, 1, g);
    auto f2 = [&] {
      std::vector<double> tmp(4);
      return ops::sigmoid_bce<double>(z, 1, tmp);
    };
    out.push_back({"sigmoid cross-entropy", fd_compare(z, f2, g)});

    auto c = uniform_vector(4, rng);
    ops::margin_softmax<double>(c, 3, 30.0, 0.35, g);
    auto f3 = [&] {
      std::vector<double> tmp(4);
      return ops::margin_softmax<double>(c, 3, 30.0, 0.35, tmp);
    };
    out.push_back({"margin softmax", fd_compare(c, f3, g)});
  }

  {  // lmcl over a batch
    const std::size_t B = 4, C = 3, H = 5;
    Matrix<double> feats(B, H), weights(C, H);
    feats.data = uniform_vector(B * H, rng);
    weights.data = uniform_vector(C * H, rng);
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    // s = 4 keeps the loss curvature moderate for the difference quotient.
    auto f = [&] { return gradnet::lmcl_loss<double>(feats, weights, labels, 4.0, 0.35); };
    Matrix<double> gf(B, H), gw(C, H);
    gradnet::lmcl_loss<double>(feats, weights, labels, 4.0, 0.35, &gf, &gw);
    double worst = fd_compare(feats.data, f, gf.data);
    worst = std::max(worst, fd_compare(weights.data, f, gw.data));
    out.push_back({"large-margin cosine loss", worst});
  }
  return out;
}

// Independent brute-force LOF: full sorts, no shared code with the library.
inline std::vector<double> brute_force_lof(const std::vector<std::vector<double>>& points,
                                           const std::vector<std::vector<double>>& queries, std::size_t k) {
  const std::size_t n = points.size();
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  struct Hood {
    std::vector<std::size_t> idx;
    std::vector<double> d;
    double kd = 0.0;
  };
  auto hood_of = [&](const std::vector<double>& q, long self) {
    std::vector<double> all;
    for (std::size_t o = 0; o < n; ++o) {
      if (static_cast<long>(o) != self) all.push_back(dist(q, points[o]));
    }
    std::sort(all.begin(), all.end());
    Hood h;
    h.kd = all[k - 1];
    for (std::size_t o = 0; o < n; ++o) {
      if (static_cast<long>(o) == self) continue;
      const double d = dist(q, points[o]);
      if (d <= h.kd) {
        h.idx.push_back(o);
        h.d.push_back(d);
      }
    }
    return h;
  };
  std::vector<Hood> hoods;
  for (std::size_t p = 0; p < n; ++p) hoods.push_back(hood_of(points[p], static_cast<long>(p)));
  auto lrd = [&](const Hood& h) {
    double s = 0.0;
    for (std::size_t j = 0; j < h.idx.size(); ++j) s += std::max(hoods[h.idx[j]].kd, h.d[j]);
    s /= static_cast<double>(h.idx.size());
    return 1.0 / std::max(s, 1e-10);
  };
  std::vector<double> dens(n);
  for (std::size_t p = 0; p < n; ++p) dens[p] = lrd(hoods[p]);
  std::vector<double> scores;
  for (const auto& q : queries) {
    const auto h = hood_of(q, -1);
    const double own = lrd(h);
    double s = 0.0;
    for (auto o : h.idx) s += dens[o];
    scores.push_back(s / (static_cast<double>(h.idx.size()) * own));
  }
  return scores;
}

// Per-class F1 from an explicit (k+1) x (k+1) confusion matrix.
inline double confusion_macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t known) {
  const std::size_t c = known + 1;
  std::vector<std::vector<std::size_t>> m(c, std::vector<std::size_t>(c, 0));
  auto cls = [&](int v) { return v >= 0 && static_cast<std::size_t>(v) < known ? static_cast<std::size_t>(v) : known; };
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[cls(truth[i])][cls(pred[i])];
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    std::size_t col = 0, row = 0;
    for (std::size_t i = 0; i < c; ++i) {
      col += m[i][j];
      row += m[j][i];
    }
    const double p = col ? static_cast<double>(m[j][j]) / static_cast<double>(col) : 0.0;
    const double r = row ? static_cast<double>(m[j][j]) / static_cast<double>(row) : 0.0;
    total += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  std::size_t ood_mass = 0;
  for (std::size_t i = 0; i < c; ++i) ood_mass += m[known][i] + m[i][known];
  return total / static_cast<double>(ood_mass ? c : known);
}

// ---------------------------------------------------------------------------
// Planted-keyword corpus with a trained reference CNN

struct Planted {
  PreparedData data;
  std::optional<Model> model;
  TrainRecord record;
};

inline Planted planted_model(std::uint64_t seed = 3) {
  Planted p;
  DataSource src;
  src.synthetic = "planted";
  p.data = prepare_data(src);
  CnnConfig mc;
  mc.vocab_size = p.data.table->rows();
  mc.embedding_dim = p.data.table->dim();
  mc.num_classes = p.data.dataset.num_labels();
  mc.seed = seed;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.learning_rate = 1e-2;
  tc.seed = seed + 1;
  auto trained = train_classifier<float>(mc, *p.data.table, p.data.dataset.train, p.data.dataset.dev, tc);
  p.model.emplace(std::move(trained.model));
  p.record = std::move(trained.record);
  return p;
}

}  // namespace support
