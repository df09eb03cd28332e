#include "outflip/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "outflip/kernels.hpp"

namespace outflip {

DetectorKind parse_detector_kind(std::string_view name) {
  if (name == "none" || name == "argmax") return DetectorKind::none;
  if (name == "msp") return DetectorKind::msp;
  if (name == "doc") return DetectorKind::doc;
  if (name == "lmcl" || name == "lof" || name == "lmcl_lof") return DetectorKind::lmcl_lof;
  throw Error("unknown detector: " + std::string(name));
}

std::string_view to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::none: return "none";
    case DetectorKind::msp: return "msp";
    case DetectorKind::doc: return "doc";
    case DetectorKind::lmcl_lof: return "lmcl";
  }
  return "?";
}

LossKind loss_for(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::doc: return LossKind::sigmoid_bce;
    case DetectorKind::lmcl_lof: return LossKind::lmcl;
    default: return LossKind::softmax_ce;
  }
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

Decision msp_decide(std::span<const double> logits, double threshold) {
  if (logits.empty()) throw Error("msp_decide: no logits");
  const auto p = gradnet::softmax<double>(logits);
  const std::size_t best = argmax(p);
  Decision d;
  d.detector = DetectorKind::msp;
  d.score = p[best];
  d.label = p[best] < threshold ? Decision::kReject : static_cast<int>(best);
  return d;
}

DocThresholds doc_fit_scores(const std::vector<std::vector<double>>& scores, double alpha) {
  DocThresholds out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    if (s.size() < 3) {
      log::warn("doc_fit: class " + std::to_string(i) + " has fewer than 3 examples; threshold 0.5");
      out.thresholds.push_back(0.5);
      continue;
    }
    // Mirrored points 2 - p contribute the same squared deviation from 1 as p.
    double sq = 0.0;
    for (double p : s) sq += (p - 1.0) * (p - 1.0);
    const double sigma = std::sqrt(2.0 * sq / (2.0 * static_cast<double>(s.size())));
    out.thresholds.push_back(std::min(std::max(0.5, 1.0 - alpha * sigma), kDocThresholdCeiling));
  }
  return out;
}

template <class T>
DocThresholds doc_fit(const TextModel<T>& model, std::span<const LabeledExample> train,
                      std::size_t num_classes, double alpha) {
  if (model.loss_kind() != LossKind::sigmoid_bce) {
    throw Error("doc_fit: the classifier must be trained with the sigmoid loss");
  }
  std::vector<std::vector<double>> scores(num_classes);
  for (const auto& ex : train) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_classes) continue;
    const auto z = model.logits(ex.tokens);
    scores[ex.label].push_back(static_cast<double>(gradnet::sigmoid<T>(z[ex.label])));
  }
  return doc_fit_scores(scores, alpha);
}

Decision doc_decide(std::span<const double> scores, const DocThresholds& thresholds) {
  if (scores.size() != thresholds.thresholds.size()) throw Error("doc_decide: length mismatch");
  Decision d;
  d.detector = DetectorKind::doc;
  d.score = scores.empty() ? 0.0 : *std::max_element(scores.begin(), scores.end());
  double best = -1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= thresholds.thresholds[i] && scores[i] > best) {
      best = scores[i];
      d.label = static_cast<int>(i);
    }
  }
  if (!d.rejected()) d.score = best;
  return d;
}

// ---------------------------------------------------------------------------
// LOF

LofModel::LofModel(Matrix<double> points, std::size_t k) : points_(std::move(points)), k_(k) {
  if (k_ == 0) throw Error("lof: k must be positive");
  if (points_.rows < k_ + 1) throw Error("lof: need at least k + 1 reference points");
  const std::size_t n = points_.rows;
  hoods_.reserve(n);
  k_distance_.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    hoods_.push_back(neighbors(points_.row(p), p));
    k_distance_[p] = hoods_.back().k_distance;
  }
  lrd_.resize(n);
  for (std::size_t p = 0; p < n; ++p) lrd_[p] = density(hoods_[p]);
}

LofModel::Neighborhood LofModel::neighbors(std::span<const double> query,
                                           std::optional<std::size_t> self) const {
  const std::size_t n = points_.rows;
  std::vector<double> dist(n);
  for (std::size_t o = 0; o < n; ++o) dist[o] = std::sqrt(kernels::squared_distance(query, points_.row(o)));
  std::vector<double> others;
  others.reserve(n);
  for (std::size_t o = 0; o < n; ++o) {
    if (!self || o != *self) others.push_back(dist[o]);
  }
  std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k_ - 1), others.end());
  Neighborhood hood;
  hood.k_distance = others[k_ - 1];
  for (std::size_t o = 0; o < n; ++o) {
    if (self && o == *self) continue;
    if (dist[o] <= hood.k_distance) {
      hood.index.push_back(o);
      hood.distance.push_back(dist[o]);
    }
  }
  return hood;
}

double LofModel::density(const Neighborhood& hood) const {
  double reach = 0.0;
  for (std::size_t j = 0; j < hood.index.size(); ++j) {
    reach += std::max(k_distance_[hood.index[j]], hood.distance[j]);
  }
  reach /= static_cast<double>(hood.index.size());
  return 1.0 / std::max(reach, kMinReachability);
}

double LofModel::score(std::span<const double> query) const {
  if (query.size() != points_.cols) throw Error("lof: query dimension mismatch");
  const auto hood = neighbors(query, std::nullopt);
  const double own = density(hood);
  double ratio = 0.0;
  for (auto o : hood.index) ratio += lrd_[o];
  return ratio / (static_cast<double>(hood.index.size()) * own);
}

std::vector<double> LofModel::training_scores() const {
  std::vector<double> out(points_.rows);
  for (std::size_t p = 0; p < points_.rows; ++p) {
    double ratio = 0.0;
    for (auto o : hoods_[p].index) ratio += lrd_[o];
    out[p] = ratio / (static_cast<double>(hoods_[p].index.size()) * lrd_[p]);
  }
  return out;
}

LofModel lof_fit(Matrix<double> features, std::size_t k) { return LofModel(std::move(features), k); }

double lof_score(const LofModel& model, std::span<const double> feature) { return model.score(feature); }

std::vector<double> l2_normalized(std::span<const double> v) {
  const double n = std::sqrt(kernels::dot(v, v));
  std::vector<double> out(v.begin(), v.end());
  if (n > 0.0) {
    for (auto& x : out) x /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composition

template <class T>
FittedDetector fit_detector(const TextModel<T>& model, std::span<const LabeledExample> in_domain_train,
                            std::size_t num_in_domain, const DetectorParams& params) {
  FittedDetector fd;
  fd.params = params;
  fd.num_in_domain = num_in_domain;
  switch (params.kind) {
    case DetectorKind::doc: fd.doc = doc_fit(model, in_domain_train, num_in_domain, params.doc_alpha); break;
    case DetectorKind::lmcl_lof: {
      std::vector<std::vector<double>> rows;
      for (const auto& ex : in_domain_train) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= num_in_domain) continue;
        const auto f = model.features(ex.tokens);
        rows.push_back(l2_normalized(std::vector<double>(f.begin(), f.end())));
      }
      if (rows.empty()) throw Error("fit_detector: no in-domain features for LOF");
      Matrix<double> m(rows.size(), rows.front().size());
      for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
      const std::size_t k = std::min(params.lof_k, m.rows - 1);
      if (k < params.lof_k) log::warn("fit_detector: LOF k reduced to " + std::to_string(k));
      fd.lof.emplace(std::move(m), k);
      break;
    }
    default: break;
  }
  return fd;
}

Decision composed_decide(std::span<const double> logits, std::span<const double> features,
                         const FittedDetector& detector) {
  const std::size_t n = detector.num_in_domain;
  if (logits.size() < n) throw Error("composed_decide: fewer logits than in-domain classes");
  if (logits.size() > n) {
    const std::size_t best = argmax(logits);
    if (best >= n) {
      Decision d;
      d.detector = detector.params.kind;
      d.score = logits[best];
      return d;
    }
  }
  const auto in_domain = logits.first(n);
  switch (detector.params.kind) {
    case DetectorKind::none: {
      Decision d;
      d.label = static_cast<int>(argmax(in_domain));
      d.score = in_domain[d.label];
      return d;
    }
    case DetectorKind::msp: return msp_decide(in_domain, detector.params.msp_threshold);
    case DetectorKind::doc: {
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) scores[i] = gradnet::sigmoid(in_domain[i]);
      return doc_decide(scores, detector.doc);
    }
    case DetectorKind::lmcl_lof: {
      if (!detector.lof) throw Error("composed_decide: LOF detector is not fitted");
      Decision d;
      d.detector = DetectorKind::lmcl_lof;
      d.score = detector.lof->score(l2_normalized(features));
      d.label = d.score > detector.params.lof_threshold ? Decision::kReject
                                                          : static_cast<int>(argmax(in_domain));
      return d;
    }
  }
  return {};
}

template <class T>
Decision decide(const TextModel<T>& model, const FittedDetector& detector, std::span<const TokenId> tokens) {
  const auto z = model.logits(tokens);
  std::vector<double> logits(z.begin(), z.end());
  std::vector<double> features;
  if (detector.params.kind == DetectorKind::lmcl_lof) {
    const auto f = model.features(tokens);
    features.assign(f.begin(), f.end());
  }
  return composed_decide(logits, features, detector);
}

#define OUTFLIP_INSTANTIATE(T)                                                                         \
  template DocThresholds doc_fit<T>(const TextModel<T>&, std::span<const LabeledExample>, std::size_t, \
                                    double);                                                           \
  template FittedDetector fit_detector<T>(const TextModel<T>&, std::span<const LabeledExample>,        \
                                          std::size_t, const DetectorParams&);                         \
  template Decision decide<T>(const TextModel<T>&, const FittedDetector&, std::span<const TokenId>);

OUTFLIP_INSTANTIATE(float)
OUTFLIP_INSTANTIATE(double)

#undef OUTFLIP_INSTANTIATE

}  // namespace outflip
