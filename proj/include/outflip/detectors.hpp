#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "outflip/classifier.hpp"

namespace outflip {

enum class DetectorKind { none, msp, doc, lmcl_lof };

DetectorKind parse_detector_kind(std::string_view name);
std::string_view to_string(DetectorKind kind);
// The training loss each detector expects from its classifier.
LossKind loss_for(DetectorKind kind);

struct Decision {
  static constexpr int kReject = -1;

  int label = kReject;  // in-domain class index, or kReject
  double score = 0.0;   // the detector's statistic (probability, sigmoid score, LOF)
  DetectorKind detector = DetectorKind::none;

  bool rejected() const noexcept { return label == kReject; }
};

struct DetectorParams {
  DetectorKind kind = DetectorKind::msp;
  double msp_threshold = 0.5;
  double doc_alpha = 3.0;
  std::size_t lof_k = 20;
  double lof_threshold = 1.5;
};

// Softmax, then reject when the top probability is strictly below threshold.
Decision msp_decide(std::span<const double> logits, double threshold = 0.5);

struct DocThresholds {
  std::vector<double> thresholds;  // each in [0.5, 1)
};

// Upper bound for a fitted threshold; keeps t_i strictly below 1.
inline constexpr double kDocThresholdCeiling = 1.0 - 1e-6;

// scores[i] holds class i's own sigmoid score on each class-i training
// example. Each score p is mirrored to 2 - p, sigma is the population
// standard deviation of the pooled set around 1, t = max(0.5, 1 - alpha sigma).
DocThresholds doc_fit_scores(const std::vector<std::vector<double>>& scores, double alpha = 3.0);

template <class T>
DocThresholds doc_fit(const TextModel<T>& model, std::span<const LabeledExample> train,
                      std::size_t num_classes, double alpha = 3.0);

// Reject unless some class reaches its threshold; otherwise the highest
// scoring passing class.
Decision doc_decide(std::span<const double> scores, const DocThresholds& thresholds);

// Local outlier factor over a stored reference set. Neighborhoods include
// every point tied with the k-th nearest distance.
class LofModel {
 public:
  static constexpr double kMinReachability = 1e-10;

  LofModel(Matrix<double> points, std::size_t k);

  std::size_t k() const noexcept { return k_; }
  std::size_t size() const noexcept { return points_.rows; }
  const Matrix<double>& points() const noexcept { return points_; }
  std::span<const double> k_distances() const noexcept { return k_distance_; }
  std::span<const double> densities() const noexcept { return lrd_; }

  // LOF of a query point against the stored set.
  double score(std::span<const double> query) const;
  // LOF of each stored point with itself excluded from its neighborhood.
  std::vector<double> training_scores() const;

 private:
  struct Neighborhood {
    std::vector<std::size_t> index;
    std::vector<double> distance;
    double k_distance = 0.0;
  };
  Neighborhood neighbors(std::span<const double> query, std::optional<std::size_t> self) const;
  double density(const Neighborhood& hood) const;

  Matrix<double> points_;
  std::size_t k_;
  std::vector<double> k_distance_;
  std::vector<double> lrd_;
  std::vector<Neighborhood> hoods_;
};

LofModel lof_fit(Matrix<double> features, std::size_t k);
double lof_score(const LofModel& model, std::span<const double> feature);

std::vector<double> l2_normalized(std::span<const double> v);

// Detector state fitted on in-domain training data.
struct FittedDetector {
  DetectorParams params;
  std::size_t num_in_domain = 0;
  DocThresholds doc;
  std::optional<LofModel> lof;
};

template <class T>
FittedDetector fit_detector(const TextModel<T>& model, std::span<const LabeledExample> in_domain_train,
                            std::size_t num_in_domain, const DetectorParams& params);

// Runs the base detector on the first num_in_domain logits. When the model
// carries the reserved OOD output (logits.size() > num_in_domain) and that
// output wins the argmax, the input is rejected before the detector runs.
Decision composed_decide(std::span<const double> logits, std::span<const double> features,
                         const FittedDetector& detector);

template <class T>
Decision decide(const TextModel<T>& model, const FittedDetector& detector, std::span<const TokenId> tokens);

}  // namespace outflip
